"""SGD and Adam acting on column-sparse gradients.

The query projection is large (256 x 2**18 by default) while one batch only
touches the columns of the features it contains.  Both optimizers update
only the columns that can change, which gives exactly the result of the
dense update:

* SGD: a zero gradient column is a no-op.
* Adam: a column whose moments are still zero (never touched) gets
  ``0 / (0 + eps) = 0``.  Columns touched at least once keep being updated on
  later steps from their decaying moments, as dense Adam does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import ColumnGradient


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.name!r}")

    def as_dict(self) -> dict:
        if self.name == "sgd":
            return {"name": "sgd"}
        return {"name": "adam", "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, param: np.ndarray, grad: ColumnGradient) -> None:
        param[:, grad.columns] -= self.lr * grad.block


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        # sorted union of every column seen so far
        self.active = np.empty(0, dtype=np.int64)

    def step(self, param: np.ndarray, grad: ColumnGradient) -> None:
        if self.m is None:
            # np.zeros is lazily backed, untouched columns cost no memory
            self.m = np.zeros(param.shape, order="F")
            self.v = np.zeros(param.shape, order="F")
        self.t += 1
        self.active = np.union1d(self.active, grad.columns)
        cols = self.active

        g = np.zeros((param.shape[0], cols.size))
        g[:, np.searchsorted(cols, grad.columns)] = grad.block

        m = self.m[:, cols]
        v = self.v[:, cols]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        self.m[:, cols] = m
        self.v[:, cols] = v

        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        param[:, cols] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: OptimizerConfig, lr: float):
    if config.name == "sgd":
        return SGD(lr)
    return Adam(lr, config.beta1, config.beta2, config.eps)
