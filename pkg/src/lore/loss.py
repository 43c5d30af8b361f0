"""Tier-weighted contrastive loss and its analytic gradient.

For one query with cosine similarities ``s_k`` the logits are shifted per
tier::

    z_k = s_k / tau              (P)
    z_k = s_k / tau + log(beta)  (N1)
    z_k = s_k / tau + log(alpha) (N2)

Each positive ``k`` is scored against the negatives only (other positives do
not enter its denominator)::

    p_k = exp(z_k) / (sum_{t in N1 u N2} exp(z_t) + exp(z_k))

and the loss is ``-mean_k log p_k`` over the positives.  With
``alpha == beta == 1`` this is plain InfoNCE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoPositives, NotAPositive
from .tiers import TierLabel

_TIER_CODE = {TierLabel.P: 0, TierLabel.N1: 1, TierLabel.N2: 2}


@dataclass(frozen=True)
class LossConfig:
    """Temperature and tier weights; ``beta > alpha > 0`` is enforced.

    Use :meth:`unchecked` (or :meth:`infonce`) for the ``alpha == beta``
    baseline.
    """

    tau: float = 0.05
    alpha: float = 1.0
    beta: float = 3.0

    def __post_init__(self):
        _check_positive(self)
        if not self.beta > self.alpha:
            raise ValueError(f"need beta > alpha, got alpha={self.alpha}, beta={self.beta}")

    @classmethod
    def unchecked(cls, tau: float, alpha: float, beta: float) -> "LossConfig":
        """Skip the ordering check (positivity is still required)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "tau", float(tau))
        object.__setattr__(obj, "alpha", float(alpha))
        object.__setattr__(obj, "beta", float(beta))
        _check_positive(obj)
        return obj

    @classmethod
    def infonce(cls, tau: float = 0.05) -> "LossConfig":
        return cls.unchecked(tau, 1.0, 1.0)

    def as_dict(self) -> dict:
        return {"tau": self.tau, "alpha": self.alpha, "beta": self.beta}


def _check_positive(cfg: LossConfig) -> None:
    for name in ("tau", "alpha", "beta"):
        v = getattr(cfg, name)
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be a positive finite number, got {v}")


@dataclass(frozen=True, eq=False)
class ScoredCandidates:
    """Raw similarities of one query against its candidates, with tiers."""

    tiers: tuple[TierLabel, ...]
    sims: np.ndarray

    def __post_init__(self):
        tiers = tuple(TierLabel(t) for t in self.tiers)
        sims = np.asarray(self.sims, dtype=np.float64)
        if sims.shape != (len(tiers),):
            raise ValueError("tiers and sims must be parallel")
        if not tiers:
            raise ValueError("at least one candidate is required")
        if np.any(np.abs(sims) > 1.0 + 1e-9) or not np.all(np.isfinite(sims)):
            raise ValueError("similarities must lie in [-1, 1]")
        object.__setattr__(self, "tiers", tiers)
        object.__setattr__(self, "sims", sims)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[TierLabel, float]]) -> "ScoredCandidates":
        return cls(tuple(t for t, _ in pairs), np.array([s for _, s in pairs], dtype=np.float64))

    @property
    def codes(self) -> np.ndarray:
        return np.array([_TIER_CODE[t] for t in self.tiers])

    def __len__(self) -> int:
        return len(self.tiers)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors, i.e. their dot product."""
    return float(np.dot(a, b))


def adjusted_similarity(s: float, tier: TierLabel, config: LossConfig) -> float:
    z = s / config.tau
    tier = TierLabel(tier)
    if tier is TierLabel.N1:
        return z + math.log(config.beta)
    if tier is TierLabel.N2:
        return z + math.log(config.alpha)
    return z


def adjusted_logits(scored: ScoredCandidates, config: LossConfig) -> np.ndarray:
    offsets = np.array([0.0, math.log(config.beta), math.log(config.alpha)])
    return scored.sims / config.tau + offsets[scored.codes]


def log_probabilities_from_logits(logits: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """``log p_k`` for every positive, given already-adjusted logits.

    Row ``k`` of the working matrix holds the positive's own logit followed
    by every negative logit; each row is max-shifted before exponentiation.
    The max term contributes exactly 1, so the remainder goes through
    ``log1p`` and tiny losses keep their relative precision.
    """
    logits = np.asarray(logits, dtype=np.float64)
    pos = logits[positive]
    neg = logits[~positive]
    rows = np.concatenate([pos[:, None], np.broadcast_to(neg, (pos.size, neg.size))], axis=1)
    top = rows.argmax(axis=1)
    m = rows[np.arange(pos.size), top]
    e = np.exp(rows - m[:, None])
    e[np.arange(pos.size), top] = 0.0
    return (pos - m) - np.log1p(e.sum(axis=1))


def _positive_mask(scored: ScoredCandidates) -> np.ndarray:
    return scored.codes == 0


def positive_probability(scored: ScoredCandidates, positive_index: int, config: LossConfig) -> float:
    if scored.tiers[positive_index] is not TierLabel.P:
        raise NotAPositive(f"candidate {positive_index} is {scored.tiers[positive_index]}, not P")
    mask = _positive_mask(scored)
    logp = log_probabilities_from_logits(adjusted_logits(scored, config), mask)
    order = int(np.count_nonzero(mask[:positive_index]))
    return float(np.exp(logp[order]))


def positive_probabilities(scored: ScoredCandidates, config: LossConfig) -> np.ndarray:
    """Probabilities for every positive, in candidate order."""
    mask = _positive_mask(scored)
    return np.exp(log_probabilities_from_logits(adjusted_logits(scored, config), mask))


def query_loss(scored: ScoredCandidates, config: LossConfig) -> float:
    mask = _positive_mask(scored)
    if not mask.any():
        raise NoPositives("query has no positive candidates")
    logp = log_probabilities_from_logits(adjusted_logits(scored, config), mask)
    return float(-logp.mean())


def loss_and_grad(scored: ScoredCandidates, config: LossConfig) -> tuple[float, np.ndarray]:
    """Loss and ``dL/ds_k`` in a single pass.

    For positive ``k`` the softmax row gives ``d(-log p_k)/dz_k = -(1 - p_k)``
    and ``d(-log p_k)/dz_t = q_kt`` for each negative ``t`` (its share of
    row ``k``).  ``1 - p_k`` is taken as ``sum_t q_kt`` rather than by
    subtraction, which would cancel to zero when ``p_k`` is near 1.  A negative collects ``q_kt`` from every positive.  All
    terms carry ``1/|P|`` from the mean and ``1/tau`` from the scaling.
    """
    mask = _positive_mask(scored)
    n_pos = int(mask.sum())
    if n_pos == 0:
        raise NoPositives("query has no positive candidates")
    logits = adjusted_logits(scored, config)
    logp = log_probabilities_from_logits(logits, mask)
    pos = logits[mask]
    neg = logits[~mask]
    lse = pos - logp
    # q[k, t] = exp(z_t - lse_k)
    q = np.exp(neg[None, :] - lse[:, None])
    grad_z = np.zeros_like(logits)
    grad_z[mask] = -q.sum(axis=1)
    grad_z[~mask] = q.sum(axis=0)
    grad_s = grad_z / (n_pos * config.tau)
    return float(-logp.mean()), grad_s


def loss_grad_sims(scored: ScoredCandidates, config: LossConfig) -> np.ndarray:
    return loss_and_grad(scored, config)[1]


def batch_loss(batch: Sequence[ScoredCandidates], config: LossConfig) -> float:
    """Arithmetic mean of per-query losses."""
    if not batch:
        raise ValueError("empty batch")
    total = 0.0
    for i, scored in enumerate(batch):
        try:
            total += query_loss(scored, config)
        except NoPositives:
            raise NoPositives(f"batch element {i} has no positive candidates", index=i) from None
    return total / len(batch)
