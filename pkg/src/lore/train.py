"""Fine-tune the query projection against a frozen document encoder.

Each step encodes the batch queries with the current query projection,
scores them against the (fixed) document embeddings of their own candidates,
and backpropagates the tier-weighted loss into the query projection only.
Training also records the loss curves and the mean similarity per tier, so
one can watch distractor scores fall toward the plain negatives.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .embed import (
    ColumnGradient,
    EncoderParams,
    FeatureVector,
    encode,
    encode_backward,
    featurize,
)
from .errors import MissingEmbedding, NoPositives, NonFiniteLoss
from .loss import LossConfig, ScoredCandidates, loss_and_grad, query_loss
from .optim import OptimizerConfig, make_optimizer
from .tiers import Dataset, TierLabel, TieredQueryExample

logger = logging.getLogger(__name__)

# rate for full transformer fine-tuning; the small linear encoder here
# needs the larger default to move within one epoch
TRANSFORMER_LEARNING_RATE = 1e-5
DEFAULT_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    log_every: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be a finite non-negative number")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def as_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss": self.loss.as_dict(),
            "optimizer": self.optimizer.as_dict(),
            "log_every": self.log_every,
        }


class TierScores(NamedTuple):
    """Mean cosine per tier; ``None`` marks a tier with no members."""

    p: float | None
    n1: float | None
    n2: float | None


@dataclass
class TrainReport:
    loss_curve: list[tuple[int, float]]
    val_curve: list[tuple[int, float]]
    tier_scores: list[tuple[int, TierScores]]
    final_params: EncoderParams
    config: TrainConfig

    @property
    def steps(self) -> int:
        return self.loss_curve[-1][0] if self.loss_curve else 0

    def metrics_records(self) -> list[dict]:
        """One record per step, fields absent from that step set to None."""
        train = dict(self.loss_curve)
        val = dict(self.val_curve)
        scores = dict(self.tier_scores)
        has_val = bool(self.val_curve)
        out = []
        for step in sorted(set(train) | set(val) | set(scores)):
            rec: dict = {"step": step, "train_loss": train.get(step)}
            if has_val:
                rec["val_loss"] = val.get(step)
            ts = scores.get(step)
            rec["mean_s_P"] = ts.p if ts else None
            rec["mean_s_N1"] = ts.n1 if ts else None
            rec["mean_s_N2"] = ts.n2 if ts else None
            out.append(rec)
        return out


class _Prepared(NamedTuple):
    example: TieredQueryExample
    features: FeatureVector
    docs: np.ndarray  # (n_candidates, d)
    tiers: tuple[TierLabel, ...]


def _doc_matrix(ex: TieredQueryExample, doc_embeddings: Mapping[str, np.ndarray]) -> np.ndarray:
    rows = []
    for cand in ex.candidates:
        key = ex.chunk_key(cand.chunk.chunk_id)
        vec = doc_embeddings.get(key)
        if vec is None:
            raise MissingEmbedding(key)
        rows.append(vec)
    return np.vstack(rows)


def _prepare(
    dataset: Dataset | Sequence[TieredQueryExample],
    doc_embeddings: Mapping[str, np.ndarray],
    feature_dim: int,
    require_positive: bool,
) -> list[_Prepared]:
    prepared = []
    for ex in dataset:
        tiers = tuple(c.tier for c in ex.candidates)
        if require_positive and TierLabel.P not in tiers:
            raise NoPositives(f"example {ex.query_id!r} has no positive candidates", query_id=ex.query_id)
        prepared.append(
            _Prepared(ex, featurize(ex.query_text, feature_dim), _doc_matrix(ex, doc_embeddings), tiers)
        )
    return prepared


def _scores(item: _Prepared, params: EncoderParams) -> np.ndarray:
    u = encode(item.features, params)
    return np.clip(item.docs @ u, -1.0, 1.0)


def _tier_means(items: Sequence[_Prepared], params: EncoderParams) -> TierScores:
    sums = {t: 0.0 for t in TierLabel}
    counts = {t: 0 for t in TierLabel}
    for item in items:
        s = item.docs @ encode(item.features, params)
        for tier, value in zip(item.tiers, s.tolist()):
            sums[tier] += value
            counts[tier] += 1
    return TierScores(
        *(sums[t] / counts[t] if counts[t] else None for t in (TierLabel.P, TierLabel.N1, TierLabel.N2))
    )


def track_tier_scores(
    sample: Sequence[TieredQueryExample],
    params: EncoderParams,
    doc_embeddings: Mapping[str, np.ndarray],
) -> TierScores:
    """Mean query/candidate cosine per tier over every pair in ``sample``."""
    if not sample:
        raise ValueError("sample must be non-empty")
    items = _prepare(sample, doc_embeddings, params.feature_dim, require_positive=False)
    return _tier_means(items, params)


def _mean_loss(items: Sequence[_Prepared], params: EncoderParams, config: LossConfig) -> float:
    total = 0.0
    for item in items:
        total += query_loss(ScoredCandidates(item.tiers, _scores(item, params)), config)
    return total / len(items)


def _batch_step(
    batch: Sequence[_Prepared], params: EncoderParams, config: LossConfig, step: int
) -> tuple[float, ColumnGradient]:
    total = 0.0
    grads = []
    scale = 1.0 / len(batch)
    for item in batch:
        s = _scores(item, params)
        if not np.all(np.isfinite(s)):
            raise NonFiniteLoss(step, "similarity")
        loss, grad_s = loss_and_grad(ScoredCandidates(item.tiers, s), config)
        total += loss
        grad_u = item.docs.T @ (grad_s * scale)
        grads.append(encode_backward(item.features, params, grad_u))
    mean = total * scale
    if not math.isfinite(mean):
        raise NonFiniteLoss(step)
    grad = ColumnGradient.combine(grads)
    if not np.all(np.isfinite(grad.block)):
        raise NonFiniteLoss(step, "gradient")
    return mean, grad


def train(
    dataset: Dataset,
    val: Dataset | None,
    doc_embeddings: Mapping[str, np.ndarray],
    init: EncoderParams,
    config: TrainConfig,
) -> TrainReport:
    """Minimise the mean tier-weighted loss over the query projection.

    ``init`` and ``doc_embeddings`` are never modified.  The number of steps
    is ``epochs * ceil(len(dataset) / batch_size)``; the dataset is shuffled
    once per epoch from ``config.seed``.

    Raises:
        NoPositives: a training or validation example has no P candidate.
        MissingEmbedding: a candidate has no document embedding.
        NonFiniteLoss: the loss or gradient became non-finite (with the step).
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    items = _prepare(dataset, doc_embeddings, init.feature_dim, require_positive=True)
    val_items = (
        _prepare(val, doc_embeddings, init.feature_dim, require_positive=True) if val is not None else []
    )
    params = init.copy()
    opt = make_optimizer(config.optimizer, config.learning_rate)
    rng = np.random.default_rng(config.seed)

    loss_curve: list[tuple[int, float]] = []
    val_curve: list[tuple[int, float]] = []
    tier_scores: list[tuple[int, TierScores]] = []

    def log(step: int) -> None:
        tier_scores.append((step, _tier_means(items, params)))
        if val_items:
            val_curve.append((step, _mean_loss(val_items, params, config.loss)))

    log(0)
    n = len(items)
    steps_per_epoch = -(-n // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            batch = [items[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            step += 1
            loss, grad = _batch_step(batch, params, config.loss, step)
            loss_curve.append((step, loss))
            if config.learning_rate > 0:
                opt.step(params.projection, grad)
            if step % config.log_every == 0 or step == total_steps:
                log(step)
                logger.debug("epoch %d step %d loss %.6f", epoch, step, loss)
    return TrainReport(loss_curve, val_curve, tier_scores, params, config)


def train_seeds(
    dataset: Dataset,
    val: Dataset | None,
    doc_embeddings: Mapping[str, np.ndarray],
    init: EncoderParams,
    config: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> dict[int, TrainReport]:
    """Run :func:`train` once per seed from the same initialization."""
    return {
        s: train(dataset, val, doc_embeddings, init, _with_seed(config, s)) for s in seeds
    }


def _with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=seed,
        loss=config.loss,
        optimizer=config.optimizer,
        log_every=config.log_every,
    )


def summarize(reports: Mapping[int, TrainReport]) -> dict:
    """Mean and standard deviation of each final metric across seeds."""
    finals: dict[str, list[float]] = {}
    for report in reports.values():
        last = report.metrics_records()[-1]
        for key, value in last.items():
            if key != "step" and value is not None:
                finals.setdefault(key, []).append(value)
    return {
        "seeds": sorted(reports),
        "final": {
            k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
            for k, v in sorted(finals.items())
        },
    }


# -- persistence -------------------------------------------------------------


def write_metrics(report: TrainReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in report.metrics_records():
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_metrics(path: str | Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_checkpoint(path: str | Path, params: EncoderParams, meta: dict) -> None:
    """Write projection plus JSON metadata (config, seeds) as one ``.npz``.

    Written through a fixed-timestamp zip so identical inputs give
    identical bytes.
    """
    arrays = {
        "projection": params.projection,
        "meta": np.array(json.dumps(meta, sort_keys=True)),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        params = EncoderParams(data["projection"])
        meta = json.loads(str(data["meta"]))
    return params, meta
