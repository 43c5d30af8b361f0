"""Exact top-k retrieval and per-tier recall@k.

Queries are encoded with the trained query projection and scored against
frozen document embeddings.  Recall of positives (higher is better) is
reported for every mode; recall of distractors (lower is better) only for
disturbed, i.e. rewritten, queries.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .embed import EncoderParams, TextEncoder
from .errors import ConfigMismatch, EmptyTier, MissingEmbedding, ParseError
from .tiers import Dataset, TierLabel, chunk_key

DEFAULT_KS = (3, 5, 10)


class QueryMode(str, enum.Enum):
    RAW = "raw"
    DISTURBED = "disturbed"


class Pool(str, enum.Enum):
    PER_QUERY = "per-query"
    GLOBAL = "global"


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = DEFAULT_KS
    query_mode: QueryMode = QueryMode.RAW
    pool: Pool = Pool.PER_QUERY

    def __post_init__(self):
        ks = tuple(int(k) for k in self.ks)
        if not ks or any(k < 1 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError(f"ks must be non-empty, positive and strictly increasing: {ks}")
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "query_mode", QueryMode(self.query_mode))
        object.__setattr__(self, "pool", Pool(self.pool))

    def as_dict(self) -> dict:
        return {"ks": list(self.ks), "query_mode": self.query_mode.value, "pool": self.pool.value}


@dataclass(frozen=True)
class EvalReport:
    config: EvalConfig
    total: int
    evaluated_p: int
    evaluated_n1: int
    recall_p: dict[int, float | None] = field(default_factory=dict)
    recall_n1: dict[int, float | None] = field(default_factory=dict)

    @property
    def skipped_p(self) -> int:
        return self.total - self.evaluated_p

    @property
    def skipped_n1(self) -> int:
        return self.total - self.evaluated_n1

    def to_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "counts": {
                "total": self.total,
                "evaluated_p": self.evaluated_p,
                "skipped_p": self.skipped_p,
                "evaluated_n1": self.evaluated_n1,
                "skipped_n1": self.skipped_n1,
            },
            "recall": [
                {"k": k, "recall_P": self.recall_p[k], "recall_N1": self.recall_n1[k]}
                for k in self.config.ks
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        cfg = data["config"]
        config = EvalConfig(tuple(cfg["ks"]), QueryMode(cfg["query_mode"]), Pool(cfg["pool"]))
        counts = data["counts"]
        return cls(
            config=config,
            total=counts["total"],
            evaluated_p=counts["evaluated_p"],
            evaluated_n1=counts["evaluated_n1"],
            recall_p={r["k"]: r["recall_P"] for r in data["recall"]},
            recall_n1={r["k"]: r["recall_N1"] for r in data["recall"]},
        )


def retrieve_topk(
    query_emb: np.ndarray, candidates: Sequence[tuple[Hashable, np.ndarray]], k: int
) -> list:
    """Exhaustive exact top-k by cosine; ties go to the smaller id.

    ``k`` larger than the pool is clipped to the pool size.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not candidates:
        raise ValueError("candidates must be non-empty")
    ids = [c[0] for c in candidates]
    sims = np.vstack([c[1] for c in candidates]) @ query_emb
    return _topk_ids(ids, _id_ranks(ids), sims, k)


def _id_ranks(ids: Sequence) -> np.ndarray:
    ranks = np.empty(len(ids), dtype=np.int64)
    for rank, i in enumerate(sorted(range(len(ids)), key=ids.__getitem__)):
        ranks[i] = rank
    return ranks


def _topk_ids(ids: Sequence, id_ranks: np.ndarray, sims: np.ndarray, k: int) -> list:
    # lexsort: last key is primary
    order = np.lexsort((id_ranks, -sims))
    return [ids[i] for i in order[: min(k, len(ids))]]


def recall_at_k(retrieved: Sequence, tier_members: set) -> float:
    if not tier_members:
        raise EmptyTier("tier has no members")
    return len(set(retrieved) & set(tier_members)) / len(tier_members)


def evaluate(
    dataset: Dataset,
    params: EncoderParams,
    doc_embeddings: Mapping[str, np.ndarray],
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Macro-averaged recall@k of P (and N1 for disturbed queries).

    A query counts as skipped for a metric when it lacks the tier that
    metric needs, or (disturbed mode) has no rewritten query.
    """
    encoder = TextEncoder(params)
    disturbed = config.query_mode is QueryMode.DISTURBED

    def emb(key: str) -> np.ndarray:
        vec = doc_embeddings.get(key)
        if vec is None:
            raise MissingEmbedding(key)
        return vec

    global_ids: list = []
    global_matrix = None
    if config.pool is Pool.GLOBAL:
        for ex in dataset:
            global_ids.extend((ex.query_id, c.chunk.chunk_id) for c in ex.candidates)
        if global_ids:
            global_matrix = np.vstack([emb(chunk_key(q, c)) for q, c in global_ids])
        global_ranks = _id_ranks(global_ids)

    sum_p = {k: 0.0 for k in config.ks}
    sum_n1 = {k: 0.0 for k in config.ks}
    n_p = n_n1 = 0
    kmax = config.ks[-1]
    for ex in dataset:
        if disturbed and ex.rewritten_query is None:
            continue
        p_members = ex.members(TierLabel.P)
        n1_members = ex.members(TierLabel.N1) if disturbed else []
        if not p_members and not n1_members:
            continue
        q = encoder(ex.rewritten_query if disturbed else ex.original_query)
        if config.pool is Pool.GLOBAL:
            ids, ranks, matrix = global_ids, global_ranks, global_matrix
            p_set = {(ex.query_id, c) for c in p_members}
            n1_set = {(ex.query_id, c) for c in n1_members}
        else:
            ids = [c.chunk.chunk_id for c in ex.candidates]
            ranks = _id_ranks(ids)
            matrix = np.vstack([emb(ex.chunk_key(c)) for c in ids])
            p_set, n1_set = set(p_members), set(n1_members)
        ranked = _topk_ids(ids, ranks, matrix @ q, kmax)
        if p_set:
            n_p += 1
            for k in config.ks:
                sum_p[k] += recall_at_k(ranked[:k], p_set)
        if n1_set:
            n_n1 += 1
            for k in config.ks:
                sum_n1[k] += recall_at_k(ranked[:k], n1_set)

    if disturbed and n_p == 0 and len(dataset):
        warnings.warn("disturbed evaluation skipped every query (no rewritten queries)", stacklevel=2)
    return EvalReport(
        config=config,
        total=len(dataset),
        evaluated_p=n_p,
        evaluated_n1=n_n1,
        recall_p={k: (sum_p[k] / n_p if n_p else None) for k in config.ks},
        recall_n1={k: (sum_n1[k] / n_n1 if n_n1 else None) for k in config.ks},
    )


# -- comparison and rendering ------------------------------------------------


def compare_report(a: EvalReport, b: EvalReport) -> list[dict]:
    """Per-k change from ``a`` to ``b``.

    ``better_P`` is true when P recall went up, ``better_N1`` when N1
    recall went down.  Deltas are None where either side is absent.
    """
    if a.config != b.config:
        raise ConfigMismatch(f"configs differ: {a.config.as_dict()} vs {b.config.as_dict()}")
    rows = []
    for k in a.config.ks:
        dp = _delta(a.recall_p[k], b.recall_p[k])
        dn = _delta(a.recall_n1[k], b.recall_n1[k])
        rows.append(
            {
                "k": k,
                "delta_P": dp,
                "delta_N1": dn,
                "better_P": None if dp is None else dp > 0,
                "better_N1": None if dn is None else dn < 0,
            }
        )
    return rows


def _delta(x: float | None, y: float | None) -> float | None:
    if x is None or y is None:
        return None
    return y - x


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def format_report(report: EvalReport, title: str = "") -> str:
    """Aligned text table: one row per k, P recall and N1 recall (percent)."""
    head = f"{'Recall':<8}{'P(up)':>10}{'N1(down)':>10}"
    lines = []
    if title:
        lines.append(title)
    cfg = report.config
    lines.append(f"mode={cfg.query_mode.value} pool={cfg.pool.value} "
                 f"queries={report.total} evaluated_P={report.evaluated_p} "
                 f"evaluated_N1={report.evaluated_n1}")
    lines.append(head)
    lines.append("-" * len(head))
    for k in cfg.ks:
        lines.append(f"{'@' + str(k):<8}{_pct(report.recall_p[k]):>10}{_pct(report.recall_n1[k]):>10}")
    return "\n".join(lines) + "\n"


def format_table(rows: Mapping[str, Mapping[str, tuple[EvalReport, EvalReport]]]) -> str:
    """Comparison table laid out per dataset: raw P, disturbed P, disturbed N1.

    ``rows`` maps a model label to ``{dataset_name: (raw_report, disturbed_report)}``.
    Every report must share the same ks.
    """
    datasets: list[str] = []
    ks: tuple[int, ...] | None = None
    for per_ds in rows.values():
        for name, (raw, dist) in per_ds.items():
            if name not in datasets:
                datasets.append(name)
            for rep in (raw, dist):
                if ks is None:
                    ks = rep.config.ks
                elif rep.config.ks != ks:
                    raise ConfigMismatch("reports use different ks")
    if ks is None:
        return ""
    label_w = max(len("Recall"), *(len(m) for m in rows)) + 2
    col = 10
    top = " " * (label_w + 5) + "".join(f"{d:^{3 * col}}" for d in datasets)
    sub = f"{'':<{label_w + 5}}" + "".join(
        f"{'raw P(up)':>{col}}{'dist P(up)':>{col}}{'dist N1(dn)':>{col}}" for _ in datasets
    )
    lines = [top, sub, "-" * len(sub)]
    for k in ks:
        for model, per_ds in rows.items():
            cells = []
            for d in datasets:
                if d in per_ds:
                    raw, dist = per_ds[d]
                    cells += [raw.recall_p[k], dist.recall_p[k], dist.recall_n1[k]]
                else:
                    cells += [None, None, None]
            lines.append(f"{'@' + str(k):<5}{model:<{label_w}}" + "".join(f"{_pct(c):>{col}}" for c in cells))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, json_path: str | Path, text_path: str | Path | None = None) -> None:
    Path(json_path).write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if text_path is not None:
        Path(text_path).write_text(format_report(report), encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    try:
        return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"not an evaluation report: {exc}", path=str(path)) from None
