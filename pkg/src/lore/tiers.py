"""Tiered data model: positives (P), distractors (N1) and plain negatives (N2).

A :class:`TieredQueryExample` holds one query, its candidate chunks and the
tier of every candidate.  Boolean relevance labels only exist at ingestion
time; :func:`assign_tiers` maps them onto tiers and the persisted format stores
tiers only.

The on-disk format is line-delimited JSON, one example per line, with sorted
keys so that a given dataset always serializes to the same bytes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

from .errors import DistractorNotFalse, ParseError, ValidationError


class TierLabel(str, enum.Enum):
    P = "P"
    N1 = "N1"
    N2 = "N2"

    def __str__(self) -> str:
        return self.value


TIER_ORDER = (TierLabel.P, TierLabel.N1, TierLabel.N2)


class DiscourseRelation(str, enum.Enum):
    """The eight rhetorical relations used to guide query rewriting."""

    SEQUENTIAL = "Sequential"
    TRANSITIONAL = "Transitional"
    SUPPLEMENTARY = "Supplementary"
    CONTRASTIVE = "Contrastive"
    CAUSAL = "Causal"
    PARALLEL = "Parallel"
    HYPOTHETICAL = "Hypothetical"
    EXPLANATORY = "Explanatory"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    text: str

    def __post_init__(self):
        if isinstance(self.chunk_id, bool) or not isinstance(self.chunk_id, int):
            raise ValidationError(f"chunk_id must be an integer, got {self.chunk_id!r}")
        if self.chunk_id < 0:
            raise ValidationError(f"chunk_id must be non-negative, got {self.chunk_id}")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError(f"chunk {self.chunk_id} has empty text")


class Candidate(NamedTuple):
    chunk: Chunk
    tier: TierLabel


@dataclass(frozen=True)
class TieredQueryExample:
    query_id: str
    original_query: str
    candidates: tuple[Candidate, ...]
    rewritten_query: str | None = None
    discourse_relation: DiscourseRelation | None = None
    distractor_source_ids: tuple[int, ...] = ()

    def __post_init__(self):
        # normalise list inputs so equality and hashing behave
        object.__setattr__(
            self, "candidates", tuple(Candidate(c, TierLabel(t)) for c, t in self.candidates)
        )
        object.__setattr__(self, "distractor_source_ids", tuple(self.distractor_source_ids))
        if self.discourse_relation is not None:
            object.__setattr__(
                self, "discourse_relation", DiscourseRelation(self.discourse_relation)
            )
        self.validate()

    def validate(self) -> None:
        qid = self.query_id
        if not isinstance(qid, str) or not qid:
            raise ValidationError("query_id must be a non-empty string", qid)
        if not isinstance(self.original_query, str):
            raise ValidationError("original_query must be a string", qid)
        if not self.candidates:
            raise ValidationError("candidate list is empty", qid)
        ids = [c.chunk.chunk_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate chunk_id in candidates", qid)
        n1 = {c.chunk.chunk_id for c in self.candidates if c.tier is TierLabel.N1}
        sources = set(self.distractor_source_ids)
        if len(sources) != len(self.distractor_source_ids):
            raise ValidationError("duplicate id in distractor_source_ids", qid)
        if sources - n1:
            raise ValidationError(
                f"distractor_source_ids {sorted(sources - n1)} are not N1 candidates", qid
            )
        if n1 - sources:
            raise ValidationError(
                f"N1 candidates {sorted(n1 - sources)} missing from distractor_source_ids", qid
            )
        if self.rewritten_query is not None:
            if not isinstance(self.rewritten_query, str) or not self.rewritten_query.strip():
                raise ValidationError("rewritten_query is empty", qid)
            if self.discourse_relation is None:
                raise ValidationError("rewritten_query without discourse_relation", qid)
            if not self.distractor_source_ids:
                raise ValidationError("rewritten_query without distractor_source_ids", qid)

    @property
    def query_text(self) -> str:
        """Text fed to the query encoder: the rewrite when there is one."""
        return self.rewritten_query if self.rewritten_query is not None else self.original_query

    def members(self, tier: TierLabel) -> list[int]:
        return [c.chunk.chunk_id for c in self.candidates if c.tier is tier]

    def chunk_key(self, chunk_id: int) -> str:
        return chunk_key(self.query_id, chunk_id)

    def to_record(self) -> dict:
        rec: dict = {
            "query_id": self.query_id,
            "original_query": self.original_query,
            "candidates": [
                {"chunk_id": c.chunk.chunk_id, "text": c.chunk.text, "tier": c.tier.value}
                for c in self.candidates
            ],
            "distractor_source_ids": list(self.distractor_source_ids),
        }
        if self.rewritten_query is not None:
            rec["rewritten_query"] = self.rewritten_query
        if self.discourse_relation is not None:
            rec["discourse_relation"] = self.discourse_relation.value
        return rec


@dataclass(frozen=True)
class Dataset:
    # the file format carries no name, so it takes no part in equality
    name: str = field(compare=False)
    examples: tuple[TieredQueryExample, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        seen: set[str] = set()
        for ex in self.examples:
            if ex.query_id in seen:
                raise ValidationError("duplicate query_id in dataset", ex.query_id)
            seen.add(ex.query_id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[TieredQueryExample]:
        return iter(self.examples)


def chunk_key(query_id: str, chunk_id: int) -> str:
    """Document-embedding key; chunk ids are scoped per query."""
    return f"{query_id}/{chunk_id}"


def assign_tiers(
    labels: Sequence[tuple[int, bool]], distractor_ids: Sequence[int]
) -> list[tuple[int, TierLabel]]:
    """Map boolean relevance labels to tiers.

    True-labeled chunks become P; False-labeled chunks that were used as
    distractors become N1; every other False-labeled chunk becomes N2.

    Raises:
        DistractorNotFalse: a distractor id is unknown or labeled True.
        ValidationError: chunk ids are not unique.
    """
    by_id: dict[int, bool] = {}
    for cid, label in labels:
        if cid in by_id:
            raise ValidationError(f"duplicate chunk_id {cid}")
        by_id[cid] = bool(label)
    used = set(distractor_ids)
    for cid in used:
        if cid not in by_id:
            raise DistractorNotFalse(f"distractor id {cid} is not a candidate")
        if by_id[cid]:
            raise DistractorNotFalse(f"distractor id {cid} is labeled True")
    out = []
    for cid, label in labels:
        if label:
            out.append((cid, TierLabel.P))
        elif cid in used:
            out.append((cid, TierLabel.N1))
        else:
            out.append((cid, TierLabel.N2))
    return out


# -- serialization -----------------------------------------------------------

_RECORD_FIELDS = {
    "query_id",
    "original_query",
    "rewritten_query",
    "discourse_relation",
    "candidates",
    "distractor_source_ids",
}
_REQUIRED_FIELDS = {"query_id", "original_query", "candidates", "distractor_source_ids"}
_CANDIDATE_FIELDS = {"chunk_id", "text", "tier"}


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def example_from_record(rec: object) -> TieredQueryExample:
    """Build an example from a decoded JSON object, rejecting unknown fields."""
    if not isinstance(rec, dict):
        raise ValidationError("record is not a JSON object")
    qid = rec.get("query_id")
    unknown = set(rec) - _RECORD_FIELDS
    if unknown:
        raise ValidationError(f"unknown fields {sorted(unknown)}", qid)
    missing = _REQUIRED_FIELDS - set(rec)
    if missing:
        raise ValidationError(f"missing fields {sorted(missing)}", qid)
    cands = rec["candidates"]
    if not isinstance(cands, list):
        raise ValidationError("candidates must be an array", qid)
    parsed = []
    for c in cands:
        if not isinstance(c, dict):
            raise ValidationError("candidate is not an object", qid)
        if set(c) != _CANDIDATE_FIELDS:
            raise ValidationError(f"candidate fields must be exactly {sorted(_CANDIDATE_FIELDS)}", qid)
        try:
            tier = TierLabel(c["tier"])
        except ValueError:
            raise ValidationError(f"bad tier {c['tier']!r}", qid) from None
        parsed.append(Candidate(Chunk(c["chunk_id"], c["text"]), tier))
    relation = rec.get("discourse_relation")
    if relation is not None:
        try:
            relation = DiscourseRelation(relation)
        except ValueError:
            raise ValidationError(f"bad discourse_relation {relation!r}", qid) from None
    sources = rec["distractor_source_ids"]
    if not isinstance(sources, list) or any(
        isinstance(s, bool) or not isinstance(s, int) for s in sources
    ):
        raise ValidationError("distractor_source_ids must be an array of integers", qid)
    return TieredQueryExample(
        query_id=qid,
        original_query=rec["original_query"],
        candidates=tuple(parsed),
        rewritten_query=rec.get("rewritten_query"),
        discourse_relation=relation,
        distractor_source_ids=tuple(sources),
    )


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    """Read and validate a tiered dataset file.

    Raises:
        ParseError: a line is not valid JSON (carries the 1-based line number).
        ValidationError: a record breaks an invariant (names the query_id).
    """
    path = Path(path)
    examples = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno, path=str(path)) from None
            ex = example_from_record(rec)
            if ex.query_id in seen:
                raise ValidationError(f"duplicate query_id (line {lineno})", ex.query_id)
            seen.add(ex.query_id)
            examples.append(ex)
    return Dataset(name=name if name is not None else path.stem, examples=tuple(examples))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset.examples:
            fh.write(dumps_record(ex.to_record()))
            fh.write("\n")
