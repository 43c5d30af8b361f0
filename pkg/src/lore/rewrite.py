"""Build tiered examples from a labeled corpus.

For a record selected for rewriting, a few False-labeled chunks are sampled
as distractors, a discourse relation is chosen, and the query is rewritten
to weave in distractor content.  The distractors the rewrite actually used
become N1; the remaining False-labeled chunks are N2.  Records that are not
rewritten keep their query and only get P/N2 tiers.

Every step has an LLM-backed path (any :class:`~lore.llm.ChatClient`) and a
deterministic offline path used when no client is given.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import xxhash

from .errors import (
    LlmFormatError,
    LlmTransportError,
    ParseError,
    RelationParseError,
    ValidationError,
)
from .llm import ChatClient, LlmEndpoint
from .tiers import Candidate, Chunk, Dataset, DiscourseRelation, TieredQueryExample, assign_tiers

logger = logging.getLogger(__name__)

__all__ = [
    "DiscourseRelation",
    "CONNECTIVES",
    "RewriteConfig",
    "RawRecord",
    "BuildReport",
    "BuildResult",
    "sample_distractors",
    "select_relation",
    "parse_relation",
    "key_sentence",
    "rewrite_query",
    "parse_rewrite_response",
    "build_dataset",
    "load_raw_corpus",
]

CONNECTIVES = {
    DiscourseRelation.SEQUENTIAL: "after",
    DiscourseRelation.TRANSITIONAL: "meanwhile",
    DiscourseRelation.SUPPLEMENTARY: "in addition to the fact that",
    DiscourseRelation.CONTRASTIVE: "although",
    DiscourseRelation.CAUSAL: "because",
    DiscourseRelation.PARALLEL: "just as",
    DiscourseRelation.HYPOTHETICAL: "if",
    DiscourseRelation.EXPLANATORY: "given that",
}

RELATION_NAMES = ", ".join(r.value for r in DiscourseRelation)

SYSTEM_PROMPT = (
    "You prepare training data for a retrieval model. Follow the output "
    "format exactly and do not add commentary."
)

RELATION_PROMPT = """Question: {query}

Distractor passages:
{passages}

Pick the one discourse relation that best links the question with the distractor passages.
Allowed relations: {relations}.
Answer with the relation name only."""

REWRITE_PROMPT = """Question: {query}

Distractor passages:
{passages}

Rewrite the question into one natural question that embeds content from some of the
distractor passages through a {relation} relation. The rewritten question must keep the
original meaning and ask for exactly the same information.

Reply with a fenced ```json block holding an object with two keys:
"rewritten_query": the rewritten question (string),
"used_distractor_ids": the bracketed ids of the passages whose content you used (array of integers)."""


@dataclass(frozen=True)
class RewriteConfig:
    max_distractors: int = 2
    rewrite_fraction: float = 1.0
    seed: int = 0
    llm: LlmEndpoint | None = None
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_distractors < 1:
            raise ValueError("max_distractors must be >= 1")
        if not 0.0 <= self.rewrite_fraction <= 1.0:
            raise ValueError("rewrite_fraction must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def as_dict(self) -> dict:
        return {
            "max_distractors": self.max_distractors,
            "rewrite_fraction": self.rewrite_fraction,
            "seed": self.seed,
            "llm": self.llm.as_dict() if self.llm else None,
            "max_in_flight": self.max_in_flight,
        }


@dataclass(frozen=True)
class RawRecord:
    """A query with candidate chunks and boolean relevance labels."""

    query_id: str
    query: str
    chunks: tuple[Chunk, ...]
    labels: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(self.chunks))
        object.__setattr__(self, "labels", tuple(bool(x) for x in self.labels))
        if len(self.chunks) != len(self.labels):
            raise ValidationError("chunks and labels differ in length", self.query_id)
        if not self.chunks:
            raise ValidationError("record has no chunks", self.query_id)


def load_raw_corpus(path: str | Path) -> list[RawRecord]:
    """Read ``{query_id, query, chunks: [{chunk_id, text, label}]}`` lines."""
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno, path=str(path)) from None
            if not isinstance(rec, dict) or set(rec) != {"query_id", "query", "chunks"}:
                raise ValidationError(f"line {lineno}: expected keys query_id, query, chunks")
            try:
                chunks = [Chunk(c["chunk_id"], c["text"]) for c in rec["chunks"]]
                labels = [c["label"] for c in rec["chunks"]]
            except (KeyError, TypeError):
                raise ValidationError(f"line {lineno}: malformed chunk", rec.get("query_id")) from None
            if any(not isinstance(x, bool) for x in labels):
                raise ValidationError(f"line {lineno}: label must be a boolean", rec["query_id"])
            out.append(RawRecord(rec["query_id"], rec["query"], tuple(chunks), tuple(labels)))
    return out


def _hash64(data: str, seed: int) -> int:
    return xxhash.xxh64_intdigest(data.encode("utf-8"), seed=seed)


def sample_distractors(false_chunks: Sequence[Chunk], config: RewriteConfig, query_id: str) -> list[Chunk]:
    """Sample without replacement; the result is a pure function of (seed, query_id).

    The chosen chunks are returned in their input order.
    """
    n = min(config.max_distractors, len(false_chunks))
    if n == 0:
        return []
    rng = np.random.default_rng([config.seed, _hash64(query_id, 0)])
    picked = np.sort(rng.choice(len(false_chunks), size=n, replace=False))
    return [false_chunks[i] for i in picked.tolist()]


def _passages(distractors: Sequence[Chunk]) -> str:
    return "\n".join(f"[{c.chunk_id}] {c.text}" for c in distractors)


_RELATION_WORD = re.compile(r"[A-Za-z]+")
_BY_LOWER = {r.value.lower(): r for r in DiscourseRelation}


def parse_relation(text: str) -> DiscourseRelation:
    """First relation name mentioned in ``text``, ignoring case and punctuation."""
    for word in _RELATION_WORD.findall(text):
        rel = _BY_LOWER.get(word.lower())
        if rel is not None:
            return rel
    raise RelationParseError("response names no valid discourse relation", raw=text)


def select_relation(
    query: str,
    distractors: Sequence[Chunk],
    seed: int,
    client: ChatClient | None = None,
) -> DiscourseRelation:
    if client is not None:
        user = RELATION_PROMPT.format(
            query=query, passages=_passages(distractors), relations=RELATION_NAMES
        )
        return parse_relation(client.complete(SYSTEM_PROMPT, user))
    payload = "\x1f".join([query, *(c.text for c in distractors)])
    relations = list(DiscourseRelation)
    return relations[_hash64(payload, seed) % len(relations)]


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def key_sentence(text: str) -> str:
    """First sentence of ``text`` with its final punctuation removed."""
    first = _SENTENCE_END.split(text.strip(), maxsplit=1)[0]
    return first.rstrip(".!? ").strip() or text.strip()


def _offline_rewrite(query: str, relation: DiscourseRelation, distractors: Sequence[Chunk]) -> str:
    q = query.strip()
    end = q[-1] if q and q[-1] in "?.!" else ""
    body = q.rstrip("?.! ")
    fused = " and ".join(key_sentence(c.text) for c in distractors)
    return f"{body} {CONNECTIVES[relation]} {fused}{end}"


_JSON_BLOCK = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def parse_rewrite_response(raw: str, distractor_ids: Sequence[int]) -> tuple[str, list[int]]:
    """Parse the structured rewrite block and check the ids it reports.

    Raises:
        LlmFormatError: no JSON object, wrong field types, empty query, or
            ids outside ``distractor_ids`` / none at all.
    """
    m = _JSON_BLOCK.search(raw)
    text = m.group(1) if m else raw[raw.find("{") : raw.rfind("}") + 1]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        raise LlmFormatError("no parseable JSON object in response", raw=raw) from None
    if not isinstance(obj, dict):
        raise LlmFormatError("response JSON is not an object", raw=raw)
    query = obj.get("rewritten_query")
    ids = obj.get("used_distractor_ids")
    if not isinstance(query, str) or not query.strip():
        raise LlmFormatError("rewritten_query missing or empty", raw=raw)
    if not isinstance(ids, list) or any(isinstance(i, bool) or not isinstance(i, int) for i in ids):
        raise LlmFormatError("used_distractor_ids must be an array of integers", raw=raw)
    allowed = set(distractor_ids)
    used = [i for i in dict.fromkeys(ids)]
    if not used:
        raise LlmFormatError("no distractor reported as used", raw=raw)
    if any(i not in allowed for i in used):
        raise LlmFormatError(f"used ids {used} not all among distractors {sorted(allowed)}", raw=raw)
    return query.strip(), used


def rewrite_query(
    query: str,
    relation: DiscourseRelation,
    distractors: Sequence[Chunk],
    client: ChatClient | None = None,
) -> tuple[str, list[int]]:
    """Return ``(rewritten_query, used_distractor_ids)``.

    Offline, every distractor is used: the query is extended with the
    relation's connective followed by each distractor's first sentence.
    """
    if not distractors:
        raise ValueError("rewrite_query needs at least one distractor")
    ids = [c.chunk_id for c in distractors]
    if client is None:
        return _offline_rewrite(query, relation, distractors), ids
    user = REWRITE_PROMPT.format(query=query, passages=_passages(distractors), relation=relation.value)
    rewritten, used = parse_rewrite_response(client.complete(SYSTEM_PROMPT, user), ids)
    if rewritten == query.strip():
        raise LlmFormatError("rewritten query is identical to the original", raw=rewritten)
    return rewritten, used


@dataclass
class BuildReport:
    total: int = 0
    selected: int = 0
    rewritten: int = 0
    skipped_no_false: int = 0
    failures: int = 0
    failed_query_ids: list[str] = field(default_factory=list)
    relations: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "selected": self.selected,
            "rewritten": self.rewritten,
            "skipped_no_false": self.skipped_no_false,
            "failures": self.failures,
            "failed_query_ids": list(self.failed_query_ids),
            "relation_histogram": {r.value: self.relations.get(r, 0) for r in DiscourseRelation},
        }


@dataclass
class BuildResult:
    dataset: Dataset
    report: BuildReport


def _plain_example(rec: RawRecord) -> TieredQueryExample:
    tiers = assign_tiers([(c.chunk_id, y) for c, y in zip(rec.chunks, rec.labels)], [])
    return TieredQueryExample(
        query_id=rec.query_id,
        original_query=rec.query,
        candidates=tuple(Candidate(c, t) for c, (_, t) in zip(rec.chunks, tiers)),
    )


def _rewrite_record(rec: RawRecord, config: RewriteConfig, client: ChatClient | None):
    false_chunks = [c for c, y in zip(rec.chunks, rec.labels) if not y]
    distractors = sample_distractors(false_chunks, config, rec.query_id)
    if not distractors:
        return _plain_example(rec), "no_false"
    try:
        relation = select_relation(rec.query, distractors, config.seed, client)
        rewritten, used = rewrite_query(rec.query, relation, distractors, client)
    except (LlmTransportError, LlmFormatError, RelationParseError) as exc:
        logger.warning("rewrite failed for %s: %s", rec.query_id, exc)
        return _plain_example(rec), "failed"
    tiers = assign_tiers([(c.chunk_id, y) for c, y in zip(rec.chunks, rec.labels)], used)
    used_set = set(used)
    example = TieredQueryExample(
        query_id=rec.query_id,
        original_query=rec.query,
        candidates=tuple(Candidate(c, t) for c, (_, t) in zip(rec.chunks, tiers)),
        rewritten_query=rewritten,
        discourse_relation=relation,
        distractor_source_ids=tuple(c.chunk_id for c in rec.chunks if c.chunk_id in used_set),
    )
    return example, relation


def build_dataset(
    raw: Sequence[RawRecord],
    config: RewriteConfig,
    client: ChatClient | None = None,
    name: str = "tiered",
) -> BuildResult:
    """Rewrite a seeded share of ``raw`` and tier every record.

    Which records get rewritten is fixed by a shuffle seeded with
    ``config.seed``.  Failed rewrites are logged, counted and emitted
    un-rewritten.  Output order is input order.
    """
    n = len(raw)
    n_rewrite = int(math.floor(config.rewrite_fraction * n + 0.5))
    chosen = set(np.random.default_rng(config.seed).permutation(n)[:n_rewrite].tolist())

    def work(i: int):
        if i in chosen:
            return _rewrite_record(raw[i], config, client)
        return _plain_example(raw[i]), None

    if client is None:
        results = [work(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            results = list(pool.map(work, range(n)))

    report = BuildReport(total=n, selected=len(chosen))
    for (example, outcome) in results:
        if outcome == "no_false":
            report.skipped_no_false += 1
        elif outcome == "failed":
            report.failures += 1
            report.failed_query_ids.append(example.query_id)
        elif outcome is not None:
            report.rewritten += 1
            report.relations[outcome] += 1
    return BuildResult(Dataset(name, tuple(ex for ex, _ in results)), report)
