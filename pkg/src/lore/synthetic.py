"""Synthetic tiered corpora with a known right answer.

Every query has a dedicated key word shared only with its positive chunks.
Its rewritten form also carries "surface" words copied from the distractor
chunks, so a purely lexical encoder ranks distractors above positives.  A
query encoder that learns to discount surface words separates the tiers.

Key, surface and filler words come from shared pools, so what is learned on
one corpus transfers to another corpus drawn with a different seed.
"""

from __future__ import annotations

import string

import numpy as np

from .rewrite import RawRecord
from .tiers import Candidate, Chunk, Dataset, DiscourseRelation, TieredQueryExample, TierLabel

_LETTERS = np.array(list(string.ascii_lowercase))


def _words(rng: np.random.Generator, n: int, lo: int, hi: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_LETTERS, size=int(rng.integers(lo, hi + 1))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def word_pools(
    pool_seed: int = 1234, n_surface: int = 150, n_filler: int = 600, n_keys: int = 300
) -> tuple[list[str], list[str], list[str]]:
    """The shared surface, filler and key vocabularies."""
    rng = np.random.default_rng(pool_seed)
    taken: set[str] = set()
    return (
        _words(rng, n_surface, 5, 8, taken),
        _words(rng, n_filler, 5, 8, taken),
        _words(rng, n_keys, 9, 11, taken),
    )


def make_separable_corpus(
    n_queries: int = 200,
    seed: int = 0,
    n_positives: int = 2,
    n_distractors: int = 2,
    n_negatives: int = 6,
    surface_per_distractor: int = 3,
    filler_per_chunk: int = 5,
    name: str | None = None,
    pool_seed: int = 1234,
    n_keys: int = 300,
) -> Dataset:
    """Tiered dataset where positives share a dedicated key with their query.

    * original query: ``key`` plus one filler word
    * rewritten query: the original plus each distractor's surface words
    * P: ``key`` plus filler words
    * N1: its surface words plus filler words
    * N2: filler words plus one surface word not used by the query
    """
    surface, filler, keys = word_pools(pool_seed, n_keys=n_keys)
    rng = np.random.default_rng(seed)
    relations = list(DiscourseRelation)
    examples = []
    for qi in range(n_queries):
        key = keys[int(rng.integers(len(keys)))]
        picks = rng.choice(len(surface), size=n_distractors * surface_per_distractor + n_negatives, replace=False)
        picks = [surface[i] for i in picks.tolist()]
        fill = lambda n: [filler[i] for i in rng.choice(len(filler), size=n, replace=False).tolist()]

        texts: list[tuple[str, TierLabel]] = []
        used_surface: list[str] = []
        for _ in range(n_positives):
            words = [key, *fill(filler_per_chunk)]
            rng.shuffle(words)
            texts.append((" ".join(words), TierLabel.P))
        for j in range(n_distractors):
            own = picks[j * surface_per_distractor : (j + 1) * surface_per_distractor]
            used_surface.extend(own)
            words = [*own, *fill(filler_per_chunk)]
            rng.shuffle(words)
            texts.append((" ".join(words), TierLabel.N1))
        spare = picks[n_distractors * surface_per_distractor :]
        for j in range(n_negatives):
            words = [spare[j], *fill(filler_per_chunk)]
            rng.shuffle(words)
            texts.append((" ".join(words), TierLabel.N2))

        order = rng.permutation(len(texts)).tolist()
        candidates = tuple(Candidate(Chunk(cid, texts[i][0]), texts[i][1]) for cid, i in enumerate(order))
        original = f"{key} {fill(1)[0]}"
        rewritten = " ".join([original, *used_surface])
        examples.append(
            TieredQueryExample(
                query_id=f"s{seed}-{qi:05d}",
                original_query=original,
                candidates=candidates,
                rewritten_query=rewritten,
                discourse_relation=relations[int(rng.integers(len(relations)))],
                distractor_source_ids=tuple(c.chunk.chunk_id for c in candidates if c.tier is TierLabel.N1),
            )
        )
    return Dataset(name or f"synthetic-{seed}", tuple(examples))


def make_raw_corpus(n_queries: int = 10, seed: int = 0, n_true: int = 1, n_false: int = 4) -> list[RawRecord]:
    """Small boolean-labeled corpus of sentence-like chunks for the build pipeline."""
    _, filler, _ = word_pools()
    rng = np.random.default_rng(seed)
    records = []
    for qi in range(n_queries):
        words = lambda n: " ".join(filler[i] for i in rng.choice(len(filler), size=n, replace=False).tolist())
        chunks = []
        labels = []
        for cid in range(n_true + n_false):
            chunks.append(Chunk(cid, f"{words(5).capitalize()}. {words(6).capitalize()}."))
            labels.append(cid < n_true)
        records.append(RawRecord(f"r{qi:04d}", f"Which {words(3)} are related to {words(2)}?", tuple(chunks), tuple(labels)))
    return records
