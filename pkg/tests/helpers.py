"""Random instance generators shared by the test modules."""

import numpy as np
from hypothesis import strategies as st

from lore.tiers import Candidate, Chunk, Dataset, DiscourseRelation, TieredQueryExample, TierLabel


def random_unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_dataset(rng, n_queries, max_candidates, name="rand"):
    """Small dataset with plain-text chunks and random tiers; every query has a P."""
    examples = []
    for q in range(n_queries):
        n = int(rng.integers(1, max_candidates + 1))
        tiers = [TierLabel.P] + [TierLabel(t) for t in rng.choice(["P", "N1", "N2"], size=n - 1)]
        rng.shuffle(tiers)
        ids = rng.choice(100, size=n, replace=False).tolist()
        cands = tuple(Candidate(Chunk(i, f"chunk {q} {i} w{rng.integers(50)} w{rng.integers(50)}"), t)
                      for i, t in zip(ids, tiers))
        n1 = tuple(i for i, t in zip(ids, tiers) if t is TierLabel.N1)
        examples.append(TieredQueryExample(
            query_id=f"q{q}",
            original_query=f"query {q} w{rng.integers(50)} w{rng.integers(50)}",
            candidates=cands,
            rewritten_query=f"query {q} w{rng.integers(50)} plus w{rng.integers(50)}" if n1 else None,
            discourse_relation=DiscourseRelation.CAUSAL if n1 else None,
            distractor_source_ids=n1,
        ))
    return Dataset(name, tuple(examples))


def random_tiers(rng, max_p=4, max_n1=8, max_n2=8, min_p=1):
    n_p = int(rng.integers(min_p, max_p + 1))
    n1 = int(rng.integers(0, max_n1 + 1))
    n2 = int(rng.integers(0, max_n2 + 1))
    tiers = [TierLabel.P] * n_p + [TierLabel.N1] * n1 + [TierLabel.N2] * n2
    rng.shuffle(tiers)
    return tuple(tiers)


def random_sims(rng, n):
    return rng.uniform(-1.0, 1.0, size=n)


# -- hypothesis strategies ---------------------------------------------------

_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
    min_size=1,
    max_size=40,
).filter(lambda s: s.strip())


@st.composite
def tiered_examples(draw, query_id=None):
    n = draw(st.integers(1, 6))
    ids = draw(st.lists(st.integers(0, 10_000), min_size=n, max_size=n, unique=True))
    tiers = draw(st.lists(st.sampled_from(list(TierLabel)), min_size=n, max_size=n))
    candidates = tuple(Candidate(Chunk(i, draw(_text)), t) for i, t in zip(ids, tiers))
    n1 = tuple(i for i, t in zip(ids, tiers) if t is TierLabel.N1)
    rewritten = None
    relation = None
    if n1 and draw(st.booleans()):
        rewritten = draw(_text)
        relation = draw(st.sampled_from(list(DiscourseRelation)))
    elif draw(st.booleans()):
        relation = draw(st.sampled_from(list(DiscourseRelation)))
    return TieredQueryExample(
        query_id=query_id if query_id is not None else draw(_text),
        original_query=draw(st.text(max_size=40)),
        candidates=candidates,
        rewritten_query=rewritten,
        discourse_relation=relation,
        distractor_source_ids=n1,
    )


@st.composite
def datasets(draw, max_examples=5):
    n = draw(st.integers(0, max_examples))
    qids = draw(st.lists(_text, min_size=n, max_size=n, unique=True))
    return Dataset("h", tuple(draw(tiered_examples(query_id=q)) for q in qids))
