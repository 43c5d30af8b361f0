"""
From boolean labels to P / N1 / N2 tiers
========================================

A raw corpus labels each chunk True (relevant) or False.  Building the
tiered dataset samples a few False chunks per query as distractors, picks
a discourse relation and rewrites the query around them.  Distractors the
rewrite used become N1; the other False chunks are N2.

No LLM is needed here: the offline path uses a fixed connective per
relation.  Pass any chat client to ``build_dataset`` for model rewrites.
"""

from collections import Counter

from lore.rewrite import RewriteConfig, build_dataset
from lore.synthetic import make_raw_corpus

raw = make_raw_corpus(n_queries=40, seed=0)
result = build_dataset(raw, RewriteConfig(max_distractors=2, rewrite_fraction=0.75, seed=0))

print(result.report.to_dict())

ex = next(e for e in result.dataset if e.rewritten_query)
print("original :", ex.original_query)
print("rewritten:", ex.rewritten_query)
print("relation :", ex.discourse_relation.value)
for cand in ex.candidates:
    print(f"  [{cand.tier.value:>2}] {cand.chunk.text}")

# Tier counts over the whole build
print(Counter(c.tier.value for e in result.dataset for c in e.candidates))
