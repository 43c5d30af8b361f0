"""
The tier-weighted loss on toy inputs
====================================

One query, one positive, one distractor (N1) and one plain negative (N2),
all with the same cosine similarity.  Plain InfoNCE gives the positive a
third of the probability mass; weighting the distractor by beta = 3 cuts
that to a fifth, so the loss rises from ln 3 to ln 5.
"""

import math

import numpy as np

from lore.loss import LossConfig, ScoredCandidates, loss_and_grad, positive_probability, query_loss
from lore.tiers import TierLabel as T

scored = ScoredCandidates((T.P, T.N1, T.N2), np.zeros(3))

for label, cfg in [("InfoNCE", LossConfig.infonce(tau=1.0)), ("tier-weighted", LossConfig(tau=1.0))]:
    p = positive_probability(scored, 0, cfg)
    print(f"{label:>14}: p(P) = {p:.4f}  loss = {query_loss(scored, cfg):.5f}")
print(f"{'reference':>14}: ln 3 = {math.log(3):.5f}, ln 5 = {math.log(5):.5f}")

# The gradient with respect to each similarity shows who gets pushed where.
# The distractor is pushed down three times harder than the plain negative.
_, grad = loss_and_grad(scored, LossConfig(tau=1.0))
for tier, g in zip(scored.tiers, grad):
    print(f"dL/ds[{tier}] = {g:+.3f}")

# Raising beta makes every distractor more expensive, so the loss grows.
for beta in (1.0, 2.0, 3.0, 5.0, 10.0):
    cfg = LossConfig.unchecked(0.05, 1.0, beta)
    s = ScoredCandidates((T.P, T.N1, T.N2), np.array([0.6, 0.55, 0.1]))
    print(f"beta={beta:>4}: loss={query_loss(s, cfg):.4f}")
