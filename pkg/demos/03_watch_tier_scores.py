"""
Distractor scores fall during training
======================================

Train the query projection on a synthetic corpus where each rewritten
query copies surface words from its distractor chunks.  At the start the
hashed encoder likes distractors more than positives.  Within a single
epoch the mean distractor score drops to the level of the plain
negatives while the positives rise.
"""

from lore.embed import embed_documents, init_params
from lore.synthetic import make_separable_corpus
from lore.train import TrainConfig, train

dataset = make_separable_corpus(n_queries=200, seed=0)
frozen = init_params(seed=0)          # document encoder, never updated
docs = embed_documents(dataset, frozen)

report = train(dataset, None, docs, frozen, TrainConfig())

print(f"{'step':>4} {'loss':>8} {'P':>8} {'N1':>8} {'N2':>8}")
losses = dict(report.loss_curve)
for step, scores in report.tier_scores:
    loss = losses.get(step)
    loss = f"{loss:8.3f}" if loss is not None else " " * 8
    print(f"{step:>4} {loss} {scores.p:8.3f} {scores.n1:8.3f} {scores.n2:8.3f}")
