"""Independent reference implementations used as test oracles.

None of these reuse library code paths: losses are evaluated directly from
the formula in 50-digit arithmetic, retrieval by a full Python sort, and Adam
on a dense matrix.
"""

import mpmath
import numpy as np

from lore.tiers import TierLabel

mpmath.mp.dps = 50


def mp_tier_loss(tiers, sims, tau, alpha, beta):
    """Mean over positives of -log(e_k / (e_k + sum over negatives)) with tier weights."""
    tau, alpha, beta = mpmath.mpf(tau), mpmath.mpf(alpha), mpmath.mpf(beta)
    weight = {TierLabel.N1: beta, TierLabel.N2: alpha}
    neg = mpmath.fsum(
        weight[t] * mpmath.exp(mpmath.mpf(s) / tau) for t, s in zip(tiers, sims) if t is not TierLabel.P
    )
    terms = []
    for t, s in zip(tiers, sims):
        if t is TierLabel.P:
            e = mpmath.exp(mpmath.mpf(s) / tau)
            terms.append(-mpmath.log(e / (e + neg)))
    return mpmath.fsum(terms) / len(terms)


def mp_infonce(pos_sims, neg_sims, tau):
    """Textbook InfoNCE: each positive against the pooled negatives."""
    tau = mpmath.mpf(tau)
    logits_neg = [mpmath.mpf(s) / tau for s in neg_sims]
    out = []
    for s in pos_sims:
        z = mpmath.mpf(s) / tau
        out.append(mpmath.log(mpmath.fsum([mpmath.exp(z)] + [mpmath.exp(v) for v in logits_neg])) - z)
    return mpmath.fsum(out) / len(out)


def fd_loss_grad(tiers, sims, tau, alpha, beta, h=1e-6):
    """Central differences of :func:`mp_tier_loss` in each similarity."""
    grad = np.empty(len(sims))
    for i in range(len(sims)):
        up = [mpmath.mpf(s) for s in sims]
        dn = list(up)
        up[i] += h
        dn[i] -= h
        grad[i] = float((mp_tier_loss(tiers, up, tau, alpha, beta) - mp_tier_loss(tiers, dn, tau, alpha, beta)) / (2 * h))
    return grad


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def brute_topk(ids, sims, k):
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [ids[i] for i in order[:k]]


def brute_evaluate(dataset, encode_query, doc_embeddings, ks, disturbed=False, global_pool=False):
    """Macro recall@k per tier by scoring every candidate and fully sorting.

    Returns ``({k: recall_P}, {k: recall_N1}, n_P, n_N1)`` with None where no
    query was evaluated.
    """
    pool = []
    if global_pool:
        for ex in dataset:
            for c in ex.candidates:
                pool.append(((ex.query_id, c.chunk.chunk_id), doc_embeddings[f"{ex.query_id}/{c.chunk.chunk_id}"]))
    rec_p = {k: [] for k in ks}
    rec_n1 = {k: [] for k in ks}
    for ex in dataset:
        text = ex.rewritten_query if disturbed else ex.original_query
        if text is None:
            continue
        q = encode_query(text)
        if global_pool:
            cands = pool
            p = {(ex.query_id, c.chunk.chunk_id) for c in ex.candidates if c.tier is TierLabel.P}
            n1 = {(ex.query_id, c.chunk.chunk_id) for c in ex.candidates if c.tier is TierLabel.N1}
        else:
            cands = [(c.chunk.chunk_id, doc_embeddings[f"{ex.query_id}/{c.chunk.chunk_id}"]) for c in ex.candidates]
            p = {c.chunk.chunk_id for c in ex.candidates if c.tier is TierLabel.P}
            n1 = {c.chunk.chunk_id for c in ex.candidates if c.tier is TierLabel.N1}
        if not disturbed:
            n1 = set()
        ids = [i for i, _ in cands]
        sims = [float(np.dot(v, q)) for _, v in cands]
        for k in ks:
            top = set(brute_topk(ids, sims, k))
            if p:
                rec_p[k].append(len(top & p) / len(p))
            if n1:
                rec_n1[k].append(len(top & n1) / len(n1))
    mean = lambda xs: sum(xs) / len(xs) if xs else None
    n_p = len(rec_p[ks[0]])
    n_n1 = len(rec_n1[ks[0]])
    return {k: mean(rec_p[k]) for k in ks}, {k: mean(rec_n1[k]) for k in ks}, n_p, n_n1


class DenseAdam:
    """Textbook Adam on a full matrix."""

    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps

    def step(self, w, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        w -= self.lr * mh / (np.sqrt(vh) + self.eps)
