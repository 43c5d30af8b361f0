import json

import numpy as np
import pytest

from helpers import random_dataset, random_unit
from lore.embed import EncoderParams, TextEncoder, embed_documents, init_params
from lore.errors import ConfigMismatch, EmptyTier, MissingEmbedding, ParseError
from lore.evaluation import (
    EvalConfig,
    EvalReport,
    Pool,
    QueryMode,
    compare_report,
    evaluate,
    format_report,
    format_table,
    read_report,
    recall_at_k,
    retrieve_topk,
    write_report,
)
from lore.tiers import Candidate, Chunk, Dataset, TieredQueryExample, TierLabel
from oracles import brute_evaluate, brute_topk


def random_setup(seed, n_queries=20, max_candidates=15):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, int(rng.integers(1, n_queries + 1)), max_candidates)
    params = init_params(8, 512, seed=seed)
    docs = embed_documents(ds, init_params(8, 512, seed=seed + 1000))
    return ds, params, docs


# -- retrieval -------------------------------------------------------------------


def test_topk_basic_cases():
    e = np.eye(4)
    cands = [(i, e[i]) for i in range(4)]
    assert retrieve_topk(e[2], cands, 1) == [2]
    q = np.array([0.8, 0.6, 0.0, 0.0])
    assert retrieve_topk(q, cands, 10) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        retrieve_topk(q, cands, 0)


def test_topk_ties_go_to_smaller_id():
    v = random_unit(np.random.default_rng(0), 5)
    cands = [(9, v), (3, v), (7, v), (1, -v)]
    assert retrieve_topk(v, cands, 3) == [3, 7, 9]


def test_topk_matches_full_sort():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        ids = rng.choice(1000, size=n, replace=False).tolist()
        vecs = [random_unit(rng, 6) for _ in range(n)]
        if n > 2:
            vecs[1] = vecs[0]  # force an exact tie
        q = random_unit(rng, 6)
        k = int(rng.integers(1, 35))
        sims = [float(np.dot(v, q)) for v in vecs]
        assert retrieve_topk(q, list(zip(ids, vecs)), k) == brute_topk(ids, sims, k)


def test_recall_at_k_cases():
    assert recall_at_k([1, 2, 3], {1, 2}) == 1.0
    assert recall_at_k([4, 5], {1, 2}) == 0.0
    assert recall_at_k([1, 5], {1, 2}) == 0.5
    with pytest.raises(EmptyTier):
        recall_at_k([1], set())


# -- evaluate ----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("mode", list(QueryMode))
@pytest.mark.parametrize("pool", list(Pool))
def test_evaluate_matches_brute_force(seed, mode, pool):
    ds, params, docs = random_setup(seed)
    cfg = EvalConfig(query_mode=mode, pool=pool)
    rep = evaluate(ds, params, docs, cfg)
    ref_p, ref_n1, n_p, n_n1 = brute_evaluate(
        ds, TextEncoder(params), docs, cfg.ks, mode is QueryMode.DISTURBED, pool is Pool.GLOBAL
    )
    assert rep.recall_p == ref_p
    assert rep.recall_n1 == ref_n1
    assert (rep.evaluated_p, rep.evaluated_n1) == (n_p, n_n1)


def test_recall_monotone_in_k():
    for seed in range(20):
        ds, params, docs = random_setup(seed)
        for mode in QueryMode:
            rep = evaluate(ds, params, docs, EvalConfig(ks=(1, 3, 5, 10), query_mode=mode))
            for rec in (rep.recall_p, rep.recall_n1):
                vals = [rec[k] for k in (1, 3, 5, 10)]
                if vals[0] is not None:
                    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_scale_invariance():
    ds, params, docs = random_setup(3)
    base = evaluate(ds, params, docs, EvalConfig(query_mode=QueryMode.DISTURBED))
    for c in (1e-3, 0.5, 7.0, 1e4):
        scaled = EncoderParams(params.projection * c)
        assert evaluate(ds, scaled, docs, EvalConfig(query_mode=QueryMode.DISTURBED)) == base


def test_positives_nearest_gives_full_recall():
    # place document embeddings by hand around the query embedding
    q_emb = TextEncoder(init_params(4, 64, seed=0))
    ex = TieredQueryExample(
        "q", "hello world",
        (Candidate(Chunk(0, "a"), TierLabel.P), Candidate(Chunk(1, "b"), TierLabel.N2), Candidate(Chunk(2, "c"), TierLabel.N2)),
    )
    u = q_emb("hello world")
    docs = {"q/0": u, "q/1": -u, "q/2": -u}
    rep = evaluate(Dataset("d", (ex,)), q_emb.params, docs, EvalConfig(ks=(1, 2)))
    assert rep.recall_p == {1: 1.0, 2: 1.0}
    assert rep.recall_n1 == {1: None, 2: None}


def test_raw_mode_has_no_n1_and_disturbed_skips(recwarn):
    ds, params, docs = random_setup(5)
    raw = evaluate(ds, params, docs, EvalConfig())
    assert all(v is None for v in raw.recall_n1.values())
    assert raw.evaluated_n1 == 0
    plain = Dataset("p", tuple(
        TieredQueryExample(ex.query_id, ex.original_query,
                           tuple(Candidate(c.chunk, TierLabel.N2 if c.tier is TierLabel.N1 else c.tier) for c in ex.candidates))
        for ex in ds
    ))
    with pytest.warns(UserWarning):
        rep = evaluate(plain, params, docs, EvalConfig(query_mode=QueryMode.DISTURBED))
    assert rep.evaluated_p == 0 and rep.skipped_p == len(plain)
    assert all(v is None for v in rep.recall_p.values())


def test_missing_embedding():
    ds, params, docs = random_setup(6)
    docs = dict(docs)
    docs.pop(next(iter(docs)))
    with pytest.raises(MissingEmbedding):
        evaluate(ds, params, docs, EvalConfig())


def test_deterministic():
    ds, params, docs = random_setup(9)
    a = evaluate(ds, params, docs, EvalConfig(query_mode=QueryMode.DISTURBED))
    b = evaluate(ds, params, docs, EvalConfig(query_mode=QueryMode.DISTURBED))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_eval_config_validation():
    for ks in ((), (0, 3), (5, 3), (3, 3)):
        with pytest.raises(ValueError):
            EvalConfig(ks=ks)
    with pytest.raises(ValueError):
        EvalConfig(query_mode="rewritten")


# -- comparison and output ----------------------------------------------------------


def report(p, n1, ks=(3,)):
    return EvalReport(EvalConfig(ks=ks, query_mode=QueryMode.DISTURBED), 10, 10, 10, dict(zip(ks, p)), dict(zip(ks, n1)))


def test_compare_report():
    same = compare_report(report([0.5], [0.4]), report([0.5], [0.4]))
    assert same[0]["delta_P"] == 0 and same[0]["delta_N1"] == 0
    row = compare_report(report([0.5], [0.4]), report([0.7], [0.1]))[0]
    assert row["delta_P"] == pytest.approx(0.2) and row["delta_N1"] == pytest.approx(-0.3)
    assert row["better_P"] and row["better_N1"]
    with pytest.raises(ConfigMismatch):
        compare_report(report([0.5], [0.4]), report([0.5, 0.6], [0.4, 0.4], ks=(3, 5)))
    none = compare_report(report([0.5], [None]), report([0.7], [0.1]))[0]
    assert none["delta_N1"] is None and none["better_N1"] is None


def test_report_round_trip_and_text(tmp_path):
    ds, params, docs = random_setup(2)
    rep = evaluate(ds, params, docs, EvalConfig(query_mode=QueryMode.DISTURBED))
    write_report(rep, tmp_path / "r.json", tmp_path / "r.txt")
    assert read_report(tmp_path / "r.json") == rep
    text = (tmp_path / "r.txt").read_text()
    assert "@3" in text and "@10" in text and "N1(down)" in text
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ParseError):
        read_report(tmp_path / "bad.json")


def test_format_table_layout():
    raw, dist = report([0.5], [None]), report([0.7], [0.2])
    table = format_table({"raw model": {"synthetic": (raw, dist)}, "+lore": {"synthetic": (raw, dist)}})
    lines = table.splitlines()
    assert "synthetic" in lines[0]
    assert any(line.startswith("@3") and "raw model" in line and "70.00" in line and "20.00" in line for line in lines)
    assert format_report(dist).count("\n") >= 4
