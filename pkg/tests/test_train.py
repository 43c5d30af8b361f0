import numpy as np
import pytest

from helpers import random_dataset
from lore.embed import EncoderParams, TextEncoder, embed_documents, init_params
from lore.errors import MissingEmbedding, NoPositives, NonFiniteLoss
from lore.loss import LossConfig
from lore.optim import OptimizerConfig
from lore.synthetic import make_separable_corpus
from lore.tiers import Candidate, Chunk, Dataset, TieredQueryExample, TierLabel
from lore.train import (
    TierScores,
    TrainConfig,
    _batch_step,
    _prepare,
    load_checkpoint,
    read_metrics,
    save_checkpoint,
    summarize,
    track_tier_scores,
    train,
    train_seeds,
    write_metrics,
)
from oracles import rel_err


def test_config_validation_and_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.epochs, cfg.seed) == (32, 1, 0)
    assert cfg.loss == LossConfig()
    for bad in ({"learning_rate": -1.0}, {"epochs": 0}, {"batch_size": 0}, {"learning_rate": float("nan")}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_zero_learning_rate_is_a_no_op(tiny_setup):
    ds, params, docs = tiny_setup
    report = train(ds, ds, docs, params, TrainConfig(learning_rate=0.0, batch_size=len(ds), epochs=3))
    assert report.final_params == params
    losses = [v for _, v in report.loss_curve]
    assert len(losses) == 3 and max(losses) - min(losses) <= 1e-12
    assert len({v for _, v in report.val_curve}) == 1


def test_step_count_and_logging(tiny_setup):
    ds, params, docs = tiny_setup
    report = train(ds, None, docs, params, TrainConfig(batch_size=5, epochs=2, log_every=4))
    assert report.steps == 6
    assert [s for s, _ in report.tier_scores] == [0, 4, 6]
    recs = report.metrics_records()
    assert recs[0]["train_loss"] is None and recs[0]["step"] == 0
    assert "val_loss" not in recs[0]


def test_determinism_and_frozen_inputs(tiny_setup):
    ds, params, docs = tiny_setup
    before_params = params.copy()
    before_docs = {k: v.copy() for k, v in docs.items()}
    cfg = TrainConfig(batch_size=4, epochs=2)
    a = train(ds, ds, docs, params, cfg)
    b = train(ds, ds, docs, params, cfg)
    assert a.loss_curve == b.loss_curve
    assert a.val_curve == b.val_curve
    assert a.tier_scores == b.tier_scores
    assert a.final_params == b.final_params
    assert params == before_params
    assert all(np.array_equal(docs[k], before_docs[k]) for k in docs)
    c = train(ds, ds, docs, params, TrainConfig(batch_size=4, epochs=2, seed=1))
    assert c.loss_curve != a.loss_curve


def test_batch_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    ds = random_dataset(rng, 3, 5)
    params = init_params(6, 64, seed=1)
    docs = embed_documents(ds, init_params(6, 64, seed=2))
    items = _prepare(ds, docs, 64, require_positive=True)
    cfg = LossConfig(tau=0.5)
    _, grad = _batch_step(items, params, cfg, 1)
    analytic = grad.to_dense()[:, grad.columns]
    w = params.projection
    fd = np.zeros_like(analytic)
    h = 1e-6
    for j, col in enumerate(grad.columns.tolist()):
        for i in range(w.shape[0]):
            old = w[i, col]
            w[i, col] = old + h
            up = _batch_step(items, params, cfg, 1)[0]
            w[i, col] = old - h
            dn = _batch_step(items, params, cfg, 1)[0]
            w[i, col] = old
            fd[i, j] = (up - dn) / (2 * h)
    assert rel_err(analytic, fd) < 1e-6


def test_preflight_errors(tiny_setup):
    ds, params, docs = tiny_setup
    no_pos = TieredQueryExample("bad", "q", (Candidate(Chunk(0, "x y"), TierLabel.N2),))
    with pytest.raises(NoPositives) as info:
        train(Dataset("d", (*ds.examples, no_pos)), None, docs, params, TrainConfig())
    assert info.value.query_id == "bad"
    missing = dict(docs)
    key = next(iter(missing))
    del missing[key]
    with pytest.raises(MissingEmbedding) as info:
        train(ds, None, missing, params, TrainConfig())
    assert info.value.key == key
    with pytest.raises(ValueError):
        train(Dataset("d", ()), None, docs, params, TrainConfig())


def test_non_finite_guard(tiny_setup):
    ds, params, docs = tiny_setup
    bad = EncoderParams(np.full((params.embed_dim, params.feature_dim), np.inf))
    with pytest.raises(NonFiniteLoss) as info, np.errstate(invalid="ignore"):
        train(ds, None, docs, bad, TrainConfig())
    assert info.value.step == 1


def test_track_tier_scores_cases():
    params = init_params(4, 16, seed=0)
    q_text = "alpha"
    u = TextEncoder(params)(q_text)
    ex = TieredQueryExample(
        "q", q_text,
        tuple(Candidate(Chunk(i, f"c{i}"), t) for i, t in enumerate([TierLabel.P, TierLabel.N2, TierLabel.N2])),
    )
    same = {f"q/{i}": u for i in range(3)}
    assert track_tier_scores([ex], params, same) == TierScores(pytest.approx(1.0), None, pytest.approx(1.0))
    ortho = np.linalg.svd(u[None, :])[2][1]
    one = TieredQueryExample("q", q_text, (Candidate(Chunk(0, "c"), TierLabel.P),))
    assert track_tier_scores([one], params, {"q/0": ortho}).p == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        track_tier_scores([], params, same)


def test_track_tier_scores_brute_force():
    rng = np.random.default_rng(12)
    ds = random_dataset(rng, 8, 7)
    params = init_params(8, 256, seed=4)
    docs = embed_documents(ds, init_params(8, 256, seed=5))
    enc = TextEncoder(params)
    pairs = {t: [] for t in TierLabel}
    for ex in ds:
        q = enc(ex.query_text)
        for c in ex.candidates:
            pairs[c.tier].append(float(sum(a * b for a, b in zip(q, docs[ex.chunk_key(c.chunk.chunk_id)]))))
    got = track_tier_scores(list(ds), params, docs)
    for value, tier in zip(got, TierLabel):
        assert abs(value - sum(pairs[tier]) / len(pairs[tier])) <= 1e-12


def test_lore_lowers_distractor_scores_more_than_infonce():
    ds = make_separable_corpus(60, seed=0)
    params = init_params(32, 4096, seed=0)
    docs = embed_documents(ds, params)
    lore = train(ds, None, docs, params, TrainConfig(batch_size=8))
    base = train(ds, None, docs, params, TrainConfig(batch_size=8, loss=LossConfig.infonce()))
    assert lore.tier_scores[-1][1].n1 < base.tier_scores[-1][1].n1
    assert lore.tier_scores[-1][1].n1 < lore.tier_scores[0][1].n1


def test_sgd_training_runs(tiny_setup):
    ds, params, docs = tiny_setup
    report = train(ds, None, docs, params, TrainConfig(learning_rate=0.5, optimizer=OptimizerConfig("sgd")))
    assert report.final_params != params


def test_seeds_summary_and_persistence(tiny_setup, tmp_path):
    ds, params, docs = tiny_setup
    reports = train_seeds(ds, ds, docs, params, TrainConfig(batch_size=5), seeds=(0, 1, 2))
    assert sorted(reports) == [0, 1, 2]
    summary = summarize(reports)
    finals = [r.metrics_records()[-1]["val_loss"] for r in reports.values()]
    assert summary["final"]["val_loss"]["mean"] == pytest.approx(np.mean(finals))
    assert summary["final"]["val_loss"]["std"] == pytest.approx(np.std(finals))
    write_metrics(reports[0], tmp_path / "m.jsonl")
    assert read_metrics(tmp_path / "m.jsonl") == reports[0].metrics_records()
    save_checkpoint(tmp_path / "a.npz", reports[0].final_params, {"seed": 0})
    save_checkpoint(tmp_path / "b.npz", reports[0].final_params, {"seed": 0})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back, meta = load_checkpoint(tmp_path / "a.npz")
    assert back == reports[0].final_params and meta == {"seed": 0}
