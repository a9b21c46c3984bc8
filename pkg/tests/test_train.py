import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import qexpert.train as tr
from qexpert.corpus import Answer, Dataset, QuestionRecord, SyntheticConfig, Triple, generate_synthetic
from qexpert.estimators import QUserCNN
from qexpert.nn import SGD, Adam
from qexpert.train import (EvalReport, MissingIdError, TrainConfig, evaluate_top1, fit, hinge_loss,
                           hinge_loss_grad, rank_candidates, train_step)
from conftest import NoStep, full_gradcheck, make_toy


class TestHinge:
    @pytest.mark.parametrize("sp,sn,expected", [(0.9, 0.2, 0.0), (0.3, 0.3, 0.1), (0.50, 0.45, 0.05)])
    def test_examples(self, sp, sn, expected):
        assert hinge_loss(sp, sn, 0.1) == pytest.approx(expected, abs=1e-15)

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(1e-3, 2))
    def test_nonnegative_and_zero_iff_margin_met(self, sp, sn, margin):
        loss = hinge_loss(sp, sn, margin)
        assert loss >= 0
        assert (loss == 0) == (sp - sn >= margin)

    def test_kink_subgradient_zero(self):
        # 0.25 and 0.5 are exact in binary, so this sits exactly on the kink
        gp, gn = hinge_loss_grad(np.array([0.5]), np.array([0.5]) - 0.25, 0.25)
        assert gp[0] == 0 and gn[0] == 0

    def test_bad_margin(self):
        with pytest.raises(ValueError):
            hinge_loss(0.1, 0.2, 0.0)
        with pytest.raises(ValueError):
            TrainConfig(margin=-1)


class TestTrainStep:
    @pytest.mark.parametrize("opt", [SGD, Adam])
    def test_zero_loss_batch_leaves_params(self, toy, opt):
        p, data, triples, cfg = toy()
        # keep only triples the model already ranks correctly, with a margin of 1e-6
        cfg0 = TrainConfig(**{**cfg.to_dict(), "margin": 1e-6})
        good = [t for t in triples if tr.batch_loss([t], p, cfg0, data) == 0]
        assert good
        before = [x.data.copy() for x in p.parameters()]
        loss = train_step(good, p, opt(p.parameters(), 0.1), cfg0, np.random.default_rng(0), data)
        assert loss == 0
        for b, x in zip(before, p.parameters()):
            assert b.tobytes() == x.data.tobytes()

    @pytest.mark.parametrize("i", range(4))
    def test_single_triple_gradcheck(self, toy, i):
        p, data, triples, cfg = toy(seed=i)
        assert full_gradcheck(p, data, [triples[i]], cfg) < 1e-4

    def test_returns_mean_loss(self, toy):
        p, data, triples, cfg = toy()
        expected = tr.batch_loss(triples, p, cfg, data)
        got = train_step(triples, p, NoStep(p.parameters()), cfg, np.random.default_rng(0), data)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_missing_user(self, toy):
        p, data, triples, cfg = toy()
        bad = [Triple(triples[0].question_id, "ghost", triples[0].neg_user_id)]
        assert train_step(bad, p, NoStep(p.parameters()), cfg, np.random.default_rng(0), data) == 0.0
        cfg_abort = TrainConfig(**{**cfg.to_dict(), "on_missing": "abort"})
        with pytest.raises(MissingIdError):
            train_step(bad, p, NoStep(p.parameters()), cfg_abort, np.random.default_rng(0), data)


def small_synthetic(seed=0, n=200, with_answers=False):
    cfg = SyntheticConfig(n_questions=n, vocab_size=200, with_answers=with_answers)
    d, experts, _ = generate_synthetic(cfg, np.random.default_rng(seed), {"train": n, "test1": 100})
    return d, experts


class TestFit:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_epoch10_loss_below_epoch1(self, seed):
        d, _ = small_synthetic(seed)
        est = QUserCNN(region_sizes=(2, 3), filters_per_size=10, seq_len=20, word_dim=16, out_dim=32,
                       learning_rate=1e-3, epochs=10, dropout=0.5, random_state=seed).fit(d["train"])
        losses = [h.mean_loss for h in est.history_]
        assert len(losses) == 10 and losses[9] < losses[0]

    def test_epoch_total_is_sum_of_batch_losses(self, toy, monkeypatch):
        p, data, triples, cfg = toy()
        train = Dataset("train", list(data.records.values()))
        cfg = TrainConfig(**{**cfg.to_dict(), "batch_size": 3, "epochs": 2, "optimizer": "sgd",
                             "learning_rate": 0.05})
        seen = []
        orig = tr.train_step

        def spy(batch, params, *a, **k):
            # dropout is 0, so the pre-step eval loss is the training loss
            seen.append(tr.batch_loss(batch, params, cfg, data) * len(batch))
            return orig(batch, params, *a, **k)

        monkeypatch.setattr(tr, "train_step", spy)
        res = fit(p, train, data, cfg)
        n_batches = len(res.history[0].batch_losses)
        for e, log in enumerate(res.history):
            assert log.total_loss == pytest.approx(sum(log.batch_losses), rel=1e-9)
            assert log.total_loss == pytest.approx(sum(seen[e * n_batches:(e + 1) * n_batches]), rel=1e-9)

    def test_early_stopping_restores_best(self, toy):
        p, data, triples, cfg = toy()
        train = Dataset("train", list(data.records.values()))
        cfg = TrainConfig(**{**cfg.to_dict(), "epochs": 20, "patience": 2, "learning_rate": 0.01})
        scores = iter([0.5, 0.7, 0.6, 0.6, 0.9])
        snaps = []

        def dev(params):
            snaps.append(params.proj_W.data.copy())
            return next(scores)

        res = fit(p, train, data, cfg, dev)
        assert len(res.history) == 4 and res.best_epoch == 2 and res.best_dev == 0.7
        np.testing.assert_array_equal(p.proj_W.data, snaps[1])

    def test_no_triples(self, toy):
        p, data, _, cfg = toy()
        ds = Dataset("train", [QuestionRecord("x", "t", (Answer("u0", 1),))])
        with pytest.raises(ValueError):
            fit(p, ds, data, cfg)


class TestRank:
    def test_pool_of_one(self, toy):
        p, data, *_ = toy()
        assert [u for u, _ in rank_candidates(data.bank.ids("w1 w2"), ["u3"], p)] == ["u3"]

    def test_tie_goes_to_smaller_id(self, toy):
        p, data, *_ = toy()
        p.user_emb.data[4] = p.user_emb.data[1]
        ranked = rank_candidates(data.bank.ids("w1 w2"), ["u4", "u1"], p)
        assert ranked[0][1] == ranked[1][1] and [u for u, _ in ranked] == ["u1", "u4"]

    def test_unknown_excluded(self, toy):
        p, data, *_ = toy()
        assert {u for u, _ in rank_candidates(data.bank.ids("w1"), ["u1", "ghost"], p)} == {"u1"}

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**16), st.floats(0.01, 100))
    def test_rescaling_invariance(self, seed, alpha):
        p, data, *_ = make_toy(seed=seed % 50)
        ids = data.bank.ids("w3 w1 w4 w1 w5")
        cands = list(p.user_ids)
        before = [u for u, _ in rank_candidates(ids, cands, p)]
        p.user_emb.data *= alpha
        assert [u for u, _ in rank_candidates(ids, cands, p)] == before

    def test_sorted_descending(self, toy):
        p, data, *_ = toy()
        s = [x for _, x in rank_candidates(data.bank.ids("w2 w9"), p.user_ids, p)]
        assert s == sorted(s, reverse=True)


def gold_dataset(n, n_users=30, split="test1"):
    rng = np.random.default_rng(n)
    recs = []
    for i in range(n):
        a, b = rng.choice(n_users, 2, replace=False)
        recs.append(QuestionRecord(f"q{i}", "t", (Answer(f"u{a}", 5), Answer(f"u{b}", 1))))
    return Dataset(split, recs)


class PerfectScorer:
    users = [f"u{i}" for i in range(30)]

    def __call__(self, rec, candidates):
        g = rec.gold_user()
        return sorted(((u, float(u == g)) for u in candidates), key=lambda x: (-x[1], x[0]))


class RandomScorer(PerfectScorer):
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def __call__(self, rec, candidates):
        s = self.rng.random(len(candidates))
        return sorted(zip(candidates, s), key=lambda x: (-x[1], x[0]))


class TestEvaluate:
    def test_perfect(self):
        assert evaluate_top1(PerfectScorer(), gold_dataset(200), 10, 0).top1_accuracy == 1.0

    def test_random_near_one_over_k(self):
        r = evaluate_top1(RandomScorer(0), gold_dataset(10_000), 10, 0)
        assert r.n_questions == 10_000
        assert abs(r.top1_accuracy - 0.10) <= 0.01

    def test_k1_trivially_correct(self):
        assert evaluate_top1(RandomScorer(0), gold_dataset(50), 1, 0).top1_accuracy == 1.0

    def test_empty_eligible_raises(self):
        tied = Dataset("test1", [QuestionRecord("q", "t", (Answer("u1", 2), Answer("u2", 2)))])
        with pytest.raises(ValueError):
            evaluate_top1(PerfectScorer(), tied, 10, 0)

    def test_skips_are_reported(self):
        ds = gold_dataset(20)
        ds = Dataset("test1", ds.records + [QuestionRecord("tie", "t", (Answer("u1", 2), Answer("u2", 2))),
                                            QuestionRecord("out", "t", (Answer("stranger", 9),))])
        r = evaluate_top1(PerfectScorer(), ds, 5, 0)
        assert r.n_questions == 20 and set(r.skipped) == {"tie", "out"}

    def test_accuracy_definition_and_json(self):
        ds = gold_dataset(300)
        r = evaluate_top1(RandomScorer(1), ds, 10, 3, dump_rankings=True)
        gold = {rec.question_id: rec.gold_user() for rec in ds}
        hits = sum(ranking[0][0] == gold[q] for q, ranking in r.ranked.items())
        assert r.top1_accuracy == hits / r.n_questions
        assert isinstance(r, EvalReport) and '"top1_accuracy"' in r.to_json()

    def test_pools_reproducible_and_threads_agree(self):
        ds = gold_dataset(200)
        a = evaluate_top1(PerfectScorer(), ds, 10, 4, dump_rankings=True)
        b = evaluate_top1(PerfectScorer(), ds, 10, 4, dump_rankings=True, threads=3)
        assert a.to_json() == b.to_json()
