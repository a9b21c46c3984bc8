import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qexpert.embed import EmbeddingTable
from qexpert.model import (FULL_FILTERS, UnknownUserError, answer_forward, encode, init_params,
                           question_forward, score, user_vector)
from qexpert.nn import SGD, ConvSpec
from qexpert.train import train_step
from conftest import full_gradcheck


def straight_line(ids, params):
    """Single-sequence forward written with scalar loops only (no dropout)."""
    E = params.word_emb.data
    F = params.spec.filters_per_size
    merged = []
    for W, b in zip(params.conv_W, params.conv_b):
        m = W.data.shape[1]
        for f in range(F):
            best = None
            for t in range(len(ids) - m + 1):
                s = b.data[f]
                for i in range(m):
                    for j in range(E.shape[1]):
                        s += E[ids[t + i], j] * W.data[f, i, j]
                s = max(s, 0.0)
                best = s if best is None or s > best else best
            merged.append(best)
    P, pb = params.proj_W.data, params.proj_b.data
    return np.array([sum(merged[i] * P[i, o] for i in range(len(merged))) + pb[o]
                     for o in range(P.shape[1])])


class TestShapes:
    def test_full_size_merge(self):
        spec = ConvSpec((2, 3, 4), FULL_FILTERS, 50, 100)
        p = init_params(spec, 30, 200, rng=np.random.default_rng(0))
        h, cache = encode(np.zeros((2, 50), dtype=np.int64), p)
        assert cache[3].shape == (2, 1500) and h.shape == (2, 200)

    @pytest.mark.parametrize("m,height", [(2, 49), (3, 48), (4, 47), (5, 46)])
    def test_conv_heights(self, m, height):
        p = init_params(ConvSpec((m,), 2, 50, 3), 5, 4, rng=np.random.default_rng(0))
        _, cache = encode(np.ones((1, 50), dtype=np.int64), p)
        assert cache[2][0][0].shape == (1, height, 2)

    def test_out_dim_follows_user_table(self):
        users = EmbeddingTable(["a", "b"], np.ones((2, 200)))
        p = init_params(ConvSpec((2,), 2, 5, 3), 5, 17, user_table=users, rng=np.random.default_rng(0))
        assert p.out_dim == 200

    def test_all_pad_gives_projection_bias(self):
        p = init_params(ConvSpec((2, 3), 4, 8, 5), 10, 6, rng=np.random.default_rng(0))
        p.proj_b.data[:] = np.arange(6)
        np.testing.assert_array_equal(question_forward(np.zeros(8, dtype=np.int64), p), np.arange(6))

    def test_bad_ids(self):
        p = init_params(ConvSpec((2,), 2, 4, 3), 5, 4, rng=np.random.default_rng(0))
        with pytest.raises(IndexError):
            encode(np.array([[0, 1, 2, 9]]), p)
        with pytest.raises(ValueError):
            encode(np.array([[0, 1, 2]]), p)
        with pytest.raises(TypeError):
            encode(np.array([[0.0, 1, 2, 3]]), p)


class TestOracle:
    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(0, 11), min_size=6, max_size=6), st.integers(0, 1000))
    def test_matches_straight_line(self, ids, seed):
        p = init_params(ConvSpec((2,), 3, 6, 4), 12, 5, rng=np.random.default_rng(seed), dtype=np.float64)
        p.word_emb.data[:] = np.random.default_rng(seed + 1).normal(size=(12, 4))
        p.conv_b[0].data[:] = [0.1, -0.2, 0.3]
        np.testing.assert_allclose(question_forward(np.array(ids), p), straight_line(ids, p), atol=1e-12)

    def test_two_sizes(self, toy):
        p, data, _, _ = toy(sizes=(2, 3))
        for rec in data.records.values():
            ids = data.bank.ids(rec.text)
            np.testing.assert_allclose(question_forward(ids, p), straight_line(ids, p), atol=1e-12)


class TestUsers:
    def test_known_row_verbatim(self, toy):
        p, *_ = toy()
        np.testing.assert_array_equal(user_vector("u2", p), p.user_emb.data[2])

    def test_unknown(self, toy):
        p, *_ = toy()
        with pytest.raises(UnknownUserError):
            user_vector("nobody", p)

    def test_qa_model_has_no_users(self, toy):
        p, *_ = toy(qa=True)
        with pytest.raises(UnknownUserError):
            user_vector("u0", p)

    @pytest.mark.parametrize("trainable", [True, False])
    def test_fine_tune_changes_rows_iff_trainable(self, toy, trainable):
        p, data, triples, cfg = toy(fine_tune=trainable, margin=2.5)
        before = p.user_emb.data.copy()
        train_step(triples, p, SGD(p.parameters(), 0.1), cfg, np.random.default_rng(0), data)
        touched = sorted({p.user_index[u] for t in triples for u in (t.pos_user_id, t.neg_user_id)})
        changed = np.any(p.user_emb.data != before, axis=1)
        if trainable:
            assert changed[touched].all()
        else:
            assert not changed.any()


class TestScore:
    def _model(self):
        users = EmbeddingTable(["a", "b", "c"], np.zeros((3, 4)))
        p = init_params(ConvSpec((2,), 3, 5, 3), 6, 4, user_table=users, rng=np.random.default_rng(0),
                        dtype=np.float64)
        q = question_forward(np.array([1, 2, 3, 4, 5]), p)
        p.user_emb.data[0] = q
        r = np.random.default_rng(1).normal(size=q.shape)
        p.user_emb.data[1] = r - (r @ q) / (q @ q) * q
        p.user_emb.data[2] = 7.3 * q
        return p

    def test_values(self):
        p = self._model()
        ids = np.array([1, 2, 3, 4, 5])
        assert score(ids, "a", p) == pytest.approx(1.0)
        assert score(ids, "b", p) == pytest.approx(0.0, abs=1e-12)
        assert score(ids, "c", p) == pytest.approx(score(ids, "a", p))


class TestTower:
    def test_siamese(self, toy):
        p, data, *_ = toy(qa=True)
        ids = data.bank.ids("w1 w2 w3")
        np.testing.assert_array_equal(answer_forward(ids, p), question_forward(ids, p))

    def test_eval_deterministic(self, toy):
        p, data, *_ = toy(dropout=0.5)
        ids = data.bank.ids("w1 w5 w3 w3")
        assert question_forward(ids, p).tobytes() == question_forward(ids, p).tobytes()

    def test_dropout_zero_train_equals_eval(self, toy):
        p, data, *_ = toy(dropout=0.0)
        ids = data.bank.ids("w1 w5 w3 w3")
        np.testing.assert_array_equal(question_forward(ids, p, "train", np.random.default_rng(0)),
                                      question_forward(ids, p))

    def test_dropout_changes_train_output(self, toy):
        p, data, *_ = toy(dropout=0.5)
        ids = data.bank.ids("w1 w5 w3 w3")
        assert not np.array_equal(question_forward(ids, p, "train", np.random.default_rng(0)),
                                  question_forward(ids, p))

    @pytest.mark.parametrize("qa", [False, True])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradcheck_every_group(self, toy, qa, seed):
        p, data, triples, cfg = toy(seed=seed, qa=qa)
        names = {n for n, t in p.named_tensors() if t.trainable}
        assert names >= {"word_emb", "conv2_W", "conv3_b", "proj_W"}
        assert ("user_emb" in names) == (not qa)
        assert full_gradcheck(p, data, triples, cfg) < 1e-4

    def test_copy_is_independent(self, toy):
        p, *_ = toy()
        q = p.copy()
        q.proj_W.data += 1
        assert not np.array_equal(p.proj_W.data, q.proj_W.data)
        p.load_state(q)
        np.testing.assert_array_equal(p.proj_W.data, q.proj_W.data)
