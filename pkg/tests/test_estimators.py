import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qexpert.config import ConfigError, config_from_dict, load_config
from qexpert.corpus import SyntheticConfig, generate_synthetic
from qexpert.embed import EmbeddingTable, save_vectors
from qexpert.estimators import QACNN, DeepWalkEmbedder, QUserCNN, SkipGramEmbedder, align_vectors
from qexpert.corpus import build_vocab_from_tokens
from qexpert.validation import check_dataset, check_dtype, check_pool, check_region_sizes, check_texts

SMALL = dict(region_sizes=(2, 3), filters_per_size=8, seq_len=16, word_dim=12, out_dim=16,
             learning_rate=1e-3, epochs=3, random_state=0)


@pytest.fixture(scope="module")
def synth():
    cfg = SyntheticConfig(n_questions=150, vocab_size=150, with_answers=True)
    d, experts, _ = generate_synthetic(cfg, np.random.default_rng(0), {"train": 150, "test1": 60})
    return d


@pytest.fixture(scope="module")
def fitted(synth):
    return QUserCNN(**SMALL).fit(synth["train"])


class TestSklearnContract:
    @pytest.mark.parametrize("cls", [QUserCNN, QACNN, DeepWalkEmbedder, SkipGramEmbedder])
    def test_get_params_and_clone(self, cls):
        est = cls()
        params = est.get_params()
        c = clone(est)
        assert c.get_params() == params and c is not est

    def test_set_params(self):
        est = QUserCNN().set_params(margin=0.3, region_sizes=(3, 4))
        assert est.margin == 0.3 and est.get_params()["region_sizes"] == (3, 4)

    def test_defaults_match_stated_hyperparameters(self):
        p = QUserCNN().get_params()
        assert (p["margin"], p["learning_rate"], p["dropout"], p["seq_len"], p["word_dim"], p["out_dim"]) == \
            (0.1, 1e-5, 0.5, 50, 100, 200)
        assert p["region_sizes"] == (2, 3, 4, 5)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            QUserCNN().transform(["text"])


class TestQUserCNN:
    def test_transform_shape(self, fitted, synth):
        assert fitted.transform(synth["test1"]).shape == (60, 16)
        assert fitted.transform("a single question").shape == (1, 16)
        assert fitted.transform([]).shape == (0, 16)

    def test_predict_and_rank(self, fitted, synth):
        preds = fitted.predict(synth["test1"])
        assert len(preds) == 60 and set(preds) <= set(fitted.params_.user_ids)
        users = fitted.params_.user_ids[:4]
        ranked = fitted.rank(synth["test1"].records[0].text, users)
        assert sorted(u for u, _ in ranked) == sorted(users)
        scores = fitted.decision_function(synth["test1"].records[0].text, users)
        assert scores.shape == (4,) and np.all(np.abs(scores) <= 1 + 1e-6)

    def test_score_is_top1(self, fitted, synth):
        s = fitted.score(synth["test1"])
        assert s == fitted.evaluate(synth["test1"]).top1_accuracy
        assert 0 <= s <= 1

    def test_history(self, fitted):
        assert len(fitted.history_) == 3 and fitted.fit_result_.best_epoch == 3

    def test_given_user_vectors(self, synth, tmp_path):
        users = synth["train"].users()
        table = EmbeddingTable(users, np.random.default_rng(0).normal(size=(len(users), 16)))
        save_vectors(table, tmp_path / "u.vec")
        a = QUserCNN(**{**SMALL, "epochs": 1}, user_vectors=table).fit(synth["train"])
        b = QUserCNN(**{**SMALL, "epochs": 1}, user_vectors=str(tmp_path / "u.vec")).fit(synth["train"])
        np.testing.assert_array_equal(a.params_.user_emb.data, b.params_.user_emb.data)

    def test_user_dim_mismatch(self, synth):
        users = synth["train"].users()
        table = EmbeddingTable(users, np.zeros((len(users), 5)))
        with pytest.raises(ValueError, match="dim"):
            QUserCNN(**SMALL, user_vectors=table).fit(synth["train"])

    def test_random_word_vectors_and_dev(self, synth):
        est = QUserCNN(**{**SMALL, "word_vectors": "random", "epochs": 2}).fit(synth["train"], dev=synth["test1"])
        assert all(h.dev_top1 is not None for h in est.history_)

    def test_refit_is_deterministic(self, synth):
        a = QUserCNN(**{**SMALL, "epochs": 1}).fit(synth["train"])
        b = clone(a).fit(synth["train"])
        assert a.transform(synth["test1"]).tobytes() == b.transform(synth["test1"]).tobytes()


class TestQACNN:
    def test_fit_and_score(self, synth):
        est = QACNN(**SMALL).fit(synth["train"])
        assert est.params_.user_emb is None
        assert set(est.profiles_) <= set(synth["train"].users())
        assert 0 <= est.score(synth["test1"]) <= 1

    def test_needs_answer_texts(self):
        d, _, _ = generate_synthetic(SyntheticConfig(n_questions=30, with_answers=False), np.random.default_rng(0))
        with pytest.raises(ValueError, match="answer texts"):
            QACNN(**SMALL).fit(d["train"])


class TestEmbedders:
    def test_deepwalk_transform(self, synth):
        emb = DeepWalkEmbedder(dim=8, walks_per_vertex=2, walk_length=10).fit(synth["train"])
        u = synth["train"].users()[:3]
        assert emb.transform(u).shape == (3, 8)
        with pytest.raises(KeyError):
            emb.transform(["nobody"])

    def test_skipgram_transform(self, synth):
        emb = SkipGramEmbedder(dim=8, epochs=1).fit([r.text for r in synth["train"]])
        assert emb.transform(["", "zzz unknown"]).shape == (2, 8)
        assert len(emb.epoch_losses_) == 1

    def test_align_vectors(self):
        vocab = build_vocab_from_tokens([["a", "b"]])
        table = EmbeddingTable(["b", "<pad>", "x"], np.arange(9.0).reshape(3, 3))
        out = align_vectors(table, vocab, np.random.default_rng(0))
        np.testing.assert_array_equal(out[vocab.id("b")], [0, 1, 2])
        np.testing.assert_array_equal(out[0], 0)
        assert np.all(np.abs(out[vocab.id("a")]) <= 0.5 / 3)


class TestValidation:
    def test_region_sizes(self):
        assert check_region_sizes([2, 3], 50) == (2, 3)
        for bad in ([], [3, 2], [2, 2], [0], [51]):
            with pytest.raises(ValueError):
                check_region_sizes(bad, 50)

    def test_dtype(self):
        assert check_dtype("float64") == np.float64
        with pytest.raises(ValueError):
            check_dtype("int32")

    def test_pool(self):
        with pytest.raises(ValueError):
            check_pool([])
        with pytest.raises(ValueError):
            check_pool(["a", "a"])

    def test_texts_and_dataset(self, synth):
        assert check_texts("x") == ["x"]
        with pytest.raises(TypeError):
            check_texts([1, 2])
        with pytest.raises(ValueError):
            check_dataset([])
        with pytest.raises(TypeError):
            check_dataset(["not a record"])
        assert len(check_dataset(synth["train"].records)) == 150


class TestConfig:
    def test_desk_and_full_presets(self):
        assert config_from_dict({"data": {"train": "t.tsv"}}).train.filters_per_size == 100
        cfg = config_from_dict({"data": {"train": "t.tsv"}, "preset": "full"})
        assert cfg.train.filters_per_size == 500 and cfg.train.region_sizes == (2, 3, 4, 5)

    def test_region_preset_name(self):
        cfg = config_from_dict({"data": {"train": "t"}, "train": {"region_sizes": "345"}})
        assert cfg.train.region_sizes == (3, 4, 5)

    @pytest.mark.parametrize("raw", [
        {}, {"data": {"train": "t"}, "bogus": 1}, {"data": {"train": "t"}, "train": {"margin": -1}},
        {"data": {"train": "t"}, "preset": "huge"}, {"data": {"train": "t"}, "words": {"dimension": 3}},
    ])
    def test_rejects(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_validate_missing_file(self, tmp_path):
        (tmp_path / "c.yaml").write_text("data:\n  train: nope.tsv\n")
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "c.yaml").validate()

    def test_paths_relative_to_config(self, tmp_path):
        (tmp_path / "t.tsv").write_text("q\tx\tu:1\n")
        (tmp_path / "c.yaml").write_text("data:\n  train: t.tsv\noutput: out\n")
        cfg = load_config(tmp_path / "c.yaml").validate()
        assert cfg.path("train") == tmp_path / "t.tsv" and cfg.output_dir == tmp_path / "out"
