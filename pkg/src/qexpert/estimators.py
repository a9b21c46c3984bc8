"""scikit-learn style wrappers around the embedding and ranking models."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import PAD, Dataset, Vocab, build_vocab, build_vocab_from_tokens, tokenize
from .embed import EmbeddingTable, deepwalk, load_vectors, train_skipgram
from .model import init_params
from .nn import ConvSpec
from .train import (EvalReport, QAScorer, QUserScorer, TextBank, TrainConfig, TrainingData,
                    build_profiles, evaluate_top1, fit)
from .validation import check_dataset, check_dtype, check_pool, check_region_sizes, check_texts

logger = logging.getLogger(__name__)


class DeepWalkEmbedder(BaseEstimator, TransformerMixin):
    """User vectors from random walks over the co-answer graph.

    ``fit`` takes a training :class:`Dataset` (or a prebuilt ``UserGraph``);
    ``transform`` maps user ids to their vectors.
    """

    def __init__(self, dim=200, walks_per_vertex=10, walk_length=40, window=5, negatives=5,
                 epochs=5, learning_rate=0.025, random_state=0):
        self.dim = dim
        self.walks_per_vertex = walks_per_vertex
        self.walk_length = walk_length
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        self.table_ = deepwalk(X, self.dim, self.walks_per_vertex, self.walk_length, self.window,
                               self.negatives, self.epochs, self.learning_rate,
                               np.random.default_rng(self.random_state))
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        ids = [X] if isinstance(X, str) else list(X)
        missing = [u for u in ids if u not in self.table_]
        if missing:
            raise KeyError(f"unknown users: {missing[:5]}")
        return np.stack([self.table_[u] for u in ids]) if ids else np.zeros((0, self.dim))


class SkipGramEmbedder(BaseEstimator, TransformerMixin):
    """Word vectors trained with skip-gram and negative sampling on raw texts."""

    def __init__(self, dim=100, window=5, negatives=5, epochs=5, learning_rate=0.025,
                 min_count=1, tokenizer="whitespace", random_state=0):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.min_count = min_count
        self.tokenizer = tokenizer
        self.random_state = random_state

    def fit(self, X, y=None):
        sentences = [tokenize(t, self.tokenizer) for t in check_texts(X)]
        self.vocab_ = build_vocab_from_tokens(sentences, self.min_count)
        seqs = [[self.vocab_.id(t) for t in s] for s in sentences]
        res = train_skipgram(seqs, len(self.vocab_), self.dim, self.window, self.negatives,
                             self.epochs, self.learning_rate,
                             np.random.default_rng(self.random_state), keys=self.vocab_.itos)
        self.table_ = res.table
        self.epoch_losses_ = res.epoch_losses
        return self

    def transform(self, X):
        """Mean token vector of each text (unknown tokens map to the UNK row)."""
        check_is_fitted(self, "table_")
        out = np.zeros((0, self.dim))
        rows = []
        for text in check_texts(X):
            ids = [self.vocab_.id(t) for t in tokenize(text, self.tokenizer)]
            rows.append(self.table_.vectors[ids].mean(axis=0) if ids else np.zeros(self.dim))
        return np.stack(rows) if rows else out


def align_vectors(table: EmbeddingTable, vocab: Vocab, rng: np.random.Generator) -> np.ndarray:
    """Rows of ``table`` reordered to ``vocab`` ids; missing tokens get small noise, PAD zero."""
    k = table.dim
    out = rng.uniform(-0.5 / k, 0.5 / k, size=(len(vocab), k))
    hits = 0
    for i, tok in enumerate(vocab.itos):
        if tok in table:
            out[i] = table[tok]
            hits += 1
    out[PAD] = 0
    logger.info("pretrained vectors cover %d of %d vocabulary entries", hits, len(vocab))
    return out


class _CNNRanker(BaseEstimator):
    _with_answers = False

    def __init__(self, region_sizes=(2, 3, 4, 5), filters_per_size=100, seq_len=50, word_dim=100,
                 out_dim=200, margin=0.1, optimizer="adam", learning_rate=1e-5, epochs=50,
                 batch_size=32, dropout=0.5, patience=5, max_pairs=10, tokenizer="whitespace",
                 min_count=1, word_vectors="skipgram", eval_k=10, dtype="float32", random_state=0):
        self.region_sizes = region_sizes
        self.filters_per_size = filters_per_size
        self.seq_len = seq_len
        self.word_dim = word_dim
        self.out_dim = out_dim
        self.margin = margin
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.dropout = dropout
        self.patience = patience
        self.max_pairs = max_pairs
        self.tokenizer = tokenizer
        self.min_count = min_count
        self.word_vectors = word_vectors
        self.eval_k = eval_k
        self.dtype = dtype
        self.random_state = random_state

    # -- construction helpers -------------------------------------------

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            margin=self.margin, optimizer=self.optimizer, learning_rate=self.learning_rate,
            epochs=self.epochs, batch_size=self.batch_size, dropout_rate=self.dropout,
            region_sizes=check_region_sizes(self.region_sizes, self.seq_len),
            filters_per_size=self.filters_per_size, seq_len=self.seq_len, word_dim=self.word_dim,
            user_dim=self.out_dim, seed=self.random_state, fine_tune_users=getattr(self, "fine_tune_users", False),
            patience=self.patience, max_pairs=self.max_pairs, dtype=str(check_dtype(self.dtype)),
        )

    def _word_matrix(self, train: Dataset, vocab: Vocab, rng):
        src = self.word_vectors
        if src is None or (isinstance(src, str) and src == "random"):
            return None
        if isinstance(src, str) and src == "skipgram":
            texts = list(_texts(train, self._with_answers))
            sents = [tokenize(t, self.tokenizer) for t in texts]
            seqs = [[vocab.id(t) for t in s] for s in sents]
            res = train_skipgram(seqs, len(vocab), self.word_dim, rng=rng, keys=vocab.itos)
            return res.table.vectors
        table = src if isinstance(src, EmbeddingTable) else load_vectors(Path(src))
        if table.dim != self.word_dim:
            raise ValueError(f"word vectors have dim {table.dim}, expected {self.word_dim}")
        return align_vectors(table, vocab, rng)

    def _setup(self, X):
        train = check_dataset(X, require_answers=True)
        self.config_ = self._train_config()
        rng = np.random.default_rng(self.random_state)
        self.vocab_ = build_vocab(train, self.min_count, self.tokenizer, include_answers=self._with_answers)
        self.bank_ = TextBank(self.vocab_, self.seq_len, self.tokenizer)
        words = self._word_matrix(train, self.vocab_, rng)
        return train, rng, words

    def _spec(self):
        return ConvSpec(self.config_.region_sizes, self.filters_per_size, self.seq_len, self.word_dim)

    def _fit_loop(self, train, dev, rng, on_epoch, stop_at):
        data = TrainingData(train.by_id(), self.bank_)
        dev_fn = None
        if dev is not None:
            dev = check_dataset(dev, split="dev")
            dev_fn = lambda p: evaluate_top1(self._scorer(p), dev, self.eval_k, self.random_state).top1_accuracy  # noqa: E731
        self.fit_result_ = fit(self.params_, train, data, self.config_, dev_fn, on_epoch, stop_at, rng)
        self.history_ = self.fit_result_.history
        return self

    # -- public API ---------------------------------------------------------

    def transform(self, X):
        """Encode texts to ``out_dim`` vectors (eval mode)."""
        from .model import encode
        check_is_fitted(self, "params_")
        texts = check_texts(X)
        if not texts:
            return np.zeros((0, self.params_.out_dim))
        h, _ = encode(np.stack([self.bank_.ids(t) for t in texts]), self.params_)
        return h

    def evaluate(self, X, k=None, seed=None, dump_rankings=False) -> EvalReport:
        check_is_fitted(self, "params_")
        ds = check_dataset(X, split=getattr(X, "split", "eval"))
        return evaluate_top1(self._scorer(self.params_), ds, k or self.eval_k,
                             self.random_state if seed is None else seed, dump_rankings=dump_rankings)

    def score(self, X, y=None, k=None, seed=None) -> float:
        """Top-1 accuracy over candidate pools built from ``X``."""
        return self.evaluate(X, k, seed).top1_accuracy


class QUserCNN(_CNNRanker):
    """Question tower + user lookup, trained with a pairwise cosine hinge loss.

    ``user_vectors`` is an ``EmbeddingTable``, a path to a vector file, or
    None to learn them with DeepWalk on the training split.
    """

    def __init__(self, region_sizes=(2, 3, 4, 5), filters_per_size=100, seq_len=50, word_dim=100,
                 out_dim=200, margin=0.1, optimizer="adam", learning_rate=1e-5, epochs=50,
                 batch_size=32, dropout=0.5, patience=5, max_pairs=10, tokenizer="whitespace",
                 min_count=1, word_vectors="skipgram", user_vectors=None, fine_tune_users=False,
                 eval_k=10, dtype="float32", random_state=0):
        super().__init__(region_sizes, filters_per_size, seq_len, word_dim, out_dim, margin,
                         optimizer, learning_rate, epochs, batch_size, dropout, patience, max_pairs,
                         tokenizer, min_count, word_vectors, eval_k, dtype, random_state)
        self.user_vectors = user_vectors
        self.fine_tune_users = fine_tune_users

    def fit(self, X, y=None, dev=None, on_epoch=None, stop_at=None):
        train, rng, words = self._setup(X)
        users = self.user_vectors
        if users is None:
            users = deepwalk(train, self.out_dim, rng=rng)
        elif not isinstance(users, EmbeddingTable):
            users = load_vectors(Path(users))
        if users.dim != self.out_dim:
            raise ValueError(f"user vectors have dim {users.dim}, expected out_dim={self.out_dim}")
        self.params_ = init_params(self._spec(), len(self.vocab_), word_vectors=words, user_table=users,
                                   fine_tune_users=self.fine_tune_users, dropout_rate=self.dropout,
                                   rng=rng, dtype=np.dtype(self.config_.dtype))
        return self._fit_loop(train, dev, rng, on_epoch, stop_at)

    def _scorer(self, params):
        return QUserScorer(params, self.bank_)

    def decision_function(self, text: str, candidates):
        """Cosine scores of ``candidates`` for one question, in input order."""
        ranked = dict(self.rank(text, candidates))
        return np.array([ranked.get(u, np.nan) for u in check_pool(candidates)])

    def rank(self, text: str, candidates):
        check_is_fitted(self, "params_")
        from .train import rank_candidates
        return rank_candidates(self.bank_.ids(text), check_pool(candidates), self.params_)

    def predict(self, X, candidates=None):
        """Top-ranked user per question; ``candidates`` defaults to every known user."""
        check_is_fitted(self, "params_")
        texts = check_texts(X)
        pools = [self.params_.user_ids] * len(texts) if candidates is None else candidates
        return [r[0][0] if (r := self.rank(t, p)) else None for t, p in zip(texts, pools)]


class QACNN(_CNNRanker):
    """Siamese question/answer baseline: ranks users by their answer texts."""

    _with_answers = True

    def fit(self, X, y=None, dev=None, on_epoch=None, stop_at=None):
        train, rng, words = self._setup(X)
        self.profiles_ = build_profiles(train)
        if not self.profiles_:
            raise ValueError("training split has no answer texts")
        self.params_ = init_params(self._spec(), len(self.vocab_), self.out_dim, word_vectors=words,
                                   dropout_rate=self.dropout, rng=rng, dtype=np.dtype(self.config_.dtype))
        return self._fit_loop(train, dev, rng, on_epoch, stop_at)

    def _scorer(self, params):
        return QAScorer(params, self.bank_, self.profiles_)


def _texts(ds: Dataset, with_answers: bool):
    for r in ds.records:
        yield r.text
        if with_answers:
            for a in r.answers:
                if a.text:
                    yield a.text
