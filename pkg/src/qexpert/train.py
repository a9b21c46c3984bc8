"""Hinge-loss training, candidate ranking and Top-1 evaluation."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .corpus import (Dataset, QuestionRecord, Triple, Vocab, encode_text, make_triples,
                     question_rng, sample_candidate_pool, tokenize)
from .model import ModelParams, encode, encode_backward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    margin: float = 0.1
    optimizer: str = "adam"
    learning_rate: float = 1e-5
    epochs: int = 50
    batch_size: int = 32
    dropout_rate: float = 0.5
    region_sizes: tuple[int, ...] = (2, 3, 4, 5)
    filters_per_size: int = 100
    seq_len: int = 50
    word_dim: int = 100
    user_dim: int = 200
    seed: int = 0
    fine_tune_users: bool = False
    patience: int = 5
    max_pairs: int = 10
    on_missing: str = "skip"
    dtype: str = "float32"

    def __post_init__(self):
        self.region_sizes = tuple(int(m) for m in self.region_sizes)
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer.lower() not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.on_missing not in ("skip", "abort"):
            raise ValueError("on_missing must be 'skip' or 'abort'")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["region_sizes"] = list(self.region_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def hinge_loss(s_pos, s_neg, margin: float = 0.1):
    """``max(0, margin - (s_pos - s_neg))``, elementwise."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return np.maximum(0.0, margin - (np.asarray(s_pos) - np.asarray(s_neg)))


def hinge_loss_grad(s_pos, s_neg, margin: float = 0.1):
    """Subgradients w.r.t. ``(s_pos, s_neg)``; zero at the kink."""
    active = (margin - (np.asarray(s_pos) - np.asarray(s_neg))) > 0
    return -active.astype(np.float64), active.astype(np.float64)


# ---------------------------------------------------------------------------
# encoded text lookups
# ---------------------------------------------------------------------------

class TextBank:
    """Caches fixed-length id sequences for question and answer texts."""

    def __init__(self, vocab: Vocab, length: int = 50, mode: str = "whitespace"):
        self.vocab = vocab
        self.length = length
        self.mode = mode
        self._cache: dict[str, np.ndarray] = {}

    def ids(self, text: str) -> np.ndarray:
        out = self._cache.get(text)
        if out is None:
            out = encode_text(tokenize(text, self.mode), self.vocab, self.length)
            self._cache[text] = out
        return out


def build_profiles(dataset: Dataset) -> dict[str, str]:
    """Each user's highest-voted answer text (first occurrence wins ties)."""
    best: dict[str, tuple[int, str]] = {}
    for rec in dataset.records:
        for a in rec.answers:
            if a.text is None:
                continue
            if a.user_id not in best or a.votes > best[a.user_id][0]:
                best[a.user_id] = (a.votes, a.text)
    return {u: t for u, (_, t) in best.items()}


@dataclass
class TrainingData:
    records: dict[str, QuestionRecord]
    bank: TextBank


class MissingIdError(KeyError):
    pass


def train_step(batch: Sequence[Triple], params: ModelParams, optimizer, config: TrainConfig,
               rng: np.random.Generator, data: TrainingData) -> float:
    """One optimizer step on a batch of triples; returns the mean hinge loss.

    Each distinct question in the batch is encoded once (one dropout mask)
    and reused by all of its triples.  Question/user models score users by
    their table rows; question/answer models score the two answer texts
    through the same tower.
    """
    qa = params.user_emb is None
    valid = []
    for t in batch:
        rec = data.records.get(t.question_id)
        if rec is None:
            missing = f"question {t.question_id!r}"
        elif qa:
            ok = rec.answer_text(t.pos_user_id) is not None and rec.answer_text(t.neg_user_id) is not None
            missing = None if ok else f"answer text for {t}"
        else:
            missing = next((f"user {u!r}" for u in (t.pos_user_id, t.neg_user_id)
                            if u not in params.user_index), None)
        if missing:
            if config.on_missing == "abort":
                raise MissingIdError(missing)
            logger.warning("skipping triple %s: unknown %s", t, missing)
            continue
        valid.append(t)
    optimizer.zero_grad()
    if not valid:
        optimizer.step()
        return 0.0
    qorder: dict[str, int] = {}
    qrow = np.array([qorder.setdefault(t.question_id, len(qorder)) for t in valid])
    seqs = [data.bank.ids(data.records[q].text) for q in qorder]
    B = len(valid)
    nq = len(seqs)
    if qa:
        seqs += [data.bank.ids(data.records[t.question_id].answer_text(t.pos_user_id)) for t in valid]
        seqs += [data.bank.ids(data.records[t.question_id].answer_text(t.neg_user_id)) for t in valid]
    h, cache = encode(np.stack(seqs), params, train=True, rng=rng)
    hq = h[qrow]
    if qa:
        up, un = h[nq:nq + B], h[nq + B:]
    else:
        pos = np.array([params.user_index[t.pos_user_id] for t in valid])
        neg = np.array([params.user_index[t.neg_user_id] for t in valid])
        U = params.user_emb.data
        up, un = U[pos], U[neg]
    sp = nn.cosine(hq, up)
    sn = nn.cosine(hq, un)
    losses = hinge_loss(sp, sn, config.margin)
    gp, gn = hinge_loss_grad(sp, sn, config.margin)
    dq1, dup = nn.cosine_backward(gp / B, hq, up)
    dq2, dun = nn.cosine_backward(gn / B, hq, un)
    dh = np.zeros(h.shape, dtype=np.float64)
    np.add.at(dh, qrow, dq1 + dq2)
    if qa:
        dh[nq:nq + B] += dup
        dh[nq + B:] += dun
    else:
        if params.user_emb.trainable:
            np.add.at(params.user_emb.grad, pos, dup.astype(params.user_emb.grad.dtype))
            np.add.at(params.user_emb.grad, neg, dun.astype(params.user_emb.grad.dtype))
    encode_backward(dh.astype(h.dtype), cache, params)
    optimizer.step()
    return float(losses.sum() / B)


def batch_loss(batch: Sequence[Triple], params: ModelParams, config: TrainConfig,
               data: TrainingData, train: bool = False, rng=None) -> float:
    """Mean hinge loss of a batch without touching gradients."""
    qa = params.user_emb is None
    seqs = [data.bank.ids(data.records[t.question_id].text) for t in batch]
    if qa:
        seqs += [data.bank.ids(data.records[t.question_id].answer_text(t.pos_user_id)) for t in batch]
        seqs += [data.bank.ids(data.records[t.question_id].answer_text(t.neg_user_id)) for t in batch]
    h, _ = encode(np.stack(seqs), params, train=train, rng=rng)
    B = len(batch)
    if qa:
        hq, up, un = h[:B], h[B:2 * B], h[2 * B:]
    else:
        hq = h
        up = params.user_emb.data[[params.user_index[t.pos_user_id] for t in batch]]
        un = params.user_emb.data[[params.user_index[t.neg_user_id] for t in batch]]
    return float(hinge_loss(nn.cosine(hq, up), nn.cosine(hq, un), config.margin).mean())


# ---------------------------------------------------------------------------
# ranking and evaluation
# ---------------------------------------------------------------------------

def _sorted_scores(scores: dict[str, float]) -> list[tuple[str, float]]:
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def rank_candidates(q_ids, candidates: Sequence[str], params: ModelParams,
                    encoding: np.ndarray | None = None) -> list[tuple[str, float]]:
    """Users ranked by cosine to the question encoding, descending.

    Ties go to the smaller user id.  Users missing from the table are
    dropped with a log entry.
    """
    if encoding is None:
        encoding, _ = encode(np.asarray(q_ids)[None, :], params)
        encoding = encoding[0]
    known = []
    for u in candidates:
        if u in params.user_index:
            known.append(u)
        else:
            logger.info("excluding unknown user %r from ranking", u)
    if not known:
        return []
    rows = params.user_emb.data[[params.user_index[u] for u in known]]
    s = nn.cosine(encoding[None, :], rows)
    return _sorted_scores({u: float(x) for u, x in zip(known, s)})


def rank_answers(q_ids, answer_ids: dict[str, np.ndarray], params: ModelParams,
                 encoding: np.ndarray | None = None) -> list[tuple[str, float]]:
    """Users ranked by cosine between the question and their answer text encodings."""
    if encoding is None:
        encoding, _ = encode(np.asarray(q_ids)[None, :], params)
        encoding = encoding[0]
    if not answer_ids:
        return []
    users = list(answer_ids)
    ha, _ = encode(np.stack([answer_ids[u] for u in users]), params)
    s = nn.cosine(encoding[None, :], ha)
    return _sorted_scores({u: float(x) for u, x in zip(users, s)})


class QUserScorer:
    """Scores candidate users of a question by the question/user model."""

    def __init__(self, params: ModelParams, bank: TextBank, batch_size: int = 256):
        self.params = params
        self.bank = bank
        self.batch_size = batch_size
        self._enc: dict[str, np.ndarray] = {}

    @property
    def users(self) -> list[str]:
        return list(self.params.user_ids)

    def prepare(self, records: Sequence[QuestionRecord]):
        todo = [r for r in records if r.text not in self._enc]
        texts = list(dict.fromkeys(r.text for r in todo))
        for i in range(0, len(texts), self.batch_size):
            chunk = texts[i:i + self.batch_size]
            h, _ = encode(np.stack([self.bank.ids(t) for t in chunk]), self.params)
            self._enc.update(zip(chunk, h))

    def __call__(self, record: QuestionRecord, candidates: Sequence[str]):
        self.prepare([record])
        return rank_candidates(None, candidates, self.params, self._enc[record.text])


class QAScorer:
    """Scores candidate users through answer texts with the siamese model.

    A candidate who answered the question is represented by that answer;
    anyone else by their profile text (best-voted training answer).
    """

    def __init__(self, params: ModelParams, bank: TextBank, profiles: dict[str, str]):
        self.params = params
        self.bank = bank
        self.profiles = profiles
        self._enc: dict[str, np.ndarray] = {}

    @property
    def users(self) -> list[str]:
        return sorted(self.profiles)

    def _encode_texts(self, texts):
        todo = [t for t in dict.fromkeys(texts) if t not in self._enc]
        for i in range(0, len(todo), 256):
            chunk = todo[i:i + 256]
            h, _ = encode(np.stack([self.bank.ids(t) for t in chunk]), self.params)
            self._enc.update(zip(chunk, h))

    def prepare(self, records: Sequence[QuestionRecord]):
        self._encode_texts([r.text for r in records] + list(self.profiles.values()))

    def __call__(self, record: QuestionRecord, candidates: Sequence[str]):
        texts = {}
        for u in candidates:
            t = record.answer_text(u)
            if t is None:
                t = self.profiles.get(u)
            if t is None:
                logger.info("excluding user %r: no answer text", u)
                continue
            texts[u] = t
        self._encode_texts([record.text] + list(texts.values()))
        hq = self._enc[record.text]
        if not texts:
            return []
        users = list(texts)
        s = nn.cosine(hq[None, :], np.stack([self._enc[texts[u]] for u in users]))
        return _sorted_scores({u: float(x) for u, x in zip(users, s)})


@dataclass
class EvalReport:
    split: str
    k: int
    seed: int
    n_questions: int
    n_correct: int
    top1_accuracy: float
    skipped: dict[str, str] = field(default_factory=dict)
    ranked: dict[str, list] | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QEXPERT_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_top1(scorer: Callable, dataset: Dataset, k: int = 10, seed: int = 0,
                  users: Sequence[str] | None = None, dump_rankings: bool = False,
                  threads: int | None = None) -> EvalReport:
    """Fraction of eligible questions whose gold expert ranks first in its pool.

    Pools are drawn per question from a stream seeded by ``(seed, question_id)``
    over ``users`` (default: the scorer's users).  Questions without a unique
    top answerer, or whose gold user the scorer cannot score, are reported in
    ``skipped``.
    """
    universe = sorted(users if users is not None else scorer.users)
    skipped: dict[str, str] = {}
    eligible = []
    uni = set(universe)
    for rec in dataset.records:
        gold = rec.gold_user()
        if gold is None:
            skipped[rec.question_id] = "no unique top-voted answerer"
        elif gold not in uni:
            skipped[rec.question_id] = f"gold user {gold!r} not in candidate universe"
        else:
            eligible.append(rec)
    if not eligible:
        raise ValueError(f"no eligible questions in split {dataset.split!r}")
    if hasattr(scorer, "prepare"):
        scorer.prepare(eligible)

    def one(rec):
        pool = sample_candidate_pool(rec, universe, k, question_rng(seed, rec.question_id))
        return pool, scorer(rec, pool.candidates)

    n = threads or _threads()
    if n > 1:
        with ThreadPoolExecutor(n) as ex:
            results = list(ex.map(one, eligible))
    else:
        results = [one(r) for r in eligible]
    correct = 0
    counted = 0
    ranked = {} if dump_rankings else None
    for rec, (pool, ranking) in zip(eligible, results):
        if pool.gold not in {u for u, _ in ranking}:
            skipped[rec.question_id] = "gold user excluded from ranking"
            continue
        counted += 1
        correct += ranking[0][0] == pool.gold
        if ranked is not None:
            ranked[rec.question_id] = [[u, s] for u, s in ranking]
    if counted == 0:
        raise ValueError(f"every question of split {dataset.split!r} was skipped")
    return EvalReport(dataset.split, k, seed, counted, correct, correct / counted, skipped, ranked)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    total_loss: float
    batch_losses: list[float]
    dev_top1: float | None


@dataclass
class FitResult:
    history: list[EpochLog]
    best_epoch: int
    best_dev: float | None


def fit(params: ModelParams, train: Dataset, data: TrainingData, config: TrainConfig,
        dev_fn: Callable[[ModelParams], float] | None = None,
        on_epoch: Callable[[EpochLog], None] | None = None,
        stop_at: float | None = None, rng: np.random.Generator | None = None) -> FitResult:
    """Train on vote-ordered triples with early stopping on ``dev_fn``.

    ``dev_fn`` returns a Top-1 score; training stops after ``patience``
    epochs without improvement (or once it reaches ``stop_at``) and the best
    parameters are restored.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    optimizer = nn.make_optimizer(config.optimizer, params.parameters(), config.learning_rate)
    history: list[EpochLog] = []
    best_dev, best_epoch, best_params, stale = None, 0, None, 0
    base = make_triples(train, None, config.max_pairs)
    if not base:
        raise ValueError("training split yields no vote-ordered triples")
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(base))
        triples = [base[i] for i in order]
        batch_losses = []
        for i in range(0, len(triples), config.batch_size):
            batch = triples[i:i + config.batch_size]
            batch_losses.append(train_step(batch, params, optimizer, config, rng, data) * len(batch))
        total = float(np.sum(batch_losses))
        dev = dev_fn(params) if dev_fn is not None else None
        log = EpochLog(epoch, total / len(triples), total, batch_losses, dev)
        history.append(log)
        if on_epoch is not None:
            on_epoch(log)
        logger.info("epoch %d loss %.6f dev %s", epoch, log.mean_loss, dev)
        if dev is None:
            best_epoch = epoch
            continue
        if best_dev is None or dev > best_dev:
            best_dev, best_epoch, stale = dev, epoch, 0
            best_params = params.copy()
        else:
            stale += 1
        if stop_at is not None and dev >= stop_at:
            break
        if stale >= config.patience:
            break
    if best_params is not None:
        params.load_state(best_params)
    return FitResult(history, best_epoch, best_dev)
