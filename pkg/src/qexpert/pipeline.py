"""Glue between a :class:`RunConfig` and the estimators; shared by the CLI and grid runner."""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import Dataset, build_vocab, check_disjoint, parse_dataset
from .embed import EmbeddingTable, load_vectors
from .estimators import DeepWalkEmbedder, QACNN, QUserCNN, SkipGramEmbedder
from .train import QAScorer, QUserScorer, TextBank, TrainConfig, build_profiles

logger = logging.getLogger(__name__)


def load_splits(cfg: RunConfig) -> dict[str, Dataset]:
    splits = {name: parse_dataset(cfg.path(name), cfg.format, split=name) for name in cfg.data}
    check_disjoint(splits.values())
    return splits


def user_table(cfg: RunConfig, train: Dataset) -> EmbeddingTable:
    u = cfg.users
    if u.source == "deepwalk":
        emb = DeepWalkEmbedder(u.dim, u.walks_per_vertex, u.walk_length, u.window, u.negatives,
                               u.epochs, random_state=cfg.train.seed).fit(train)
        return emb.table_
    table = load_vectors(cfg.resolve(u.source))
    if table.dim != u.dim:
        raise ValueError(f"user vectors in {u.source} have dim {table.dim}, config says {u.dim}")
    return table


def word_table(cfg: RunConfig, train: Dataset, source: str | None = None,
               with_answers: bool = False):
    """Word vectors for ``source``: a trained table, ``"random"``, or a loaded file."""
    w = cfg.words
    source = w.source if source is None else source
    if source == "random":
        return "random"
    if source == "skipgram":
        texts = [r.text for r in train.records]
        if with_answers:
            texts += [a.text for r in train.records for a in r.answers if a.text]
        emb = SkipGramEmbedder(w.dim, w.window, w.negatives, w.epochs, min_count=cfg.min_count,
                               tokenizer=cfg.tokenizer, random_state=cfg.train.seed).fit(texts)
        return emb.table_
    return load_vectors(cfg.resolve(source))


def make_estimator(cfg: RunConfig, model: str, train: Dataset, tc: TrainConfig | None = None,
                   word_source: str | None = None):
    tc = tc or cfg.train
    common = dict(
        region_sizes=tc.region_sizes, filters_per_size=tc.filters_per_size, seq_len=tc.seq_len,
        word_dim=cfg.words.dim, out_dim=cfg.users.dim, margin=tc.margin, optimizer=tc.optimizer,
        learning_rate=tc.learning_rate, epochs=tc.epochs, batch_size=tc.batch_size,
        dropout=tc.dropout_rate, patience=tc.patience, max_pairs=tc.max_pairs,
        tokenizer=cfg.tokenizer, min_count=cfg.min_count,
        word_vectors=word_table(cfg, train, word_source, with_answers=(model == "qa")),
        eval_k=cfg.eval_k, dtype=tc.dtype, random_state=tc.seed,
    )
    if model == "quser":
        return QUserCNN(user_vectors=user_table(cfg, train), fine_tune_users=tc.fine_tune_users, **common)
    if model == "qa":
        return QACNN(**common)
    raise ValueError(f"unknown model {model!r} (expected 'quser' or 'qa')")


def _fmt(x) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def train_model(cfg: RunConfig, model: str, splits: dict[str, Dataset], out_dir: Path,
                tc: TrainConfig | None = None, word_source: str | None = None, prefix: str | None = None):
    """Fit one model, writing its checkpoint, metrics log and best-dev curve."""
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or model
    train = splits["train"]
    est = make_estimator(cfg, model, train, tc, word_source)
    metrics = open(out_dir / f"{prefix}_metrics.tsv", "w", encoding="utf-8")
    curve = open(out_dir / f"{prefix}_best_dev.tsv", "w", encoding="utf-8")
    best = [None]

    def on_epoch(log):
        metrics.write(f"{log.epoch}\t{_fmt(log.mean_loss)}\t{_fmt(log.dev_top1)}\n")
        metrics.flush()
        if log.dev_top1 is not None:
            best[0] = log.dev_top1 if best[0] is None else max(best[0], log.dev_top1)
            curve.write(f"{log.epoch}\t{_fmt(1.0 - best[0])}\n")

    try:
        est.fit(train, dev=splits.get("dev"), on_epoch=on_epoch)
    finally:
        metrics.close()
        curve.close()
    users = est.params_.user_ids if model == "quser" else sorted(est.profiles_)
    save_checkpoint(est.params_, est.config_, out_dir / f"{prefix}.ckpt", est.vocab_,
                    epoch=est.fit_result_.best_epoch, users=users)
    return est


def expected_users(cfg: RunConfig, model: str, train: Dataset) -> list[str]:
    if model == "qa":
        return sorted(build_profiles(train))
    if cfg.users.source == "deepwalk":
        return train.users()
    return list(load_vectors(cfg.resolve(cfg.users.source)).keys)


def load_scorer(cfg: RunConfig, model: str, train: Dataset, ckpt_path: Path):
    """Checkpoint plus a scorer wired to a vocabulary rebuilt from the config."""
    vocab = build_vocab(train, cfg.min_count, cfg.tokenizer, include_answers=(model == "qa"))
    ckpt: Checkpoint = load_checkpoint(ckpt_path, vocab, expected_users(cfg, model, train))
    if ckpt.model != model:
        raise ValueError(f"{ckpt_path} holds a {ckpt.model!r} model, not {model!r}")
    bank = TextBank(vocab, ckpt.params.spec.input_length, cfg.tokenizer)
    if model == "qa":
        return ckpt, QAScorer(ckpt.params, bank, build_profiles(train))
    return ckpt, QUserScorer(ckpt.params, bank)


def with_overrides(tc: TrainConfig, **kw) -> TrainConfig:
    return replace(tc, **kw)
