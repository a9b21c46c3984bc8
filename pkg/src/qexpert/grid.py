"""Hyperparameter grid over region sizes, optimizer, word vectors and learning rate."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .corpus import Dataset
from .pipeline import train_model, with_overrides

logger = logging.getLogger(__name__)

METHOD_NAMES = {"quser": "Q-USER-CNN", "qa": "Q-A-CNN"}
HEADER = ["method", "region_sizes", "hyperparameter", "word_embedding", "optimizer",
          "test1_top1", "test2_top1"]


@dataclass
class GridRow:
    model: str
    region_sizes: tuple[int, ...]
    word_dim: int
    user_dim: int
    learning_rate: float
    word_source: str
    optimizer: str
    test1: float | None
    test2: float | None

    def cells(self) -> list[str]:
        def pct(x):
            return "NA" if x is None else f"{100 * x:.2f}"
        return [
            METHOD_NAMES.get(self.model, self.model),
            "(" + ",".join(map(str, self.region_sizes)) + ")",
            f"{self.word_dim} {self.user_dim} {self.learning_rate:g}",
            word_label(self.word_source),
            "Adam" if self.optimizer.lower() == "adam" else "SGD",
            pct(self.test1),
            pct(self.test2),
        ]

    @property
    def best(self) -> float:
        vals = [v for v in (self.test1, self.test2) if v is not None]
        return max(vals) if vals else float("nan")


def word_label(source: str) -> str:
    if source == "skipgram":
        return "Word2Vec"
    if source == "random":
        return "Random"
    return Path(source).stem


def run_grid(cfg: RunConfig, splits: dict[str, Dataset], out_dir: Path,
             seed: int | None = None) -> list[GridRow]:
    """Train and evaluate every grid cell; one row per cell, in axis order."""
    g = cfg.grid
    rows = []
    seed = cfg.train.seed if seed is None else seed
    cells = itertools.product(g.models, g.region_sizes, g.optimizers, g.word_sources, g.learning_rates)
    for n, (model, sizes, opt, words, lr) in enumerate(cells):
        tc = with_overrides(cfg.train, region_sizes=tuple(sizes), optimizer=opt,
                            learning_rate=float(lr), seed=seed)
        prefix = f"cell{n:03d}_{model}"
        logger.info("grid cell %s: %s %s %s %s lr=%g", prefix, model, sizes, opt, words, lr)
        est = train_model(cfg, model, splits, out_dir / "cells", tc, words, prefix)
        scores = {}
        for split in ("test1", "test2"):
            if split in splits:
                scores[split] = est.evaluate(splits[split], cfg.eval_k, seed).top1_accuracy
        rows.append(GridRow(model, tuple(sizes), cfg.words.dim, cfg.users.dim, float(lr), words, opt,
                            scores.get("test1"), scores.get("test2")))
    return rows


def write_grid(rows: list[GridRow], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(HEADER) + "\n")
        for r in rows:
            fh.write("\t".join(r.cells()) + "\n")


def best_cell(rows: list[GridRow], model: str) -> float:
    vals = [r.best for r in rows if r.model == model]
    if not vals:
        raise ValueError(f"grid has no {model!r} rows")
    return max(vals)
