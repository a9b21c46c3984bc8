"""Command-line front end: ``qexpert {ingest,embed,train,eval,rank,grid,synth}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .corpus import (DatasetFormatError, SyntheticConfig, build_vocab, generate_synthetic,
                     write_dataset, write_expert_map)
from .embed import save_vectors
from .grid import best_cell, run_grid, write_grid
from .pipeline import load_scorer, load_splits, train_model, user_table, word_table
from .train import rank_answers, rank_candidates

logger = logging.getLogger("qexpert")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "format", None):
        cfg.format = args.format
    if getattr(args, "seed", None) is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    if getattr(args, "k", None) is not None:
        cfg.eval_k = args.k
    return cfg.validate()


def cmd_ingest(args) -> int:
    cfg = _load(args)
    splits = load_splits(cfg)
    for name, ds in splits.items():
        n_ans = sum(len(r.answers) for r in ds.records)
        print(f"{name}\t{len(ds)} records\t{n_ans} answers\t{len(ds.users())} users")
    vocab = build_vocab(splits["train"], cfg.min_count, cfg.tokenizer)
    preview = " ".join(vocab.tokens()[:10])
    print(f"vocab\t{len(vocab)} entries (min_count={cfg.min_count})\t{preview}")
    return 0


def cmd_embed(args) -> int:
    cfg = _load(args)
    train = load_splits(cfg)["train"]
    if args.kind == "users":
        table = user_table(cfg, train)
    else:
        table = word_table(cfg, train)
        if isinstance(table, str):
            raise ConfigError("words.source 'random' has nothing to write")
    out = Path(args.out) if args.out else cfg.output_dir / f"{args.kind}.vec"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_vectors(table, out)
    print(f"wrote {len(table)} x {table.dim} vectors to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.grid:
        return cmd_grid(args, cfg)
    splits = load_splits(cfg)
    out = Path(args.out) if args.out else cfg.output_dir
    est = train_model(cfg, args.model, splits, out)
    print(f"best epoch {est.fit_result_.best_epoch}; checkpoint {out / (args.model + '.ckpt')}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    splits = load_splits(cfg)
    if args.split not in splits:
        raise ConfigError(f"split {args.split!r} is not configured")
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / f"{args.model}.ckpt"
    _, scorer = load_scorer(cfg, args.model, splits["train"], ckpt_path)
    seed = cfg.eval_seeds[0] if args.seed is None else args.seed
    from .train import evaluate_top1
    report = evaluate_top1(scorer, splits[args.split], cfg.eval_k, seed, dump_rankings=args.dump)
    out = Path(args.out) if args.out else cfg.output_dir / f"{args.model}_{args.split}_report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    print(f"{args.split}\tk={report.k}\tquestions={report.n_questions}\ttop1={report.top1_accuracy:.4f}")
    return 0


def cmd_rank(args) -> int:
    cfg = _load(args)
    train = load_splits(cfg)["train"]
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / f"{args.model}.ckpt"
    ckpt, scorer = load_scorer(cfg, args.model, train, ckpt_path)
    pool = [ln.strip() for ln in Path(args.pool).read_text(encoding="utf-8").splitlines() if ln.strip()]
    q_ids = scorer.bank.ids(args.question)
    if args.model == "qa":
        known = {u: scorer.bank.ids(scorer.profiles[u]) for u in pool if u in scorer.profiles}
        ranking = rank_answers(q_ids, known, ckpt.params)
    else:
        known = [u for u in pool if u in ckpt.params.user_index]
        ranking = rank_candidates(q_ids, known, ckpt.params)
    for u in pool:
        if u not in known:
            print(f"unknown user\t{u}", file=sys.stderr)
    for i, (u, s) in enumerate(ranking, start=1):
        print(f"{i}\t{u}\t{s!r}")
    return 0


def cmd_grid(args, cfg=None) -> int:
    cfg = cfg or _load(args)
    splits = load_splits(cfg)
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = run_grid(cfg, splits, out)
    write_grid(rows, out / "grid.tsv")
    for model in dict.fromkeys(r.model for r in rows):
        print(f"best {model}\t{best_cell(rows, model):.4f}")
    return 0


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(n_topics=args.topics, n_users=args.users, noise=args.noise)
    sizes = {"train": args.train, "dev": args.dev, "test1": args.test, "test2": args.test}
    datasets, experts, _ = generate_synthetic(cfg, np.random.default_rng(args.seed),
                                              {k: v for k, v in sizes.items() if v > 0})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in datasets.items():
        write_dataset(ds, out / f"{name}.tsv")
    write_expert_map(experts, out / "experts.tsv")
    print(f"wrote {', '.join(f'{k}={len(v)}' for k, v in datasets.items())} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qexpert", description="Expert identification for QA communities.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--format", choices=["tsv", "jsonl"])
        sp.add_argument("--out")
        if model:
            sp.add_argument("--model", choices=["quser", "qa"], default="quser")
        return sp

    common(sub.add_parser("ingest", help="parse and summarize dataset splits")).set_defaults(func=cmd_ingest)
    sp = common(sub.add_parser("embed", help="train user or word vectors"))
    sp.add_argument("kind", choices=["users", "words"])
    sp.set_defaults(func=cmd_embed)
    sp = common(sub.add_parser("train", help="train a ranking model"), model=True)
    sp.add_argument("--grid", action="store_true", help="run the configured hyperparameter grid")
    sp.add_argument("--k", type=int)
    sp.set_defaults(func=cmd_train)
    sp = common(sub.add_parser("eval", help="Top-1 accuracy on a split"), model=True)
    sp.add_argument("--split", default="test1")
    sp.add_argument("--k", type=int)
    sp.add_argument("--checkpoint")
    sp.add_argument("--dump", action="store_true", help="include ranked lists in the report")
    sp.set_defaults(func=cmd_eval)
    sp = common(sub.add_parser("rank", help="rank a pool of users for one question"), model=True)
    sp.add_argument("--question", required=True)
    sp.add_argument("--pool", required=True, help="file with one user id per line")
    sp.add_argument("--checkpoint")
    sp.set_defaults(func=cmd_rank)
    sp = common(sub.add_parser("grid", help="train/evaluate every grid cell"))
    sp.add_argument("--k", type=int)
    sp.set_defaults(func=cmd_grid)
    sp = sub.add_parser("synth", help="write a synthetic dataset with planted experts")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--topics", type=int, default=5)
    sp.add_argument("--users", type=int, default=50)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--train", type=int, default=1000)
    sp.add_argument("--dev", type=int, default=200)
    sp.add_argument("--test", type=int, default=200)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
