"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset, QuestionRecord


def check_dataset(X, split: str = "train", require_answers: bool = False) -> Dataset:
    """Accept a :class:`Dataset` or an iterable of :class:`QuestionRecord`."""
    if isinstance(X, Dataset):
        ds = X
    else:
        records = list(X)
        if not all(isinstance(r, QuestionRecord) for r in records):
            raise TypeError("expected a Dataset or QuestionRecord objects")
        ds = Dataset(split, records)
    if not len(ds):
        raise ValueError(f"split {ds.split!r} is empty")
    if require_answers:
        for r in ds.records:
            if not r.answers:
                raise ValueError(f"question {r.question_id!r} has no answers")
    return ds


def check_texts(X) -> list[str]:
    """A single string or an iterable of strings, or question records."""
    if isinstance(X, str):
        return [X]
    if isinstance(X, Dataset):
        return [r.text for r in X.records]
    out = []
    for x in X:
        if isinstance(x, QuestionRecord):
            out.append(x.text)
        elif isinstance(x, str):
            out.append(x)
        else:
            raise TypeError(f"expected text, got {type(x).__name__}")
    return out


def check_region_sizes(sizes: Iterable[int], seq_len: int) -> tuple[int, ...]:
    sizes = tuple(int(m) for m in sizes)
    if not sizes:
        raise ValueError("region_sizes must not be empty")
    if len(set(sizes)) != len(sizes):
        raise ValueError(f"duplicate region sizes {sizes}")
    if sorted(sizes) != list(sizes):
        raise ValueError(f"region sizes must be ascending, got {sizes}")
    bad = [m for m in sizes if not 1 <= m <= seq_len]
    if bad:
        raise ValueError(f"region sizes {bad} outside [1, {seq_len}]")
    return sizes


def check_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"dtype must be float32 or float64, got {dt}")
    return dt


def check_pool(candidates: Sequence[str]) -> list[str]:
    cands = [str(c) for c in candidates]
    if not cands:
        raise ValueError("candidate pool is empty")
    if len(set(cands)) != len(cands):
        raise ValueError("candidate pool contains duplicates")
    return cands
