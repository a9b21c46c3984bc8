"""Co-answer user graphs, random walks, skip-gram with negative sampling, vector files."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numba
import numpy as np

from .corpus import Dataset

logger = logging.getLogger(__name__)


class VectorFormatError(ValueError):
    pass


class EmbeddingTable:
    """Dense ``(n, dim)`` table with a key -> row index."""

    def __init__(self, keys: Sequence[str], vectors: np.ndarray, trainable: bool = False):
        vectors = np.asarray(vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(keys):
            raise ValueError(f"{len(keys)} keys but vectors of shape {vectors.shape}")
        self.keys = list(keys)
        self.index = {k: i for i, k in enumerate(self.keys)}
        if len(self.index) != len(self.keys):
            raise ValueError("duplicate keys in embedding table")
        self.vectors = vectors
        self.trainable = trainable

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self.index

    def __getitem__(self, key) -> np.ndarray:
        return self.vectors[self.index[key]]


# ---------------------------------------------------------------------------
# graph and walks
# ---------------------------------------------------------------------------

@dataclass
class UserGraph:
    vertices: list[str]
    adjacency: dict[str, dict[str, int]] = field(default_factory=dict)

    def neighbors(self, v: str) -> dict[str, int]:
        return self.adjacency.get(v, {})

    def degree(self, v: str) -> int:
        return len(self.neighbors(v))

    def edges(self):
        for u in self.vertices:
            for v, w in self.adjacency[u].items():
                if u < v:
                    yield u, v, w


def build_user_graph(dataset: Dataset) -> UserGraph:
    """Vertex per answerer; edge weight = number of questions two users both answered."""
    if not len(dataset):
        raise ValueError("cannot build a user graph from an empty dataset")
    users = dataset.users()
    adj: dict[str, dict[str, int]] = {u: {} for u in users}
    for rec in dataset.records:
        answerers = sorted({a.user_id for a in rec.answers})
        for u, v in combinations(answerers, 2):
            adj[u][v] = adj[u].get(v, 0) + 1
            adj[v][u] = adj[v].get(u, 0) + 1
    return UserGraph(users, adj)


def graph_from_edges(edges, vertices=None) -> UserGraph:
    adj: dict[str, dict[str, int]] = defaultdict(dict)
    verts = set(vertices or ())
    for e in edges:
        u, v, w = (*e, 1) if len(e) == 2 else e
        if u == v:
            raise ValueError(f"self-loop on {u!r}")
        adj[u][v] = adj[u].get(v, 0) + w
        adj[v][u] = adj[v].get(u, 0) + w
        verts.update((u, v))
    ordered = sorted(verts)
    return UserGraph(ordered, {u: dict(adj.get(u, {})) for u in ordered})


@dataclass
class WalkCorpus:
    walks: list[list[str]]
    walk_length: int
    walks_per_vertex: int
    window: int = 5


def generate_walks(graph: UserGraph, walks_per_vertex: int = 10, walk_length: int = 40,
                   rng: np.random.Generator | None = None, window: int = 5) -> WalkCorpus:
    """Weighted truncated random walks, ``walks_per_vertex`` passes over shuffled vertices."""
    if walks_per_vertex < 1 or walk_length < 2:
        raise ValueError("need walks_per_vertex >= 1 and walk_length >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    nbrs, cdfs = {}, {}
    for v in graph.vertices:
        items = sorted(graph.neighbors(v).items())
        nbrs[v] = [u for u, _ in items]
        if items:
            w = np.array([c for _, c in items], dtype=np.float64)
            cdfs[v] = np.cumsum(w) / w.sum()
    walks = []
    for _ in range(walks_per_vertex):
        for i in rng.permutation(len(graph.vertices)):
            cur = graph.vertices[i]
            walk = [cur]
            while len(walk) < walk_length and nbrs[cur]:
                j = int(np.searchsorted(cdfs[cur], rng.random(), side="right"))
                cur = nbrs[cur][min(j, len(nbrs[cur]) - 1)]
                walk.append(cur)
            walks.append(walk)
    return WalkCorpus(walks, walk_length, walks_per_vertex, window)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling
# ---------------------------------------------------------------------------

def count_skipgram_pairs(lengths, window: int) -> int:
    return int(sum(min(i, window) + min(n - 1 - i, window) for n in lengths for i in range(n)))


@numba.njit(cache=True)
def _sgns_epoch(flat, offsets, w_in, w_out, window, negatives, negs, lr0, lr_min,
                done0, total, sample_loss):
    dim = w_in.shape[1]
    grad_in = np.zeros(dim)
    loss = 0.0
    n_pairs = 0
    k = 0
    done = done0
    for s in range(offsets.shape[0] - 1):
        a = offsets[s]
        b = offsets[s + 1]
        for i in range(a, b):
            center = flat[i]
            lo = max(a, i - window)
            hi = min(b, i + window + 1)
            for j in range(lo, hi):
                if j == i:
                    continue
                lr = lr0 - (lr0 - lr_min) * done / total
                if lr < lr_min:
                    lr = lr_min
                done += 1
                for d in range(dim):
                    grad_in[d] = 0.0
                for n in range(negatives + 1):
                    if n == 0:
                        target = flat[j]
                        label = 1.0
                    else:
                        target = negs[k]
                        k += 1
                        if target == flat[j]:
                            continue
                        label = 0.0
                    dot = 0.0
                    for d in range(dim):
                        dot += w_in[center, d] * w_out[target, d]
                    if dot > 30.0:
                        sig = 1.0
                    elif dot < -30.0:
                        sig = 0.0
                    else:
                        sig = 1.0 / (1.0 + np.exp(-dot))
                    if sample_loss:
                        p = sig if label == 1.0 else 1.0 - sig
                        loss -= np.log(max(p, 1e-12))
                    g = (label - sig) * lr
                    for d in range(dim):
                        grad_in[d] += g * w_out[target, d]
                        w_out[target, d] += g * w_in[center, d]
                for d in range(dim):
                    w_in[center, d] += grad_in[d]
                n_pairs += 1
    return loss, n_pairs, done


@dataclass
class SkipGramResult:
    table: EmbeddingTable
    epoch_losses: list[float]
    output_vectors: np.ndarray
    pairs_per_epoch: int


def train_skipgram(corpus: Sequence[Sequence[int]], vocab_size: int, dim: int = 100,
                   window: int = 5, negatives: int = 5, epochs: int = 5, lr: float = 0.025,
                   rng: np.random.Generator | None = None, keys: Sequence[str] | None = None,
                   min_lr: float | None = None) -> SkipGramResult:
    """Skip-gram with negative sampling over integer sequences.

    For every center and every context within ``window`` (clipped at sequence
    ends) one positive and ``negatives`` negative logistic updates are made,
    negatives drawn from the unigram distribution raised to 0.75.  The
    learning rate decays linearly to ``min_lr`` over all epochs.  Returns the
    input-side vectors plus the mean per-pair logistic loss of each epoch.
    """
    if window < 1 or negatives < 1 or epochs < 1:
        raise ValueError("window, negatives and epochs must be >= 1")
    seqs = [np.asarray(s, dtype=np.int64) for s in corpus]
    if not seqs:
        raise ValueError("empty corpus")
    lengths = [len(s) for s in seqs]
    flat = np.concatenate(seqs) if sum(lengths) else np.zeros(0, dtype=np.int64)
    if flat.size and (flat.min() < 0 or flat.max() >= vocab_size):
        bad = flat[(flat < 0) | (flat >= vocab_size)][0]
        raise IndexError(f"id {bad} outside table range [0, {vocab_size})")
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    rng = rng if rng is not None else np.random.default_rng(0)
    w_in = (rng.random((vocab_size, dim)) - 0.5) / dim
    w_out = np.zeros((vocab_size, dim))
    counts = np.bincount(flat, minlength=vocab_size).astype(np.float64) ** 0.75
    if counts.sum() == 0:
        counts[:] = 1.0
    cdf = np.cumsum(counts) / counts.sum()
    n_pairs = count_skipgram_pairs(lengths, window)
    total = max(1, n_pairs * epochs)
    min_lr = lr * 1e-4 if min_lr is None else min_lr
    losses = []
    done = 0
    pairs = 0
    for _ in range(epochs):
        negs = np.minimum(np.searchsorted(cdf, rng.random(n_pairs * negatives), side="right"),
                          vocab_size - 1).astype(np.int64)
        loss, pairs, done = _sgns_epoch(flat, offsets, w_in, w_out, window, negatives, negs,
                                        lr, min_lr, done, total, True)
        losses.append(loss / pairs if pairs else 0.0)
    keys = list(keys) if keys is not None else [str(i) for i in range(vocab_size)]
    return SkipGramResult(EmbeddingTable(keys, w_in), losses, w_out, pairs)


def deepwalk(dataset_or_graph, dim: int = 200, walks_per_vertex: int = 10, walk_length: int = 40,
             window: int = 5, negatives: int = 5, epochs: int = 5, lr: float = 0.025,
             rng: np.random.Generator | None = None) -> EmbeddingTable:
    """User vectors from skip-gram over random walks on the co-answer graph."""
    rng = rng if rng is not None else np.random.default_rng(0)
    graph = dataset_or_graph if isinstance(dataset_or_graph, UserGraph) else build_user_graph(dataset_or_graph)
    walks = generate_walks(graph, walks_per_vertex, walk_length, rng, window)
    index = {v: i for i, v in enumerate(graph.vertices)}
    seqs = [[index[v] for v in w] for w in walks.walks]
    res = train_skipgram(seqs, len(graph.vertices), dim, window, negatives, epochs, lr, rng,
                         keys=graph.vertices)
    return res.table


# ---------------------------------------------------------------------------
# word-vector text files
# ---------------------------------------------------------------------------

def load_vectors(path) -> EmbeddingTable:
    """Read ``token v1 ... vd`` lines, with or without a ``count dim`` header."""
    keys, rows = [], []
    seen: dict[str, int] = {}
    dim = None
    declared = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    declared = (int(parts[0]), int(parts[1]))
                    dim = declared[1]
                    continue
                except ValueError:
                    pass
            tok, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            if len(vals) != dim:
                raise VectorFormatError(f"{path}:{lineno}: expected {dim} values, found {len(vals)}")
            if tok in seen:
                raise VectorFormatError(f"{path}:{lineno}: duplicate token {tok!r} (first on line {seen[tok]})")
            try:
                rows.append([float(x) for x in vals])
            except ValueError:
                raise VectorFormatError(f"{path}:{lineno}: non-numeric value") from None
            seen[tok] = lineno
            keys.append(tok)
    if declared is not None and declared[0] != len(keys):
        raise VectorFormatError(f"{path}: header declares {declared[0]} vectors, found {len(keys)}")
    vectors = np.array(rows, dtype=np.float64).reshape(len(keys), dim or 0)
    return EmbeddingTable(keys, vectors)


def save_vectors(table: EmbeddingTable, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for key, vec in zip(table.keys, table.vectors):
            if not key or any(c.isspace() for c in key):
                raise ValueError(f"token {key!r} cannot be written to a space-separated file")
            fh.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")
