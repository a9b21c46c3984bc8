"""Convolutional text tower shared by the question/user and question/answer models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .nn import ConvSpec, Param

FULL_FILTERS = 500
DESK_FILTERS = 100
REGION_PRESETS = {
    "full": (2, 3, 4, 5),
    "234": (2, 3, 4),
    "345": (3, 4, 5),
    "2345": (2, 3, 4, 5),
}


class UnknownUserError(KeyError):
    """A user id is not present in the user table."""


@dataclass
class ModelParams:
    """All tensors of one model.

    ``user_emb`` is None for the question/answer model.  Merge order of the
    pooled features is ascending region size, then filter index.
    """

    spec: ConvSpec
    word_emb: Param
    conv_W: list[Param]
    conv_b: list[Param]
    proj_W: Param
    proj_b: Param
    user_emb: Param | None = None
    user_ids: list[str] = field(default_factory=list)
    dropout_rate: float = 0.5

    def __post_init__(self):
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        if self.proj_W.shape[0] != self.spec.total_filters:
            raise ValueError("projection input width must equal the total filter count")
        if self.user_emb is not None and self.user_emb.shape[1] != self.out_dim:
            raise ValueError(f"projection output {self.out_dim} differs from user dim {self.user_emb.shape[1]}")

    @property
    def out_dim(self) -> int:
        return self.proj_W.shape[1]

    @property
    def dtype(self):
        return self.proj_W.data.dtype

    def named_tensors(self) -> list[tuple[str, Param]]:
        """Every tensor in checkpoint order."""
        out = [("word_emb", self.word_emb)]
        for m, W, b in zip(self.spec.region_sizes, self.conv_W, self.conv_b):
            out += [(f"conv{m}_W", W), (f"conv{m}_b", b)]
        out += [("proj_W", self.proj_W), ("proj_b", self.proj_b)]
        if self.user_emb is not None:
            out.append(("user_emb", self.user_emb))
        return out

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_tensors() if p.trainable]

    def zero_grad(self):
        for _, p in self.named_tensors():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        def c(p):
            return Param(p.data.copy(), p.name, p.trainable)
        return ModelParams(self.spec, c(self.word_emb), [c(p) for p in self.conv_W],
                           [c(p) for p in self.conv_b], c(self.proj_W), c(self.proj_b),
                           None if self.user_emb is None else c(self.user_emb),
                           list(self.user_ids), self.dropout_rate)

    def load_state(self, other: "ModelParams"):
        for (_, dst), (_, src) in zip(self.named_tensors(), other.named_tensors()):
            dst.data[...] = src.data


def init_params(spec: ConvSpec, vocab_size: int, out_dim: int = 200, *,
                word_vectors: np.ndarray | None = None,
                user_table=None, fine_tune_users: bool = False,
                dropout_rate: float = 0.5, rng: np.random.Generator | None = None,
                dtype=np.float32) -> ModelParams:
    """Fresh parameters.

    ``word_vectors`` (``vocab_size x embed_dim``) initializes the word table;
    otherwise rows are small uniform noise.  The PAD row always starts at
    zero.  ``user_table`` (an :class:`~qexpert.embed.EmbeddingTable`) makes
    a question/user model; without it the model has no user side.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    k = spec.embed_dim
    if word_vectors is not None:
        words = np.array(word_vectors, dtype=dtype)
        if words.shape != (vocab_size, k):
            raise ValueError(f"word vectors {words.shape} do not match ({vocab_size}, {k})")
    else:
        words = rng.uniform(-0.5 / k, 0.5 / k, size=(vocab_size, k)).astype(dtype)
    words[0] = 0
    conv_W, conv_b = [], []
    F = spec.filters_per_size
    for m in spec.region_sizes:
        W = nn.glorot_uniform((F, m, k), m * k, F, rng, dtype)
        conv_W.append(Param(W, f"conv{m}_W"))
        conv_b.append(Param(np.zeros(F, dtype=dtype), f"conv{m}_b"))
    if user_table is not None:
        out_dim = user_table.dim
    proj_W = Param(nn.glorot_uniform((spec.total_filters, out_dim), spec.total_filters, out_dim, rng, dtype), "proj_W")
    proj_b = Param(np.zeros(out_dim, dtype=dtype), "proj_b")
    user_emb, user_ids = None, []
    if user_table is not None:
        user_emb = Param(np.array(user_table.vectors, dtype=dtype), "user_emb", trainable=fine_tune_users)
        user_ids = list(user_table.keys)
    return ModelParams(spec, Param(words, "word_emb"), conv_W, conv_b, proj_W, proj_b,
                       user_emb, user_ids, dropout_rate)


# ---------------------------------------------------------------------------
# tower
# ---------------------------------------------------------------------------

def _check_ids(ids: np.ndarray, params: ModelParams) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError(f"token ids must be integers, got {ids.dtype}")
    V = params.word_emb.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"token id outside word table range [0, {V})")
    if ids.shape[-1] != params.spec.input_length:
        raise ValueError(f"sequences must have length {params.spec.input_length}, got {ids.shape[-1]}")
    return ids


def encode(ids, params: ModelParams, train: bool = False, rng: np.random.Generator | None = None):
    """Run the tower on a batch ``(B, L)`` of id sequences.

    Returns ``(h, cache)`` with ``h`` of shape ``(B, out_dim)``.
    """
    ids = _check_ids(ids, params)
    x = params.word_emb.data[ids]
    convs, pooled = [], []
    for W, b in zip(params.conv_W, params.conv_b):
        c = nn.conv_text(x, W.data, b.data)
        a = nn.relu(c)
        convs.append((c, a))
        pooled.append(nn.max_pool_1max(a, axis=-2))
    merged = np.concatenate(pooled, axis=-1)
    dropped, mask = nn.dropout_apply(merged, params.dropout_rate, train, rng)
    h = nn.linear(dropped, params.proj_W.data, params.proj_b.data)
    return h, (ids, x, convs, dropped, mask)


def encode_backward(dh: np.ndarray, cache, params: ModelParams):
    """Accumulate tower gradients for upstream ``dh`` into ``params``."""
    ids, x, convs, dropped, mask = cache
    dmerged, dW, db = nn.linear_backward(dh, dropped, params.proj_W.data)
    params.proj_W.grad += dW
    params.proj_b.grad += db
    dmerged = nn.dropout_backward(dmerged, mask)
    dx = np.zeros_like(x)
    F = params.spec.filters_per_size
    for i, (W, b) in enumerate(zip(params.conv_W, params.conv_b)):
        c, a = convs[i]
        dpool = dmerged[..., i * F:(i + 1) * F]
        da = nn.max_pool_1max_backward(dpool, a, axis=-2)
        dc = nn.relu_backward(da, c)
        dxi, dWi, dbi = nn.conv_text_backward(dc, x, W.data)
        W.grad += dWi
        b.grad += dbi
        dx += dxi
    np.add.at(params.word_emb.grad, ids.reshape(-1), dx.reshape(-1, x.shape[-1]))


def question_forward(ids, params: ModelParams, mode: str = "eval",
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Encode one id sequence (length L) to an ``out_dim`` vector."""
    h, _ = encode(np.asarray(ids)[None, :], params, train=(mode == "train"), rng=rng)
    return h[0]


# the question/answer model is siamese: answers go through the same tower
answer_forward = question_forward


def user_vector(user_id: str, params: ModelParams) -> np.ndarray:
    if params.user_emb is None:
        raise UnknownUserError(f"model has no user table (looking up {user_id!r})")
    try:
        return params.user_emb.data[params.user_index[user_id]]
    except KeyError:
        raise UnknownUserError(user_id) from None


def score(q_ids, user_id: str, params: ModelParams) -> float:
    return float(nn.cosine(question_forward(q_ids, params), user_vector(user_id, params)))


def user_rows(user_ids: Sequence[str], params: ModelParams) -> np.ndarray:
    return np.array([params.user_index[u] for u in user_ids], dtype=np.int64)
