"""Small numpy layer library: forward/backward pairs, optimizers, gradient checking.

Every op comes as ``op(...)`` plus ``op_backward(dout, ...)`` that returns the
gradients of its inputs.  Shapes follow the text-CNN convention: a sentence is
an ``(n, k)`` matrix of ``n`` token vectors of width ``k``; a leading batch
axis is allowed everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

COSINE_EPS = 1e-12


class Param:
    """A trainable array and its gradient accumulator."""

    def __init__(self, data, name: str = "", trainable: bool = True):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


@dataclass(frozen=True)
class ConvSpec:
    region_sizes: tuple[int, ...]
    filters_per_size: int
    input_length: int
    embed_dim: int

    def __post_init__(self):
        object.__setattr__(self, "region_sizes", tuple(int(m) for m in self.region_sizes))
        if not self.region_sizes:
            raise ValueError("at least one region size is required")
        for m in self.region_sizes:
            if not 1 <= m <= self.input_length:
                raise ValueError(
                    f"region size {m} outside [1, {self.input_length}] for input length {self.input_length}"
                )
        if self.filters_per_size < 1:
            raise ValueError("filters_per_size must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")

    @property
    def total_filters(self) -> int:
        return self.filters_per_size * len(self.region_sizes)

    def output_heights(self) -> list[int]:
        return [self.input_length - m + 1 for m in self.region_sizes]


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# convolution over token windows
# ---------------------------------------------------------------------------

def conv_text(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid, stride-1 convolution of a sentence matrix with full-width filters.

    ``x`` is ``(n, k)`` or ``(batch, n, k)``; ``W`` is ``(F, m, k)``; ``b`` is
    ``(F,)``.  Returns ``(n - m + 1, F)`` (with the batch axis if given), where
    ``out[t, f] = b[f] + sum(x[t:t+m] * W[f])``.
    """
    x = np.asarray(x)
    W = np.asarray(W)
    if W.ndim != 3:
        raise ValueError(f"filters must be (F, m, k), got shape {W.shape}")
    F, m, k = W.shape
    if x.ndim < 2 or x.shape[-1] != k:
        raise ValueError(f"input shape {x.shape} does not match filter shape {W.shape}: widths differ")
    n = x.shape[-2]
    if m > n:
        raise ValueError(f"filter height {m} exceeds input length {n} (input {x.shape}, filters {W.shape})")
    if np.shape(b) != (F,):
        raise ValueError(f"bias shape {np.shape(b)} does not match {F} filters")
    T = n - m + 1
    lead = x.shape[:-2]
    xb = x.reshape(-1, n, k)
    # one matmul per filter row, shifted and summed: avoids materializing windows
    out = np.zeros((xb.shape[0], T, F), dtype=np.result_type(x, W, b))
    x2 = xb.reshape(-1, k)
    for j in range(m):
        out += (x2 @ W[:, j, :].T).reshape(xb.shape[0], n, F)[:, j:j + T]
    out += b
    return out.reshape(*lead, T, F)


def conv_text_backward(dout: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Gradients ``(dx, dW, db)`` of :func:`conv_text`."""
    F, m, k = W.shape
    n = x.shape[-2]
    T = n - m + 1
    d = dout.reshape(-1, T, F)
    xb = x.reshape(-1, n, k)
    db = d.sum(axis=(0, 1))
    dW = np.empty(W.shape, dtype=np.result_type(x, dout))
    dx = np.zeros(x.shape, dtype=np.result_type(x, dout))
    dxb = dx.reshape(-1, n, k)
    d2 = d.reshape(-1, F)
    for j in range(m):
        dW[:, j, :] = d2.T @ xb[:, j:j + T, :].reshape(-1, k)
        dxb[:, j:j + T, :] += (d2 @ W[:, j, :]).reshape(-1, T, k)
    return dx, dW, db


# ---------------------------------------------------------------------------
# elementwise and pooling
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is 0
    return dout * (x > 0)


def max_pool_1max(feature_map: np.ndarray, axis: int = 0):
    """1-max pooling: the largest activation along ``axis``.

    A plain vector reduces to a scalar; a ``(T, F)`` feature-map block pools
    each filter column with ``axis=-2``.
    """
    feature_map = np.asarray(feature_map)
    if feature_map.size == 0 or feature_map.shape[axis] == 0:
        raise ValueError("cannot max-pool an empty feature map")
    return feature_map.max(axis=axis)


def max_pool_1max_backward(dout, feature_map: np.ndarray, axis: int = 0) -> np.ndarray:
    """Route ``dout`` to the first position attaining the max."""
    feature_map = np.asarray(feature_map)
    idx = np.expand_dims(np.argmax(feature_map, axis=axis), axis)
    dx = np.zeros(feature_map.shape, dtype=np.result_type(feature_map, np.asarray(dout)))
    np.put_along_axis(dx, idx, np.expand_dims(np.asarray(dout), axis), axis=axis)
    return dx


# ---------------------------------------------------------------------------
# dense layer, dropout
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or np.shape(b) != (W.shape[1],):
        raise ValueError(f"linear shapes do not conform: x {x.shape}, W {W.shape}, b {np.shape(b)}")
    return x @ W + b


def linear_backward(dout: np.ndarray, x: np.ndarray, W: np.ndarray):
    x2 = x.reshape(-1, W.shape[0])
    d2 = dout.reshape(-1, W.shape[1])
    return dout @ W.T, x2.T @ d2, d2.sum(axis=0)


def dropout_apply(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout.  Returns ``(out, mask)``; ``mask`` is None when inactive.

    In eval mode, or with ``rate == 0``, the input is returned unchanged.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask) -> np.ndarray:
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------
# cosine similarity
# ---------------------------------------------------------------------------

def cosine(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine similarity along the last axis; 0 when either norm is below 1e-12."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"cosine needs equal lengths, got {u.shape[-1]} and {v.shape[-1]}")
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    dot = np.sum(u * v, axis=-1)
    ok = (nu >= COSINE_EPS) & (nv >= COSINE_EPS)
    denom = np.where(ok, nu * nv, 1.0)
    return np.where(ok, dot / denom, 0.0)


def cosine_backward(ds: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Gradients ``(du, dv)`` of :func:`cosine` scaled by upstream ``ds``."""
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = (nu >= COSINE_EPS) & (nv >= COSINE_EPS)
    nu_s = np.where(ok, nu, 1.0)
    nv_s = np.where(ok, nv, 1.0)
    s = np.sum(u * v, axis=-1, keepdims=True) / (nu_s * nv_s)
    ds = np.expand_dims(np.asarray(ds), -1)
    du = ds * (v / (nu_s * nv_s) - s * u / nu_s**2)
    dv = ds * (u / (nu_s * nv_s) - s * v / nv_s**2)
    return np.where(ok, du, 0.0), np.where(ok, dv, 0.0)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class SGD:
    kind = "sgd"

    def __init__(self, params: Sequence[Param], lr: float):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        for p in self.params:
            p.data -= (self.lr * p.grad).astype(p.data.dtype, copy=False)


class Adam:
    """Adam with bias-corrected moments.

    A parameter whose gradient is entirely zero this step still has its
    moments decayed, but its values are left untouched.
    """

    kind = "adam"

    def __init__(self, params: Sequence[Param], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1) or eps <= 0:
            raise ValueError("need 0 < beta1, beta2 < 1 and eps > 0")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            if not g.any():
                continue
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype, copy=False)


def make_optimizer(kind: str, params: Sequence[Param], lr: float):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r} (expected 'sgd' or 'adam')")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(loss_fn: Callable[[], float], arrays: Sequence[np.ndarray],
               analytic: Sequence[np.ndarray], step: float = 1e-5,
               max_checks: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` is re-evaluated after perturbing the entries of ``arrays`` in
    place, so it must close over them.  Relative error per entry is
    ``|a - f| / max(|a|, |f|, 1e-8)``.  With ``max_checks`` only a random
    subset of entries per array is probed.
    """
    worst = 0.0
    for arr, ga in zip(arrays, analytic):
        if arr.shape != ga.shape:
            raise ValueError(f"gradient shape {ga.shape} differs from array shape {arr.shape}")
        if not np.all(np.isfinite(ga)):
            raise FloatingPointError("analytic gradient has non-finite entries")
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError("arrays must be contiguous so they can be perturbed in place")
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_checks, replace=False)
        gflat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn()
            flat[i] = orig - step
            fm = loss_fn()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while probing entry {i}")
            fd = (fp - fm) / (2 * step)
            a = gflat[i]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return float(worst)
