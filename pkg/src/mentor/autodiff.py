"""Minimal dense reverse-mode differentiation engine.

Everything is a 2-d (or 0-d scalar) float array wrapped in a Tensor.  Ops
executed while a Tape is active record a pullback closure; Tape.gradients
walks the records in exact reverse order and accumulates gradients
additively for shared inputs.

Arithmetic width is process-global: float32 by default for training,
float64 for gradient checks (also selectable via the MENTOR_PRECISION
environment variable, values ``f32``/``f64``).
"""

from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "set_precision",
    "get_precision",
    "tensor",
    "parameter",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "reshape",
    "gather_rows",
    "log",
    "exp",
    "relu",
    "leaky_relu",
    "dropout",
    "softmax_over_groups",
    "log_softmax_over_groups",
    "segment_reduce",
    "l2_norm_clamp",
    "mean_all",
    "sum_all",
    "grad_check",
]

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_dtype = _PRECISIONS[os.environ.get("MENTOR_PRECISION", "f32")]


def set_precision(name: str) -> None:
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}, expected f32 or f64")
    _dtype = _PRECISIONS[name]


def get_precision() -> str:
    return "f32" if _dtype is np.float32 else "f64"


def float_dtype():
    return _dtype


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


_TAPES: list["Tape"] = []


class Tape:
    """Recorder of primitive applications for one forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def gradients(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradient of a scalar loss w.r.t. each parameter, reverse order walk."""
        if loss.data.size != 1:
            raise ValueError("gradients requires a scalar loss")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, pullback in reversed(self._records):
            gout = grads.get(id(out))
            if gout is None:
                continue
            for t, gin in zip(inputs, pullback(gout)):
                if gin is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = gin if acc is None else acc + gin
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _record(out: Tensor, inputs: tuple[Tensor, ...], pullback: Callable) -> Tensor:
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1]._records.append((out, inputs, pullback))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the input shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data @ b.data)

    def pullback(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), pullback)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def pullback(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), pullback)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def pullback(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), pullback)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def pullback(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), pullback)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = _dtype(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), pullback)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row selection a[indices]; backward scatter-adds into the source rows.

    The scatter plan (sorted index runs) is built at call time so the
    backward is a cheap reduceat instead of a per-element ufunc.at.
    """
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(a.data[idx])
    n_rows = a.data.shape[0]

    def pullback(g):
        if idx.size == 0:
            return (np.zeros_like(a.data),)
        scatter = sp.csc_matrix(
            (np.ones(idx.shape[0], dtype=g.dtype), idx,
             np.arange(idx.shape[0] + 1)),
            shape=(n_rows, idx.shape[0]),
        )
        return (np.asarray(scatter @ g),)

    return _record(out, (a,), pullback)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record(out, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, negative_slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    slope = _dtype(negative_slope)
    out = Tensor(np.where(mask, a.data, a.data * slope))
    return _record(out, (a,), lambda g: (np.where(mask, g, g * slope),))


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / _dtype(1.0 - p)
    keep = keep.astype(_dtype)
    out = Tensor(a.data * keep)
    return _record(out, (a,), lambda g: (g * keep,))


def _segment_starts(segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    return np.searchsorted(segment_ids, np.arange(num_segments + 1))


def _segment_sum_data(x: np.ndarray, segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    """Sum rows per sorted segment (sparse matmul); empty segments yield zeros."""
    if x.shape[0] == 0:
        return np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    m = x.shape[0]
    pool = sp.csr_matrix(
        (np.ones(m, dtype=x.dtype), np.arange(m),
         _segment_starts(segment_ids, num_segments)),
        shape=(num_segments, m),
    )
    return np.asarray(pool @ x)


def segment_reduce(
    x: Tensor, segment_ids: np.ndarray, num_segments: int, mode: str = "sum"
) -> Tensor:
    """Reduce rows of x within sorted segments (sum | mean | max | min).

    Empty segments produce zero rows in every mode.  The max/min backward
    routes the gradient to the first argext row on ties, a deterministic
    subgradient choice.
    """
    x = _as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != x.data.shape[0]:
        raise ValueError("segment_ids length must match rows of x")
    if seg.shape[0] > 1 and (np.diff(seg) < 0).any():
        raise ValueError("segment_ids must be sorted")
    counts = np.bincount(seg, minlength=num_segments) if seg.size else np.zeros(
        num_segments, dtype=np.int64
    )

    if mode == "sum" or mode == "mean":
        summed = _segment_sum_data(x.data, seg, num_segments)
        if mode == "sum":
            out = Tensor(summed)

            def pullback(g):
                return (g[seg],)

        else:
            denom = np.maximum(counts, 1).astype(x.data.dtype).reshape(
                (num_segments,) + (1,) * (x.data.ndim - 1)
            )
            out = Tensor(summed / denom)

            def pullback(g):
                return ((g / denom)[seg],)

        return _record(out, (x,), pullback)

    if mode not in ("max", "min"):
        raise ValueError(f"unknown segment_reduce mode {mode!r}")

    nonempty = np.flatnonzero(counts)
    starts = _segment_starts(seg, num_segments)
    red = np.zeros((num_segments,) + x.data.shape[1:], dtype=x.data.dtype)
    if nonempty.size:
        ufunc = np.maximum if mode == "max" else np.minimum
        red[nonempty] = ufunc.reduceat(x.data, starts[nonempty], axis=0)
    out = Tensor(red)

    # first row index attaining the extremum, per (segment, column)
    row_ids = np.arange(x.data.shape[0]).reshape((-1,) + (1,) * (x.data.ndim - 1))
    is_ext = x.data == red[seg]
    masked = np.where(is_ext, row_ids, x.data.shape[0])
    winners = np.full((num_segments,) + x.data.shape[1:], x.data.shape[0], dtype=np.int64)
    if nonempty.size:
        winners[nonempty] = np.minimum.reduceat(masked, starts[nonempty], axis=0)

    def pullback(g):
        gin = np.zeros_like(x.data)
        valid = winners < x.data.shape[0]
        if x.data.ndim == 1:
            np.add.at(gin, winners[valid], g[valid])
        else:
            rows = winners[valid]
            cols = np.broadcast_to(
                np.arange(x.data.shape[1]), winners.shape
            )[valid]
            np.add.at(gin, (rows, cols), g[valid])
        return (gin,)

    return _record(out, (x,), pullback)


def softmax_over_groups(
    scores: Tensor, segment_ids: np.ndarray, num_segments: int
) -> Tensor:
    """Softmax normalized within each sorted group of rows.

    ``scores`` is (M, 1) or (M,); every group must be non-empty for the
    result to be a proper distribution (empty groups are simply absent).
    """
    scores = _as_tensor(scores)
    seg = np.asarray(segment_ids, dtype=np.int64)
    flat = scores.data.reshape(-1)
    if seg.shape[0] != flat.shape[0]:
        raise ValueError("segment_ids length must match scores")
    gmax = np.full(num_segments, -np.inf, dtype=flat.dtype)
    counts = np.bincount(seg, minlength=num_segments)
    nonempty = np.flatnonzero(counts)
    starts = _segment_starts(seg, num_segments)
    if nonempty.size:
        gmax[nonempty] = np.maximum.reduceat(flat, starts[nonempty])
    z = np.exp(flat - gmax[seg])
    denom = _segment_sum_data(z, seg, num_segments)
    probs = z / denom[seg]
    out = Tensor(probs.reshape(scores.data.shape))

    def pullback(g):
        gf = g.reshape(-1)
        dot = _segment_sum_data(gf * probs, seg, num_segments)
        gin = probs * (gf - dot[seg])
        return (gin.reshape(scores.data.shape),)

    return _record(out, (scores,), pullback)


def log_softmax_over_groups(
    scores: Tensor, segment_ids: np.ndarray, num_segments: int
) -> Tensor:
    """Log of softmax_over_groups computed stably (shift by the group max)."""
    scores = _as_tensor(scores)
    seg = np.asarray(segment_ids, dtype=np.int64)
    flat = scores.data.reshape(-1)
    if seg.shape[0] != flat.shape[0]:
        raise ValueError("segment_ids length must match scores")
    gmax = np.full(num_segments, -np.inf, dtype=flat.dtype)
    counts = np.bincount(seg, minlength=num_segments)
    nonempty = np.flatnonzero(counts)
    starts = _segment_starts(seg, num_segments)
    if nonempty.size:
        gmax[nonempty] = np.maximum.reduceat(flat, starts[nonempty])
    shifted = flat - gmax[seg]
    z = np.exp(shifted)
    denom = _segment_sum_data(z, seg, num_segments)
    logp = shifted - np.log(denom)[seg]
    probs = z / denom[seg]
    out = Tensor(logp.reshape(scores.data.shape))

    def pullback(g):
        gf = g.reshape(-1)
        gsum = _segment_sum_data(gf, seg, num_segments)
        gin = gf - probs * gsum[seg]
        return (gin.reshape(scores.data.shape),)

    return _record(out, (scores,), pullback)


def l2_norm_clamp(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise x / max(||x||_2, eps); zero rows map to zero rows."""
    x = _as_tensor(x)
    norms = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, _dtype(eps))
    out = Tensor(x.data / denom)
    clamped = norms <= eps

    def pullback(g):
        dot = (g * out.data).sum(axis=1, keepdims=True)
        free = (g - out.data * dot) / denom
        return (np.where(clamped, g / denom, free),)

    return _record(out, (x,), pullback)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum())
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = _dtype(x.data.size)
    out = Tensor(x.data.mean())
    return _record(
        out, (x,), lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),)
    )


def grad_check(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    atol: float = 1e-8,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must be a deterministic closure over ``params`` returning a scalar
    Tensor (stochastic pieces such as dropout must be disabled or seeded to a
    fixed draw per call).  Requires 64-bit precision.

    Central differences carry irreducible rounding noise of about
    ulp(loss)/(2*step) ~ 1e-11, so pairs that agree within ``atol`` absolutely
    (zero-gradient directions) count as exact instead of being divided by the
    relative floor.
    """
    if get_precision() != "f64":
        raise RuntimeError("grad_check requires f64 precision")
    names = list(params)
    with Tape() as tape:
        loss = fn()
    if loss.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    analytic = tape.gradients(loss, [params[n] for n in names])

    worst = 0.0
    for name, grad in zip(names, analytic):
        p = params[name]
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data)
            flat[i] = orig - step
            lo = float(fn().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            gap = abs(gflat[i] - numeric)
            if gap <= atol:
                continue
            worst = max(worst, gap / max(abs(numeric), 1e-8))
    return worst
