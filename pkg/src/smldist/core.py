"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a node (op name, parents, backward closure) so that
:func:`backward` can walk the graph in reverse topological order.

Only a fixed set of primitives is supported: elementwise arithmetic,
reductions, ``dense``, ``conv1d``, activations, ``softmax``,
``layer_norm``, ``frobenius_norm``, the one-sided real FFT and a fused soft cross-entropy.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class NumericError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# graph traversal


@dataclass
class Graph:
    """Nodes reachable from a root, parents before children."""

    order: list[Tensor]

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    If ``params`` is given, returns their gradients in order; parameters the
    loss does not depend on get zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        graph = Graph.from_root(loss)
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(graph.order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def silu(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = x.data * s

    def bw(g):
        return (g * (s + out * (1.0 - s)),)

    return _make(out, (x,), bw, "silu")


def hardswish(x: Tensor) -> Tensor:
    d = x.data
    gate = np.clip(d + 3.0, 0.0, 6.0) / 6.0
    out = d * gate

    def bw(g):
        inner = (d > -3.0) & (d < 3.0)
        return (g * (gate + d * inner / 6.0),)

    return _make(out, (x,), bw, "hardswish")


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS = {"relu": relu, "silu": silu, "hardswish": hardswish, "identity": identity}


# ---------------------------------------------------------------------------
# shape ops and reductions


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum_(x, axis, keepdims) / float(n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), bw, "getitem")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, bw, "stack")


# ---------------------------------------------------------------------------
# linear layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data
    return _make(out, (a, b), bw, "matmul")


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (B, I) and ``w`` of shape (I, O)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} does not match {w.shape[1]} outputs")
    with np.errstate(over="ignore", invalid="ignore"):
        y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def bw(g):
        gb = g.sum(axis=0) if b is not None else None
        return g @ w.data.T, x.data.T @ g, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, lambda g: bw(g)[: len(parents)], "dense")


def conv1d_out_length(length: int, kernel: int, stride: int = 1, pad: int = 0) -> int:
    return (length + 2 * pad - kernel) // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over the last axis with zero padding.

    x: (B, Cin, L), w: (Cout, Cin, K), b: (Cout,) -> (B, Cout, Lout).
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: x {x.shape} incompatible with w {w.shape}")
    B, cin, L = x.shape
    cout, _, K = w.shape
    lout = conv1d_out_length(L, K, stride, pad)
    if stride < 1 or K > L + 2 * pad or lout < 1:
        raise ShapeError(f"conv1d: non-positive output length (L={L}, K={K}, pad={pad})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    # (B, Cin, Lout, K) -> (B, Lout, Cin*K)
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, : (lout - 1) * stride + 1 : stride]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(B, lout, cin * K)
    wmat = w.data.reshape(cout, cin * K)
    # one GEMM per sample keeps each output independent of batch composition
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.matmul(cols, wmat.T).transpose(0, 2, 1)
    if b is not None:
        y = y + b.data[None, :, None]
    y = np.ascontiguousarray(y)

    def bw(g):
        gmat = g.transpose(0, 2, 1).reshape(B * lout, cout)
        gw = (gmat.T @ cols.reshape(B * lout, cin * K)).reshape(w.shape)
        gcols = (gmat @ wmat).reshape(B, lout, cin, K)
        gxp = np.zeros_like(xp)
        span = (lout - 1) * stride + 1
        for k in range(K):
            gxp[:, :, k : k + span : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
        gx = gxp[:, :, pad : pad + L] if pad else gxp
        gb = g.sum(axis=(0, 2)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, lambda g: bw(g)[: len(parents)], "conv1d")


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance rescaling along ``axis`` (no affine part)."""
    mu = x.data.mean(axis=axis, keepdims=True)
    sigma = np.sqrt(((x.data - mu) ** 2).mean(axis=axis, keepdims=True) + eps)
    y = (x.data - mu) / sigma

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gy) / sigma,)

    return _make(y, (x,), bw, "layer_norm")


# ---------------------------------------------------------------------------
# probabilities and losses


def _softmax_np(v: np.ndarray, axis: int) -> np.ndarray:
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax_np(v: np.ndarray, axis: int) -> np.ndarray:
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    if not -v.ndim <= axis < max(v.ndim, 1):
        raise ShapeError(f"softmax axis {axis} out of range for shape {v.shape}")
    y = _softmax_np(v.data, axis)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (v,), bw, "softmax")


def log_softmax(v: Tensor, axis: int = -1) -> Tensor:
    y = _log_softmax_np(v.data, axis)
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (v,), bw, "log_softmax")


def soft_cross_entropy(logits: Tensor, target_probs, tol: float = 1e-5) -> Tensor:
    """Batch mean of ``-sum_c q_c log softmax(logits)_c``; targets are constants."""
    q = target_probs.data if isinstance(target_probs, Tensor) else np.asarray(target_probs)
    q = q.astype(logits.dtype, copy=False)
    if q.shape != logits.shape or logits.ndim != 2:
        raise ShapeError(f"soft_cross_entropy: logits {logits.shape} vs targets {q.shape}")
    if np.any(np.abs(q.sum(axis=1) - 1.0) > tol) or np.any(q < 0):
        raise ValueError("soft_cross_entropy: target rows must be probability distributions")
    B = logits.shape[0]
    logp = _log_softmax_np(logits.data, 1)
    loss = np.asarray(-(q * logp).sum() / B)

    def bw(g):
        p = np.exp(logp)
        return (g * (p * q.sum(axis=1, keepdims=True) - q) / B,)

    return _make(loss, (logits,), bw, "soft_cross_entropy")


def one_hot(labels, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Hard-label cross-entropy from integer class ids."""
    return soft_cross_entropy(logits, one_hot(labels, logits.shape[1], logits.dtype))


def frobenius_norm(x, axis=None) -> Tensor:
    """sqrt of the sum of squares over ``axis`` (all elements by default).

    The gradient at an exactly-zero input is taken to be zero.
    """
    if isinstance(x, Spectrum):
        x = x.stacked
    sq = np.sum(x.data * x.data, axis=axis, keepdims=True)
    norm = np.sqrt(sq)
    out = norm if axis is None else np.squeeze(norm, axis=axis)
    if axis is None:
        out = out.reshape(())

    def bw(g):
        gk = g.reshape(norm.shape) if axis is None else np.expand_dims(g, axis)
        safe = np.where(norm > 0, norm, 1.0)
        return (np.where(norm > 0, gk * x.data / safe, 0.0),)

    return _make(np.asarray(out), (x,), bw, "frobenius_norm")


# ---------------------------------------------------------------------------
# spectrum


class Spectrum:
    """One-sided spectrum, stored as a tensor of shape (..., L//2 + 1, 2).

    The last axis holds (real, imaginary).
    """

    __slots__ = ("stacked", "length")

    def __init__(self, stacked: Tensor, length: int):
        self.stacked = stacked
        self.length = length

    @property
    def real(self) -> Tensor:
        return self.stacked[..., 0]

    @property
    def imag(self) -> Tensor:
        return self.stacked[..., 1]

    @property
    def n_bins(self) -> int:
        return self.stacked.shape[-2]

    def complex(self) -> np.ndarray:
        d = self.stacked.data
        return d[..., 0] + 1j * d[..., 1]

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        return Spectrum(self.stacked - other.stacked, self.length)

    @classmethod
    def from_parts(cls, real, imag, length: int | None = None) -> "Spectrum":
        real, imag = as_tensor(real), as_tensor(imag)
        n = real.shape[-1]
        return cls(stack([real, imag], axis=-1), length if length is not None else 2 * (n - 1))


def rfft(x: Tensor) -> Spectrum:
    """Unnormalised one-sided DFT along the last axis.

    Bins 0..L//2 of ``X_k = sum_n x_n exp(-2 pi i k n / L)``.
    """
    L = x.shape[-1]
    if L < 1:
        raise ShapeError("rfft needs a non-empty last axis")
    spec = np.fft.rfft(x.data, axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-1).astype(x.dtype, copy=False)
    n_bins = spec.shape[-1]

    def bw(g):
        # adjoint: dx_n = Re(sum_k G_k exp(+2 pi i k n / L)) over the kept bins
        full = np.zeros(g.shape[:-2] + (L,), dtype=np.complex128)
        full[..., :n_bins] = g[..., 0] + 1j * g[..., 1]
        return ((np.fft.ifft(full, axis=-1).real * L).astype(x.dtype, copy=False),)

    return Spectrum(_make(out, (x,), bw, "rfft"), L)
