"""Minimal dense-tensor reverse-mode autodiff engine.

Design constraints that shape this module:

* float64 by default; oracles and gradient checks need the headroom.
* Broadcasting is restricted to "suffix" broadcasting: the smaller operand's
  shape must equal the trailing dims of the larger one (covers bias adds and
  scalars).  Anything else requires an explicit reshape.
* Streaming inference must reproduce batch outputs bit-for-bit, so every op
  used inside sequence models reduces along the LAST axis or accumulates in a
  fixed ascending order.  ``linear`` computes (T,1,D)@(D,E) per frame instead
  of one (T,D)@(D,E) GEMM: BLAS changes its summation tree with the row
  count, per-frame batching does not.
* Forward ops on finite inputs must yield finite values; overflow raises.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for a primitive."""


class NumericError(FloatingPointError):
    """Raised when a forward op produces NaN/Inf from finite inputs."""


def _check_finite(op: str, out: np.ndarray) -> None:
    # cheap probe: the sum is NaN/Inf iff some element is (desk-scale values
    # cannot overflow a float64 sum)
    s = out.sum()
    if not np.isfinite(s):
        if not np.isfinite(out).all():
            raise NumericError(f"{op}: non-finite values in output")


class Tensor:
    """Dense n-d float array, optionally recorded on a tape.

    ``node`` is the tape position of the op that produced this tensor, or -1
    for constants that do not participate in differentiation.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int = -1):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = data
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, node={self.node})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive applications.

    Each entry holds the op name, the node ids of its differentiable inputs
    and one vjp callable per input (activations needed by the vjp live in the
    closure).  Topological order is by construction: inputs are recorded
    before their consumers.
    """

    def __init__(self):
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.vjps: list[tuple[Callable, ...]] = []
        self.shapes: list[tuple] = []
        self.leaves: dict[str, int] = {}
        self._leaf_data: dict[str, np.ndarray] = {}
        self._n_anon = 0

    def __len__(self) -> int:
        return len(self.ops)

    def _record(self, op: str, inputs: tuple[int, ...], vjps: tuple[Callable, ...],
                shape: tuple) -> int:
        self.ops.append(op)
        self.inputs.append(inputs)
        self.vjps.append(vjps)
        self.shapes.append(shape)
        return len(self.ops) - 1

    def leaf(self, value, name: str | None = None) -> Tensor:
        """Register a differentiable leaf (parameter or watched input)."""
        arr = np.asarray(value, dtype=DEFAULT_DTYPE if np.asarray(value).dtype.kind != "f"
                         else np.asarray(value).dtype)
        if name is None:
            name = f"_leaf{self._n_anon}"
            self._n_anon += 1
        if name in self.leaves:
            raise ValueError(f"leaf {name!r} already on tape")
        nid = self._record("leaf", (), (), arr.shape)
        self.leaves[name] = nid
        self._leaf_data[name] = arr
        return Tensor(arr, self, nid)


def constant(value) -> Tensor:
    """A tensor that does not require gradients."""
    return Tensor(np.asarray(value, dtype=DEFAULT_DTYPE))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _result_tape(op: str, *xs: Tensor) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and tape is not x.tape:
                raise ValueError(f"{op}: operands live on different tapes")
            tape = x.tape
    return tape


def _make(op: str, out: np.ndarray,
          srcs: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Wrap a forward result, recording vjps for differentiable inputs."""
    _check_finite(op, out)
    tape = _result_tape(op, *[t for t, _ in srcs])
    if tape is None:
        return Tensor(out)
    ids = []
    fns = []
    for t, fn in srcs:
        if t.tape is not None:
            ids.append(t.node)
            fns.append(fn)
    nid = tape._record(op, tuple(ids), tuple(fns), out.shape)
    return Tensor(out, tape, nid)


def make_op(op: str, out: np.ndarray,
            srcs: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Public entry point for composite primitives with hand-written vjps."""
    return _make(op, out, srcs)


def grad(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Adjoints of a scalar loss w.r.t. every named leaf on the tape.

    Single reverse sweep, each node visited exactly once; leaves the loss
    never reached get zero gradients.
    """
    if loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    if loss.data.size != 1:
        raise ValueError(f"grad: loss must be scalar, got shape {loss.data.shape}")
    adjoint: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for nid in range(loss.node, -1, -1):
        g = adjoint.get(nid)
        if g is None:
            continue
        for in_id, vjp in zip(tape.inputs[nid], tape.vjps[nid]):
            contrib = vjp(g)
            acc = adjoint.get(in_id)
            if acc is None:
                adjoint[in_id] = contrib
            else:
                acc += contrib
    out: dict[str, np.ndarray] = {}
    for name, nid in tape.leaves.items():
        g = adjoint.get(nid)
        if g is None:
            g = np.zeros_like(tape._leaf_data[name])
        out[name] = g
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers (suffix rule)

def _broadcast_ok(a: tuple, b: tuple) -> bool:
    if a == b:
        return True
    small, big = (a, b) if len(a) < len(b) else (b, a)
    return big[len(big) - len(small):] == small


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum leading axes of g away so it matches a suffix-broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


# ---------------------------------------------------------------------------
# arithmetic primitives

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not suffix-compatible")
    out = a.data + b.data
    return _make("add", out, [
        (a, lambda g, s=a.shape: _reduce_to(g, s)),
        (b, lambda g, s=b.shape: _reduce_to(g, s)),
    ])


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} are not suffix-compatible")
    out = a.data - b.data
    return _make("sub", out, [
        (a, lambda g, s=a.shape: _reduce_to(g, s)),
        (b, lambda g, s=b.shape: -_reduce_to(g, s)),
    ])


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not suffix-compatible")
    ad, bd = a.data, b.data
    out = ad * bd
    return _make("mul", out, [
        (a, lambda g, s=a.shape: _reduce_to(g * bd, s)),
        (b, lambda g, s=b.shape: _reduce_to(g * ad, s)),
    ])


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = a.data * c
    return _make("scale", out, [(a, lambda g: g * c)])


def matmul(a, b) -> Tensor:
    """a @ b with b strictly 2-D; a may carry leading batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp_a(g):
        return g @ bd.T

    def vjp_b(g):
        k = ad.shape[-1]
        return ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])

    return _make("matmul", out, [(a, vjp_a), (b, vjp_b)])


def linear(x, w) -> Tensor:
    """Frame-stable x @ w: each row of x is multiplied in its own GEMM call.

    Bitwise identical to running frames one at a time, which is what keeps
    streaming inference equal to the batch forward pass.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 2 or x.data.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data
    out = (xd[..., None, :] @ wd)[..., 0, :]

    def vjp_x(g):
        return g @ wd.T

    def vjp_w(g):
        k = xd.shape[-1]
        return xd.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])

    return _make("linear", out, [(x, vjp_x), (w, vjp_w)])


# ---------------------------------------------------------------------------
# activations

def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make("tanh", out, [(x, lambda g: g * (1.0 - out * out))])


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)
    return _make("relu", out, [(x, lambda g: g * mask)])


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = _sigmoid_np(x.data)
    return _make("sigmoid", out, [(x, lambda g: g * out * (1.0 - out))])


def swish(x) -> Tensor:
    x = _as_tensor(x)
    s = _sigmoid_np(x.data)
    out = x.data * s
    return _make("swish", out, [(x, lambda g: g * (s + out * (1.0 - s)))])


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids exp overflow for large negative inputs
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# normalizations

def softmax(x) -> Tensor:
    """Log-sum-exp stabilized softmax over the last axis."""
    x = _as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (g - dot) * out

    return _make("softmax", out, [(x, vjp)])


def masked_softmax(x, valid: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``valid`` (boolean) slots.

    Invalid slots get probability exactly 0; every row must keep at least
    one valid slot.
    """
    x = _as_tensor(x)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != x.shape:
        raise ShapeError(f"masked_softmax: mask {valid.shape} != input {x.shape}")
    if not valid.any(axis=-1).all():
        raise ShapeError("masked_softmax: some row has no valid slot")
    neg = np.where(valid, x.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.exp(neg - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (g - dot) * out

    return _make("masked_softmax", out, [(x, vjp)])


def log_softmax(x) -> Tensor:
    x = _as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def vjp(g):
        return g - sm * g.sum(axis=-1, keepdims=True)

    return _make("log_softmax", out, [(x, vjp)])


LAYER_NORM_EPS = 1e-6


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis; variance is floored by eps, so constant rows
    normalize to zero before the affine part."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs features {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def vjp_x(g):
        gg = g * gd
        return inv * (gg - gg.mean(axis=-1, keepdims=True)
                      - xhat * (gg * xhat).mean(axis=-1, keepdims=True))

    def vjp_gain(g):
        return _reduce_to(g * xhat, (d,))

    def vjp_bias(g):
        return _reduce_to(g, (d,))

    return _make("layer_norm", out, [(x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)])


# ---------------------------------------------------------------------------
# shape ops

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    out = x.data.reshape(shape)
    return _make("reshape", out, [(x, lambda g: g.reshape(old))])


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    srcs = []
    for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
        def vjp(g, lo=int(lo), hi=int(hi)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]
        srcs.append((p, vjp))
    return _make("concat", out, srcs)


def narrow(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis."""
    x = _as_tensor(x)
    n = x.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"narrow: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    out = x.data[tuple(idx)].copy()
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[tuple(idx)] = g
        return full

    return _make("narrow", out, [(x, vjp)])


def mean_over_axis(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def vjp(g):
        return np.repeat(np.expand_dims(g / n, axis), n, axis=axis)

    return _make("mean_over_axis", out, [(x, vjp)])


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    if axis is None:
        out = np.asarray(x.data.sum())

        def vjp(g):
            return np.broadcast_to(g, shape).copy()
    else:
        out = x.data.sum(axis=axis)

        def vjp(g):
            return np.repeat(np.expand_dims(g, axis), shape[axis], axis=axis)

    return _make("reduce_sum", out, [(x, vjp)])


def embedding_lookup(table, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array; grads scatter-add."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: id out of range 0..{table.shape[0] - 1}")
    out = table.data[ids]
    vocab = table.shape

    def vjp(g):
        acc = np.zeros(vocab, dtype=g.dtype)
        np.add.at(acc, ids.reshape(-1), g.reshape(-1, vocab[1]))
        return acc

    return _make("embedding_lookup", out, [(table, vjp)])


# ---------------------------------------------------------------------------
# sequence-model primitives

def depthwise_conv1d(x, w, pad_left: int, pad_right: int) -> Tensor:
    """Per-channel 1-D convolution along the first axis of a (T, D) input.

    Zero padding; taps accumulate in ascending order so a streaming
    re-computation with the same window produces identical bits.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"depthwise_conv1d: x {x.shape} vs kernel {w.shape}")
    c = w.shape[0]
    if pad_left + pad_right != c - 1:
        raise ShapeError(f"depthwise_conv1d: pads {pad_left}+{pad_right} != kernel-1 ({c - 1})")
    T, D = x.shape
    xp = np.zeros((T + c - 1, D), dtype=x.data.dtype)
    xp[pad_left:pad_left + T] = x.data
    wd = w.data
    out = np.zeros((T, D), dtype=x.data.dtype)
    for j in range(c):
        out += wd[j] * xp[j:j + T]

    def vjp_x(g):
        gp = np.zeros_like(xp)
        for j in range(c):
            gp[j:j + T] += wd[j] * g
        return gp[pad_left:pad_left + T]

    def vjp_w(g):
        gw = np.empty_like(wd)
        for j in range(c):
            gw[j] = (g * xp[j:j + T]).sum(axis=0)
        return gw

    return _make("depthwise_conv1d", out, [(x, vjp_x), (w, vjp_w)])


def gather_windows(x, left: int, right: int) -> Tensor:
    """(T, D) -> (T, left+1+right, D): window t covers rows t-left .. t+right,
    zero-filled outside [0, T)."""
    return gather_strided_windows(x, left, right, 1)


def attention_scores(q, kwin) -> Tensor:
    """Dot products of each query row against its key window.

    q: (T, dh), kwin: (T, w, dh) -> (T, w).  Reduction over the last axis
    keeps per-row bits independent of T.
    """
    q, kwin = _as_tensor(q), _as_tensor(kwin)
    if q.data.ndim != 2 or kwin.data.ndim != 3 or q.shape[0] != kwin.shape[0] \
            or q.shape[1] != kwin.shape[2]:
        raise ShapeError(f"attention_scores: q {q.shape} vs kwin {kwin.shape}")
    qd, kd = q.data, kwin.data
    out = (qd[:, None, :] * kd).sum(axis=-1)

    def vjp_q(g):
        acc = np.zeros_like(qd)
        for j in range(kd.shape[1]):
            acc += g[:, j:j + 1] * kd[:, j, :]
        return acc

    def vjp_k(g):
        return g[:, :, None] * qd[:, None, :]

    return _make("attention_scores", out, [(q, vjp_q), (kwin, vjp_k)])


def attention_apply(probs, vwin) -> Tensor:
    """Weighted sum of value windows: (T, w) x (T, w, D) -> (T, D).

    Accumulates window positions in ascending order (bit-stable vs streaming).
    """
    probs, vwin = _as_tensor(probs), _as_tensor(vwin)
    if probs.data.ndim != 2 or vwin.data.ndim != 3 or probs.shape != vwin.shape[:2]:
        raise ShapeError(f"attention_apply: probs {probs.shape} vs vwin {vwin.shape}")
    pd, vd = probs.data, vwin.data
    T, w, D = vd.shape
    out = np.zeros((T, D), dtype=vd.dtype)
    for j in range(w):
        out += pd[:, j:j + 1] * vd[:, j, :]

    def vjp_p(g):
        return (g[:, None, :] * vd).sum(axis=-1)

    def vjp_v(g):
        return pd[:, :, None] * g[:, None, :]

    return _make("attention_apply", out, [(probs, vjp_p), (vwin, vjp_v)])


def avgpool_pairs(x) -> Tensor:
    """(T, D) -> (ceil(T/2), D): mean of consecutive frame pairs; an odd tail
    frame averages with itself."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"avgpool_pairs: need non-empty (T, D), got {x.shape}")
    T, D = x.shape
    odd = T % 2 == 1
    xd = np.concatenate([x.data, x.data[-1:]], axis=0) if odd else x.data
    out = 0.5 * xd[0::2] + 0.5 * xd[1::2]

    def vjp(g):
        gx = np.zeros((T + 1 if odd else T, D), dtype=g.dtype)
        gx[0::2] = 0.5 * g
        gx[1::2] = 0.5 * g
        if odd:
            gx[T - 1] += gx[T]
            gx = gx[:T]
        return gx

    return _make("avgpool_pairs", out, [(x, vjp)])


def stack_pairs(x) -> Tensor:
    """(T, D) -> (ceil(T/2), 2D): concatenation of consecutive frame pairs;
    an odd tail frame pairs with a copy of itself."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"stack_pairs: need non-empty (T, D), got {x.shape}")
    T, D = x.shape
    odd = T % 2 == 1
    xd = np.concatenate([x.data, x.data[-1:]], axis=0) if odd else x.data
    out = np.concatenate([xd[0::2], xd[1::2]], axis=1)

    def vjp(g):
        gx = np.zeros((T + 1 if odd else T, D), dtype=g.dtype)
        gx[0::2] = g[:, :D]
        gx[1::2] = g[:, D:]
        if odd:
            gx[T - 1] += gx[T]
            gx = gx[:T]
        return gx

    return _make("stack_pairs", out, [(x, vjp)])


def gather_strided_windows(x, left: int, right: int, stride: int) -> Tensor:
    """(T, D) -> (ceil(T/stride), left+1+right, D): window i covers rows
    i*stride-left .. i*stride+right, zero-filled outside [0, T)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_strided_windows: need (T, D), got {x.shape}")
    T, D = x.shape
    n = -(-T // stride)  # (n-1)*stride <= T-1, so windows fit in left+T+right
    w = left + 1 + right
    xp = np.zeros((left + T + right, D), dtype=x.data.dtype)
    xp[left:left + T] = x.data
    out = np.empty((n, w, D), dtype=x.data.dtype)
    last = (n - 1) * stride
    for j in range(w):
        out[:, j, :] = xp[j:j + last + 1:stride]

    def vjp(g):
        gp = np.zeros_like(xp)
        for j in range(w):
            gp[j:j + last + 1:stride] += g[:, j, :]
        return gp[left:left + T]

    return _make("gather_strided_windows", out, [(x, vjp)])


def add_outer(a, b) -> Tensor:
    """(T, D) + (U, D) -> (T, U, D) pairwise sum (joint-network grid)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"add_outer: shapes {a.shape} and {b.shape}")
    out = a.data[:, None, :] + b.data[None, :, :]
    return _make("add_outer", out, [
        (a, lambda g: g.sum(axis=1)),
        (b, lambda g: g.sum(axis=0)),
    ])


# ---------------------------------------------------------------------------
# gradient checking

def finite_diff_check(f: Callable[[dict[str, np.ndarray]], float],
                      params: dict[str, np.ndarray],
                      grads: dict[str, np.ndarray],
                      eps: float = 1e-6) -> float:
    """Max relative error between supplied gradients and central differences.

    ``f`` maps a params dict to a scalar loss value.  Error metric per
    element: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).  Reports, never
    raises.
    """
    worst = 0.0
    for name, base in params.items():
        g_ad = grads[name]
        flat = base.reshape(-1)
        g_fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(params)
            flat[i] = orig - eps
            lo = f(params)
            flat[i] = orig
            g_fd[i] = (hi - lo) / (2.0 * eps)
        g_fd = g_fd.reshape(base.shape)
        denom = np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
        err = float(np.max(np.abs(g_ad - g_fd) / denom)) if g_ad.size else 0.0
        worst = max(worst, err)
    return worst


def logaddexp(a: float, b: float) -> float:
    """Scalar log(exp(a)+exp(b)) tolerant of -inf arguments."""
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))
