"""Dense float32 tensors with taped reverse-mode autodiff and an Adam optimizer.

Deliberately small: only the primitives a conditional MLP denoiser needs
(matmul, add, mul, sub, broadcast, relu, gelu, layer_norm, concat, slice,
mean, mse). Forward values are plain numpy float32 arrays. Ops record onto
an explicit :class:`Tape` while one is active, and :func:`backward` replays
the tape in exact reverse order. Single-threaded use only; tensors are
treated as immutable once they have entered a forward pass.

Broadcasting is restricted to the two cases the denoiser uses: a leading
batch axis (e.g. ``(W,)`` against ``(B, W)``) and plain scalars. Anything
else is a shape error, on purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

Array = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeMismatch(ValueError):
    """Operand shapes do not conform for the attempted op."""


def _shape_error(op: str, *shapes) -> ShapeMismatch:
    rendered = " vs ".join(str(tuple(s)) for s in shapes)
    return ShapeMismatch(f"{op}: incompatible shapes {rendered}")


class Tensor:
    """N-dimensional float32 value with an optional gradient-tracking flag."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float32)
        if arr.size == 0:
            raise ValueError("zero-size tensors are unsupported; every extent must be >= 1")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


# A tape node is (op_kind, output, inputs, backward_fn); backward_fn maps the
# output gradient to one gradient per input (None for inputs that do not flow).
TapeNode = tuple[str, "Tensor", tuple["Tensor", ...], Callable[[Array], list[Array | None]]]


class Tape:
    """Ordered record of primitive ops; backward walks it in exact reverse."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


_TAPES: list[Tape] = []


def _emit(op: str, inputs: tuple[Tensor, ...], out_data: Array, bwd) -> Tensor:
    flows = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=flows)
    if flows and _TAPES:
        _TAPES[-1].nodes.append((op, out, inputs, bwd))
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to `shape`, undoing leading-batch broadcasting."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=np.float32)
    k = len(shape)
    if g.shape[g.ndim - k:] != shape:
        raise _shape_error("unbroadcast", g.shape, shape)
    return g.reshape((-1,) + shape).sum(axis=0).astype(np.float32, copy=False)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if b.ndim == 1 and a.ndim >= 2 and sa[-1] == sb[0]:
        return
    if a.ndim == 1 and b.ndim >= 2 and sb[-1] == sa[0]:
        return
    raise _shape_error(op, sa, sb)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bwd(g: Array):
        return [g @ b.data.T, a.data.T @ g]

    return _emit("matmul", (a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    out = a.data + b.data

    def bwd(g: Array):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return _emit("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    out = a.data - b.data

    def bwd(g: Array):
        return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]

    return _emit("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    out = a.data * b.data

    def bwd(g: Array):
        return [_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)]

    return _emit("mul", (a, b), out, bwd)


def broadcast(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Expand `a` with extra leading axes (the only broadcast we allow)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < a.ndim or (a.ndim and shape[len(shape) - a.ndim:] != a.shape):
        raise _shape_error("broadcast", a.shape, shape)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def bwd(g: Array):
        return [_unbroadcast(g, a.shape)]

    return _emit("broadcast", (a,), out, bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, np.float32(0.0))
    mask = x.data > 0

    def bwd(g: Array):
        return [g * mask]

    return _emit("relu", (x,), out, bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = np.float32(0.5) * (np.float32(1.0) + erf(xd * np.float32(_INV_SQRT2)))
    out = xd * cdf

    def bwd(g: Array):
        pdf = np.exp(np.float32(-0.5) * xd * xd) * np.float32(_INV_SQRT2PI)
        return [g * (cdf + xd * pdf)]

    return _emit("gelu", (x,), out, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply an affine gain and bias."""
    if gain.ndim != 1 or bias.shape != gain.shape or x.shape[-1] != gain.shape[0]:
        raise _shape_error("layer_norm", x.shape, gain.shape, bias.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True, dtype=np.float32)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True, dtype=np.float32)
    inv = np.float32(1.0) / np.sqrt(var + np.float32(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g: Array):
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True, dtype=np.float32)
        m2 = np.mean(gx * xhat, axis=-1, keepdims=True, dtype=np.float32)
        dx = inv * (gx - m1 - xhat * m2)
        return [dx.astype(np.float32, copy=False), dgain, dbias]

    return _emit("layer_norm", (x, gain, bias), out, bwd)


def concat(*parts, axis: int = -1) -> Tensor:
    if len(parts) == 1 and isinstance(parts[0], (list, tuple)):
        parts = tuple(parts[0])
    if not parts:
        raise ValueError("concat needs at least one tensor")
    nd = parts[0].ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.ndim != nd or p.shape[:ax] + p.shape[ax + 1:] != parts[0].shape[:ax] + parts[0].shape[ax + 1:]:
            raise _shape_error("concat", parts[0].shape, p.shape)
    out = np.concatenate([p.data for p in parts], axis=ax)
    offsets = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def bwd(g: Array):
        return list(np.split(g, offsets, axis=ax))

    return _emit("concat", tuple(parts), out, bwd)


def slice_(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    ax = axis % x.ndim
    extent = x.shape[ax]
    if not (0 <= start < stop <= extent):
        raise ValueError(f"slice: bounds [{start}, {stop}) invalid for extent {extent}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    out = np.ascontiguousarray(x.data[index])

    def bwd(g: Array):
        full = np.zeros(x.shape, dtype=np.float32)
        full[index] = g
        return [full]

    return _emit("slice", (x,), out, bwd)


def mean(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean(dtype=np.float32))
    n = x.size

    def bwd(g: Array):
        return [np.full(x.shape, np.float32(g) / np.float32(n), dtype=np.float32)]

    return _emit("mean", (x,), out, bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all entries, as a scalar tensor."""
    if a.shape != b.shape:
        raise _shape_error("mse", a.shape, b.shape)
    diff = a.data - b.data
    out = np.asarray(np.mean(diff * diff, dtype=np.float32))
    scale = np.float32(2.0 / a.size)

    def bwd(g: Array):
        gd = np.float32(g) * scale * diff
        return [gd, -gd]

    return _emit("mse", (a, b), out, bwd)


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "broadcast": broadcast,
    "relu": relu,
    "gelu": gelu,
    "layer_norm": layer_norm,
    "concat": concat,
    "slice": slice_,
    "mean": mean,
    "mse": mse,
}


def forward_primitive(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name; mostly useful for tests and tooling."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}; known: {sorted(_PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None) -> dict[Tensor, Array]:
    """Accumulate gradients of a scalar loss for every tensor on the tape.

    Returns a map from tensor to float32 gradient of matching shape. Tensors
    listed in `wrt` that the loss does not depend on get a zero gradient.
    """
    if loss.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not tape.nodes:
        raise ValueError("backward on an empty tape")

    acc: dict[int, Array] = {id(loss): np.ones((), dtype=np.float32)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    result: dict[Tensor, Array] = {}

    for _op, out, inputs, bwd in reversed(tape.nodes):
        g = acc.pop(id(out), None)
        if g is None:
            continue  # not on any path to the loss
        result[out] = g
        for inp, gin in zip(inputs, bwd(g)):
            if gin is None or not inp.requires_grad:
                continue
            gin = np.asarray(gin, dtype=np.float32)
            key = id(inp)
            if key in acc:
                acc[key] = acc[key] + gin
            else:
                acc[key] = gin
                by_id[key] = inp

    for key, g in acc.items():  # leaves
        result[by_id[key]] = g

    if wrt is not None:
        for t in wrt:
            if t not in result:
                result[t] = np.zeros(t.shape, dtype=np.float32)
    return result


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam moments and step counter, keyed by parameter identity."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, Array] = field(default_factory=dict)
    v: dict[int, Array] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: dict[Tensor, Array], state: AdamState) -> Sequence[Tensor]:
    """One bias-corrected Adam update, in place on each parameter's data.

    Parameters absent from `grads` are treated as having a zero gradient.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros(p.shape, dtype=np.float32)
        g = np.asarray(g, dtype=np.float32)
        if g.shape != p.shape:
            raise _shape_error("adam_step", p.shape, g.shape)
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float32)
            state.m[key] = m
            v = np.zeros(p.shape, dtype=np.float32)
            state.v[key] = v
        else:
            v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / np.float32(bc1)
        vhat = v / np.float32(bc2)
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + np.float32(state.eps))
    return params
