"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything the rest of the package computes runs through this module: a small
`Tensor` wrapper around a numpy array, a `Tape` of executed operations, and the
operator set the models need (matmul, leaky_relu, softmax, conv2d, elementwise
arithmetic, reductions, reshapes, concatenation, slicing, nearest-neighbor
upsampling). Gradients are replayed from the tape in reverse execution order,
which is always a valid topological order because an op's inputs exist before
the op runs.

Design constraints worth knowing:

* double precision everywhere (finite-difference checks need the headroom);
* `conv2d` accumulates in a fixed (kh, kw, c_in) order so its forward pass is
  bitwise-identical to a naive per-pixel loop with the same inner order;
* leaky_relu's subgradient at exactly 0 is the negative slope;
* all randomness flows through `Rng` (numpy PCG64 behind a fixed seed), so
  identical seeds give identical draw sequences on every platform.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class UsageError(RuntimeError):
    """An operation was called outside its contract (bad precondition)."""


# ---------------------------------------------------------------------------
# deterministic randomness


class Rng:
    """Seeded random source with a pinned generator algorithm.

    Wraps numpy's PCG64 bit generator, whose streams are guaranteed stable
    across platforms and numpy releases for a given seed. Child streams are
    derived by hashing (seed, name) so independent components of a model can
    draw independently of one another: toggling one component on or off never
    shifts another component's draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, name: str) -> "Rng":
        h = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
        return Rng(int.from_bytes(h[:8], "little"))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size=size).astype(np.float64)

    def normal(self, loc: float, scale: float, size) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size).astype(np.float64)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


# ---------------------------------------------------------------------------
# tape machinery


class _Node:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out: "Tensor", inputs: tuple, bwd: Callable):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


class Tape:
    """Ordered record of executed operations, replayable for adjoints."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    _TAPE.reset()


class no_grad:
    """Context manager that suspends recording onto the tape."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._node: _Node | None = None

    # -- introspection ------------------------------------------------------

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
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def backward(self) -> None:
        backward(self)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: Sequence[Tensor], bwd: Callable) -> Tensor:
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(out, tuple(inputs), bwd)
        out._node = node
        _TAPE.nodes.append(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} vs {b.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, tuple(x % a.ndim for x in ax))
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[x % a.ndim] for x in ax]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(np.swapaxes(a.data, ax1, ax2))
    return _record(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _record(out, tuple(ts), bwd)


def getitem(a: Tensor, idx) -> Tensor:
    out = Tensor(a.data[idx])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[idx] += g
        return (ga,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise UsageError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    out = Tensor(np.where(pos, x.data, slope * x.data))

    def bwd(g):
        return (g * np.where(pos, 1.0, slope),)

    return _record(out, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    return _record(out, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)
    soft = np.exp(out.data)

    def bwd(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution

def _conv_geometry(x_shape, k_shape, stride, padding, depthwise, c_in):
    kh, kw = k_shape[-2], k_shape[-1]
    h_in, w_in = x_shape[-2], x_shape[-1]
    hp, wp = h_in + 2 * padding, w_in + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
        )
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    return kh, kw, h_out, w_out


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    depthwise: bool = False,
) -> Tensor:
    """Direct 2-d convolution (cross-correlation), standard or depthwise.

    `x` is (C,H,W) or (B,C,H,W); standard kernels are (C_out,C_in,KH,KW) and
    depthwise kernels (C,KH,KW), one kernel per input channel. Accumulation
    order over (kh, kw, c_in) is fixed so the forward result is bitwise equal
    to a naive loop with the same inner order.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d expects (C,H,W) or (B,C,H,W), got {x.shape}")
    b_n, c_in = xd.shape[0], xd.shape[1]
    w = kernels.data
    if depthwise:
        if w.ndim != 3 or w.shape[0] != c_in:
            raise DimensionError(
                f"depthwise conv2d needs per-channel kernels ({c_in},KH,KW), got {w.shape}"
            )
        c_out = c_in
    else:
        if w.ndim != 4 or w.shape[1] != c_in:
            raise DimensionError(
                f"conv2d channel counts incompatible: input has {c_in} channels, "
                f"kernels are {w.shape}"
            )
        c_out = w.shape[0]
    kh, kw, h_out, w_out = _conv_geometry(xd.shape, w.shape, stride, padding, depthwise, c_in)

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    out = np.zeros((b_n, c_out, h_out, w_out))
    s = stride
    if depthwise:
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
                out += sl * w[None, :, i, j, None, None]
    else:
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
                for ci in range(c_in):
                    out += sl[:, ci, None] * w[None, :, ci, i, j, None, None]
    if bias is not None:
        out += bias.data[None, :, None, None]

    out_t = Tensor(out[0] if squeeze else out)

    def bwd(g):
        gd = g[None] if squeeze else g
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        if depthwise:
            for i in range(kh):
                for j in range(kw):
                    sl = xp[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
                    gxp[:, :, i : i + s * h_out : s, j : j + s * w_out : s] += (
                        gd * w[None, :, i, j, None, None]
                    )
                    gw[:, i, j] += (gd * sl).sum(axis=(0, 2, 3))
        else:
            for i in range(kh):
                for j in range(kw):
                    sl = xp[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
                    # (B,Co,Ho,Wo) x (Co,Ci) -> (B,Ci,Ho,Wo)
                    gxp[:, :, i : i + s * h_out : s, j : j + s * w_out : s] += np.einsum(
                        "bohw,oc->bchw", gd, w[:, :, i, j], optimize=True
                    )
                    gw[:, :, i, j] += np.einsum("bohw,bchw->oc", gd, sl, optimize=True)
        gx = gxp[:, :, padding : padding + xd.shape[2], padding : padding + xd.shape[3]] if padding else gxp
        gx = gx[0] if squeeze else gx
        gb = gd.sum(axis=(0, 2, 3)) if bias is not None else None
        if bias is None:
            return gx, gw
        return gx, gw, gb

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _record(out_t, inputs, bwd)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor spatial upsampling by 2 on (B,C,H,W) or (C,H,W)."""
    out = Tensor(x.data.repeat(2, axis=-2).repeat(2, axis=-1))

    def bwd(g):
        h, w = x.shape[-2], x.shape[-1]
        g4 = g.reshape(g.shape[:-2] + (h, 2, w, 2))
        return (g4.sum(axis=(-3, -1)),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad ancestor of `loss`.

    Replays the active tape in reverse execution order. Adjoints accumulate in
    a per-call scratch map and are added into `.grad` at the end, so repeated
    calls without a reset accumulate, matching optimizer semantics.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(_TAPE.nodes):
        g = adjoint.get(id(node.out))
        if g is None:
            continue
        for t, gt in zip(node.inputs, node.bwd(g)):
            if gt is None or not t.requires_grad:
                continue
            prev = adjoint.get(id(t))
            adjoint[id(t)] = gt if prev is None else prev + gt
            holders[id(t)] = t
    for tid, t in holders.items():
        if t.requires_grad:
            g = adjoint[tid]
            t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# weight digests


def digest_arrays(arrays: Iterable[np.ndarray]) -> str:
    """SHA-256 over the shapes and little-endian bytes of `arrays`."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(str(a.shape).encode())
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def kaiming_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int, slope: float = 0.25) -> np.ndarray:
    """Fan-in scaled uniform init; gain matches the leaky_relu slope in use."""
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape)
