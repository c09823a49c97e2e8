"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operators needed by the depth networks and their losses are
provided.  Every differentiable operation appends one record to the active
:class:`Tape`; :func:`backward` walks the records in reverse, accumulating
gradients by summation at fan-in nodes, then clears the tape.

Convolutions accept either a single ``[C, H, W]`` input or a batch
``[N, C, H, W]``.  Filters may be shared ``[O, C, k, k]`` or given per
sample ``[N, O, C, k, k]``; the latter is what the hypernetwork produces.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "conv2d",
    "leaky_relu",
    "global_avg_pool",
    "linear",
    "add",
    "sub",
    "mul",
    "abs_",
    "exp",
    "sum_",
    "mean",
    "reshape",
    "concat",
    "upsample_nearest2x",
    "l2_normalize",
]

_TAPES: list["Tape"] = []
_GRAD_ENABLED = [True]


class Tensor:
    """Dense real array that may take part in a differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.is_leaf = True

    @classmethod
    def _result(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out.name = None
        out.is_leaf = not requires_grad
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, so parents always precede
    their children.  Use as a context manager to make it the active tape.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, BackwardFn]] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, out: Tensor, parents: tuple, fn: BackwardFn) -> None:
        self.records.append((out, parents, fn))

    def clear(self) -> None:
        self.records = []

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise FloatingPointError(f"non-finite loss {loss.data!r}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for out, parents, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            pgrads = fn(g)
            for parent, pg in zip(parents, pgrads):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if parent.is_leaf:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        self.clear()


_DEFAULT_TAPE = Tape()


def current_tape() -> Tape:
    return _TAPES[-1] if _TAPES else _DEFAULT_TAPE


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; outputs never require gradients."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``."""
    (tape or current_tape()).backward(loss)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and arr.dtype != like.dtype:
        arr = arr.astype(like.dtype)
    return Tensor._result(arr, False)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; constants take the dtype of the tensor operand."""
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def _make(data: np.ndarray, parents: tuple, fn: BackwardFn) -> Tensor:
    need = _GRAD_ENABLED[0] and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor._result(data, need)
    if need:
        current_tape().record(out, parents, fn)
    return out


# ---------------------------------------------------------------------------
# elementwise and reductions


def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if b.ndim and a.shape != b.shape:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.data.ndim == 0 and b.data.ndim:
        a, b = b, a
    _check_same(a.data, b.data, "add")
    scalar_b = b.data.ndim == 0

    def fn(g):
        gb = np.sum(g) if scalar_b else g
        return g, gb

    return _make(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a.data, b.data, "sub")
    scalar_b = b.data.ndim == 0

    def fn(g):
        return g, (-np.sum(g) if scalar_b else -g)

    return _make(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a scalar or a same-shape array."""
    a, b = _pair(a, b)
    if a.data.ndim == 0 and b.data.ndim:
        a, b = b, a
    _check_same(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    scalar_b = bd.ndim == 0

    def fn(g):
        ga = g * bd if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = np.sum(g * ad) if scalar_b else g * ad
        return ga, gb

    return _make(ad * bd.astype(ad.dtype, copy=False), (a, b), fn)


def abs_(x: Tensor) -> Tensor:
    """Absolute value with sub-gradient 0 at 0."""
    s = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * s,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(x.data, axis=axis), (x,), fn)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def _getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(x.data[index], (x,), fn)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        out = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return out

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), fn)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """Elementwise ``max(x, slope * x)`` for ``slope`` in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rescale vectors along ``axis`` to unit Euclidean norm."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x.data / norm

    def fn(g):
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,)

    return _make(y, (x,), fn)


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``W x + b`` for ``x`` of shape ``[n]`` or ``[N, n]``."""
    x, W = _as_tensor(x), _as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ConfigurationError(f"linear: input {x.shape} does not conform to weight {W.shape}")
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ConfigurationError(f"linear: bias {b.shape} does not match weight {W.shape}")
    xd, Wd = x.data, W.data
    y = xd @ Wd.T
    if b is not None:
        y = y + b.data

    def fn(g):
        gx = g @ Wd if x.requires_grad else None
        gW = None
        if W.requires_grad:
            gW = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        gb = None
        if b is not None and b.requires_grad:
            gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gW, gb

    return _make(y, (x, W, b), fn)


def global_avg_pool(x: Tensor, axes: tuple[int, int] = (-2, -1)) -> Tensor:
    """Per-channel mean over the two spatial ``axes`` (trailing by default)."""
    a0, a1 = sorted(a % x.ndim for a in axes)
    shape = x.shape
    inv = 1.0 / (shape[a0] * shape[a1])

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g * inv, (a0, a1)), shape).copy(),)

    return _make(x.data.mean(axis=(a0, a1)), (x,), fn)


def upsample_nearest2x(x: Tensor, axes: tuple[int, int] = (-2, -1)) -> Tensor:
    """Nearest-neighbour upsampling by two along the two spatial ``axes``."""
    a0, a1 = (a % x.ndim for a in axes)
    y = x.data.repeat(2, axis=a0).repeat(2, axis=a1)

    def fn(g):
        s = list(g.shape)
        split = []
        for i, n in enumerate(s):
            split += [n // 2, 2] if i in (a0, a1) else [n]
        red = (a0 + 1, a1 + 2)
        return (g.reshape(split).sum(axis=red),)

    return _make(y, (x,), fn)


def _conv_shift(xd: np.ndarray, wk: np.ndarray, per_sample: bool):
    """Stride-1 "same" convolution, NHWC, as ``k*k`` shifted matmuls.

    The zero-padded input is flattened to rows of ``C`` values so that every
    kernel tap reads one contiguous block of rows.  Outputs that land in the
    padding columns are computed and dropped.
    """
    n, h, w, c = xd.shape
    k = wk.shape[-3]
    o = wk.shape[-1]
    p = (k - 1) // 2
    wp = w + 2 * p
    rows = (h + 2 * p + 1) * wp
    length = h * wp
    xp = np.zeros((n, h + 2 * p + 1, wp, c), dtype=xd.dtype)
    xp[:, p : p + h, p : p + w] = xd
    if per_sample:
        xf = xp.reshape(n, rows, c)
        y = np.zeros((n, length, o), dtype=xd.dtype)
        for s in range(n):
            xs, ys = xf[s], y[s]
            for i in range(k):
                for j in range(k):
                    off = i * wp + j
                    ys += xs[off : off + length] @ wk[s, i, j]
    else:
        # whole batch as one row block; rows spilling into the next sample are junk
        xf = xp.reshape(n * rows, c)
        span = (n - 1) * rows + length
        yf = np.zeros((n * rows, o), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                yf[:span] += xf[off : off + span] @ wk[i, j]
        y = yf.reshape(n, rows, o)[:, :length]
        xf = xf.reshape(n, rows, c)
    return y.reshape(n, h, wp, o)[:, :, :w], xf


def _conv_shift_backward(g, xf, wk, per_sample, need_x, need_w, xshape):
    n, h, w, c = xshape
    k = wk.shape[-3]
    o = wk.shape[-1]
    p = (k - 1) // 2
    wp = w + 2 * p
    rows = xf.shape[1]
    length = h * wp
    gp = np.zeros((n, rows, o), dtype=g.dtype)
    gp[:, :length].reshape(n, h, wp, o)[:, :, :w] = g
    dxf = np.zeros_like(xf) if need_x else None
    dwk = np.zeros_like(wk) if need_w else None
    if per_sample:
        for s in range(n):
            gs, xs = gp[s, :length], xf[s]
            for i in range(k):
                for j in range(k):
                    off = i * wp + j
                    if need_x:
                        if o == 1:
                            dxf[s, off : off + length] += gs * wk[s, i, j, :, 0]
                        else:
                            dxf[s, off : off + length] += gs @ wk[s, i, j].T
                    if need_w:
                        dwk[s, i, j] = xs[off : off + length].T @ gs
    else:
        span = (n - 1) * rows + length
        gflat = gp.reshape(n * rows, o)[:span]
        xflat = xf.reshape(n * rows, c)
        dflat = dxf.reshape(n * rows, c) if need_x else None
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                if need_x:
                    if o == 1:
                        dflat[off : off + span] += gflat * wk[i, j, :, 0]
                    else:
                        dflat[off : off + span] += gflat @ wk[i, j].T
                if need_w:
                    dwk[i, j] = xflat[off : off + span].T @ gflat
    dx = None
    if need_x:
        dx = dxf.reshape(n, h + 2 * p + 1, wp, c)[:, p : p + h, p : p + w]
    return dx, dwk


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    """NHWC columns laid out as ``[N, Ho, Wo, k, k, C]``."""
    n, h, w, c = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols, ho, wo


def _col2im(dcols: np.ndarray, shape, k: int, stride: int) -> np.ndarray:
    n, h, w, c = shape
    _, ho, wo = dcols.shape[:3]
    p = (k - 1) // 2
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, i, j]
    return dxp[:, p : p + h, p : p + w] if p else dxp


def conv2d(
    x: Tensor,
    filters: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    layout: str = "nchw",
) -> Tensor:
    """2-D cross-correlation with zero "same" padding of ``(k - 1) // 2``.

    ``x`` is ``[C, H, W]`` / ``[N, C, H, W]`` for ``layout="nchw"`` or
    ``[N, H, W, C]`` for ``layout="nhwc"``; the output uses the same layout
    with spatial size ``ceil(H / stride) x ceil(W / stride)``.  Filters are
    always ``[O, C, k, k]`` (shared) or ``[N, O, C, k, k]`` (per sample).
    """
    if layout not in ("nchw", "nhwc"):
        raise ConfigurationError(f"conv2d: unknown layout {layout!r}")
    x, filters = _as_tensor(x), _as_tensor(filters)
    nchw = layout == "nchw"
    single = nchw and x.ndim == 3
    xd = x.data[None] if single else x.data
    fd = filters.data
    per_sample = fd.ndim == 5
    if xd.ndim != 4 or fd.ndim not in (4, 5):
        raise ConfigurationError(f"conv2d: bad ranks input {x.shape}, filters {filters.shape}")
    if nchw:
        xd = xd.transpose(0, 2, 3, 1)
    n, h, w, c = xd.shape
    o, fc, k, k2 = fd.shape[-4:]
    if fc != c:
        raise ConfigurationError(f"conv2d: input has {c} channels but filters expect {fc}")
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if per_sample and fd.shape[0] != n:
        raise ConfigurationError(f"conv2d: {fd.shape[0]} filter sets for batch of {n}")
    if stride < 1 or h < 1 or w < 1:
        raise ConfigurationError("conv2d: stride and spatial extents must be positive")
    bd = None
    if bias is not None:
        bias = _as_tensor(bias)
        bd = bias.data
        want = (n, o) if per_sample else (o,)
        if bd.shape != want:
            raise ConfigurationError(f"conv2d: bias shape {bd.shape}, expected {want}")

    # filters as [(N,) k, k, C, O]
    wk = np.ascontiguousarray(fd.transpose(0, 3, 4, 2, 1) if per_sample else fd.transpose(2, 3, 1, 0))
    use_shift = stride == 1
    if use_shift:
        y, saved = _conv_shift(xd, wk, per_sample)
        ho, wo = h, w
    else:
        saved, ho, wo = _im2col(xd, k, stride)
        if per_sample:
            y = np.matmul(saved.reshape(n, ho * wo, k * k * c), wk.reshape(n, k * k * c, o))
        else:
            y = saved.reshape(n * ho * wo, k * k * c) @ wk.reshape(k * k * c, o)
        y = y.reshape(n, ho, wo, o)
    if bd is not None:
        y = y + (bd[:, None, None, :] if per_sample else bd)
    if nchw:
        y = y.transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y[0] if single else y)

    def fn(g):
        g4 = g[None] if single else g
        if nchw:
            g4 = g4.transpose(0, 2, 3, 1)
        gx = gwk = gb = None
        need_x, need_w = x.requires_grad, filters.requires_grad
        if use_shift:
            gx, gwk = _conv_shift_backward(g4, saved, wk, per_sample, need_x, need_w, (n, h, w, c))
        else:
            gm = np.ascontiguousarray(g4).reshape(n, ho * wo, o)
            kk = k * k * c
            if need_x:
                if per_sample:
                    dcols = np.matmul(gm, wk.reshape(n, kk, o).transpose(0, 2, 1))
                else:
                    dcols = gm.reshape(-1, o) @ wk.reshape(kk, o).T
                gx = _col2im(dcols.reshape(n, ho, wo, k, k, c), (n, h, w, c), k, stride)
            if need_w:
                if per_sample:
                    gwk = np.matmul(saved.reshape(n, ho * wo, kk).transpose(0, 2, 1), gm).reshape(wk.shape)
                else:
                    gwk = (saved.reshape(-1, kk).T @ gm.reshape(-1, o)).reshape(wk.shape)
        if gx is not None:
            if nchw:
                gx = gx.transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx[0] if single else gx)
        gf = None
        if gwk is not None:
            gf = gwk.transpose(0, 4, 3, 1, 2) if per_sample else gwk.transpose(3, 2, 0, 1)
            gf = np.ascontiguousarray(gf)
        if bias is not None and bias.requires_grad:
            gb = g4.sum(axis=(1, 2)) if per_sample else g4.sum(axis=(0, 1, 2))
        return gx, gf, gb

    return _make(y, (x, filters, bias), fn)
