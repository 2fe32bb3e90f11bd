"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations run eagerly. When a :class:`Tape` is active (``with Tape() as
tape:``) every primitive applied to tensors is appended to it together with a
backward rule, and :func:`backward` walks the entries in reverse to produce
gradients of a scalar output.

Convolution tensors use the NHWC layout (batch, height, width, channels).
Convolution kernels are ``(kh, kw, c_in, c_out)``; transposed-convolution
kernels are ``(kh, kw, c_out, c_in)``.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEFAULT_DTYPE = np.float64
DEBUG = bool(os.environ.get("LDRSP_DEBUG"))

_TAPES: list["Tape"] = []


def set_default_dtype(dtype) -> None:
    """Set the floating precision used when wrapping new arrays (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """An n-dimensional array that can be recorded on a tape.

    ``node`` is ``(tape, index)`` when the tensor was produced by a recorded
    primitive, otherwise ``None`` (a leaf or constant).
    """

    __slots__ = ("data", "node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.node = None
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul_elem(self, other)

    def __rmul__(self, other):
        return mul_elem(other, self)

    def __neg__(self):
        return mul_elem(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of primitive applications.

    Entries are appended in execution order, so operands always precede the
    entries that consume them.
    """

    def __init__(self):
        self.entries: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []
        self._seen: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def watch(self, *tensors: Tensor) -> None:
        """Register leaves so gradients can be requested even if they go unused."""
        for t in tensors:
            self._seen[id(t)] = t

    def contains(self, t: Tensor) -> bool:
        return id(t) in self._seen and self._seen[id(t)] is t

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, rule: Callable) -> None:
        for t in inputs:
            self._seen[id(t)] = t
        self._seen[id(output)] = output
        output.node = (self, len(self.entries))
        self.entries.append((op, inputs, output, rule))

    def gradient(self, output: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        grads = backward(self, output, sources)
        return [grads[s] for s in sources]


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.node = None
    out.name = None
    if DEBUG and all(np.isfinite(t.data).all() for t in inputs):
        if not np.isfinite(out_data).all():
            raise FloatingPointError(f"{op}: non-finite output from finite inputs")
    for tape in _TAPES:
        tape.record(op, inputs, out, rule)
    return out


class _GradMap(dict):
    """Gradient lookup keyed by tensor identity."""

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return dict.__getitem__(self, id(t))

    def __contains__(self, t) -> bool:
        return dict.__contains__(self, id(t))


def backward(tape: Tape, output: Tensor, sources: Iterable[Tensor] | None = None) -> _GradMap:
    """Gradients of scalar ``output`` with respect to ``sources``.

    With ``sources=None`` every tensor seen by the tape is returned. Sources that
    appear on the tape but do not influence ``output`` get zeros.
    """
    if output.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {output.shape}")
    if output.node is None or output.node[0] is not tape:
        raise ValueError("backward: output was not recorded on this tape")
    if sources is None:
        sources = list(tape._seen.values())
    sources = list(sources)
    for s in sources:
        if not tape.contains(s):
            raise ValueError(f"backward: {s!r} is not on the tape")

    # forward sweep: which tensors depend on a requested source
    needed = {id(s) for s in sources}
    stop = output.node[1]
    live = []
    for idx in range(stop + 1):
        op, inputs, out, rule = tape.entries[idx]
        if id(out) in needed or any(id(t) in needed for t in inputs):
            needed.add(id(out))
            live.append(idx)

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for idx in reversed(live):
        op, inputs, out, rule = tape.entries[idx]
        g = grads.pop(id(out), None) if not any(out is s for s in sources) else grads.get(id(out))
        if g is None:
            continue
        mask = tuple(id(t) in needed for t in inputs)
        contribs = rule(g, mask)
        for t, need, c in zip(inputs, mask, contribs):
            if not need or c is None:
                continue
            if id(t) in grads:
                grads[id(t)] = grads[id(t)] + c
            else:
                grads[id(t)] = c

    result = _GradMap()
    for s in sources:
        g = grads.get(id(s))
        dict.__setitem__(result, id(s), np.zeros_like(s.data) if g is None else g)
    return result


def grad(fn: Callable[..., Tensor], *args: Tensor) -> tuple[Tensor, list[np.ndarray]]:
    """Evaluate ``fn(*args)`` on a fresh tape and return (value, gradients wrt args)."""
    args = tuple(as_tensor(a) for a in args)
    with Tape() as tape:
        tape.watch(*args)
        out = fn(*args)
    return out, tape.gradient(out, args)


# ---------------------------------------------------------------------------
# shape helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def rule(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(g, b.shape) if need[1] else None)

    return _emit("add", (a, b), a.data + b.data, rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def rule(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(-g, b.shape) if need[1] else None)

    return _emit("sub", (a, b), a.data - b.data, rule)


def mul_elem(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul_elem", a, b)

    def rule(g, need):
        return (_unbroadcast(g * b.data, a.shape) if need[0] else None,
                _unbroadcast(g * a.data, b.shape) if need[1] else None)

    return _emit("mul_elem", (a, b), a.data * b.data, rule)


def elem_min(a, b) -> Tensor:
    """Elementwise minimum; ties send the whole gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("elem_min", a, b)
    pick_a = a.data <= b.data

    def rule(g, need):
        return (_unbroadcast(g * pick_a, a.shape) if need[0] else None,
                _unbroadcast(g * ~pick_a, b.shape) if need[1] else None)

    return _emit("elem_min", (a, b), np.where(pick_a, a.data, b.data), rule)


def elem_max(a, b) -> Tensor:
    """Elementwise maximum; ties send the whole gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("elem_max", a, b)
    pick_a = a.data >= b.data

    def rule(g, need):
        return (_unbroadcast(g * pick_a, a.shape) if need[0] else None,
                _unbroadcast(g * ~pick_a, b.shape) if need[1] else None)

    return _emit("elem_max", (a, b), np.where(pick_a, a.data, b.data), rule)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def rule(g, need):
        return (g @ b.data.T if need[0] else None,
                a.data.T @ g if need[1] else None)

    return _emit("matmul", (a, b), a.data @ b.data, rule)


# ---------------------------------------------------------------------------
# elementwise unary


def square(x) -> Tensor:
    x = as_tensor(x)
    return _emit("square", (x,), x.data * x.data, lambda g, need: (2.0 * x.data * g,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _emit("log", (x,), np.log(x.data), lambda g, need: (g / x.data,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _emit("sigmoid", (x,), s, lambda g, need: (g * s * (1.0 - s),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data).astype(x.data.dtype, copy=False)
    return _emit("softplus", (x,), out, lambda g, need: (g * _sigmoid(x.data),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return _emit("relu", (x,), np.where(on, x.data, 0.0).astype(x.data.dtype, copy=False),
                 lambda g, need: (g * on,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes where the input is inside the closed interval."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit("clip", (x,), np.clip(x.data, lo, hi), lambda g, need: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and structure


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g, need):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", (x,), np.asarray(out), rule)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims) if count else np.zeros(())

    def rule(g, need):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _emit("mean", (x,), np.asarray(out), rule)


def l2_norm(x, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at a zero vector is taken as zero."""
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=True))

    def rule(g, need):
        if not keepdims:
            g = np.expand_dims(g, axes)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x.data / safe, 0.0),)

    out = n if keepdims else n.reshape([s for i, s in enumerate(n.shape) if i not in axes])
    return _emit("l2_norm", (x,), out, rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ValueError("concat: no tensors")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ValueError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def rule(g, need):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if need[i] else None
            for i in range(len(tensors))
        )

    return _emit("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), rule)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _emit("reshape", (x,), out, lambda g, need: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# convolution (NHWC)


def _conv_geometry(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for one spatial axis."""
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if size < k:
            raise ValueError(f"valid padding needs input {size} >= kernel {k}")
        return (size - k) // stride + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _check_conv_args(op, stride, padding):
    if stride not in (1, 2):
        raise ValueError(f"{op}: stride must be 1 or 2, got {stride}")
    if padding not in ("same", "valid"):
        raise ValueError(f"{op}: padding must be 'same' or 'valid', got {padding!r}")


def _pads(h, w, kh, kw, stride, padding):
    oh, pt, pb = _conv_geometry(h, kh, stride, padding)
    ow, pl, pr = _conv_geometry(w, kw, stride, padding)
    return oh, ow, (pt, pb, pl, pr)


def _windows(x, kh, kw, stride, oh, ow, pads):
    pt, pb, pl, pr = pads
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # N, H', W', C, kh, kw
    return win[:, ::stride, ::stride][:, :oh, :ow]


def _conv_forward(x, w, stride, oh, ow, pads):
    kh, kw = w.shape[:2]
    win = _windows(x, kh, kw, stride, oh, ow, pads)
    return np.tensordot(win, w, axes=([3, 4, 5], [2, 0, 1]))


def _conv_input_grad(gy, w, x_shape, stride, pads):
    n, h, wd, c = x_shape
    kh, kw = w.shape[:2]
    pt, pb, pl, pr = pads
    oh, ow = gy.shape[1:3]
    gxp = np.zeros((n, h + pt + pb, wd + pl + pr, c), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride, :] += gy @ w[i, j].T
    return gxp[:, pt:pt + h, pl:pl + wd, :]


def _conv_weight_grad(x, gy, kh, kw, stride, pads):
    oh, ow = gy.shape[1:3]
    win = _windows(x, kh, kw, stride, oh, ow, pads)
    gw = np.tensordot(win, gy, axes=([0, 1, 2], [0, 1, 2]))  # C, kh, kw, Cout
    return gw.transpose(1, 2, 0, 3)


def conv2d(x, w, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation. ``x`` is (N, H, W, C_in), ``w`` is (kh, kw, C_in, C_out)."""
    x, w = as_tensor(x), as_tensor(w)
    _check_conv_args("conv2d", stride, padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ValueError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    kh, kw = w.shape[:2]
    oh, ow, pads = _pads(x.shape[1], x.shape[2], kh, kw, stride, padding)
    out = _conv_forward(x.data, w.data, stride, oh, ow, pads)

    def rule(g, need):
        return (_conv_input_grad(g, w.data, x.shape, stride, pads) if need[0] else None,
                _conv_weight_grad(x.data, g, kh, kw, stride, pads) if need[1] else None)

    return _emit("conv2d", (x, w), out, rule)


def deconv_output_size(size: int, k: int, stride: int, padding: str) -> int:
    return size * stride if padding == "same" else (size - 1) * stride + k


def deconv2d(x, w, stride: int = 2, padding: str = "same") -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` with the same settings.

    ``x`` is (N, h, w, C_in), ``w`` is (kh, kw, C_out, C_in). The output extent is
    ``h*stride`` for "same" padding and ``(h-1)*stride + kh`` for "valid".
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_conv_args("deconv2d", stride, padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[3]:
        raise ValueError(f"deconv2d: shape mismatch {x.shape} vs {w.shape}")
    kh, kw = w.shape[:2]
    oh = deconv_output_size(x.shape[1], kh, stride, padding)
    ow = deconv_output_size(x.shape[2], kw, stride, padding)
    _, _, pads = _pads(oh, ow, kh, kw, stride, padding)
    out_shape = (x.shape[0], oh, ow, w.shape[2])
    out = _conv_input_grad(x.data, w.data, out_shape, stride, pads)

    def rule(g, need):
        return (_conv_forward(g, w.data, stride, x.shape[1], x.shape[2], pads) if need[0] else None,
                _conv_weight_grad(g, x.data, kh, kw, stride, pads) if need[1] else None)

    return _emit("deconv2d", (x, w), out, rule)
