"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while a :class:`Tape` is active is
appended to that tape. ``tape.backward(loss)`` replays the records in reverse
and accumulates gradients into the leaves (``Parameter`` objects and tensors
created with ``requires_grad=True``). Outside a tape the same functions run
as plain numpy arithmetic and record nothing.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NondeterminismError(RuntimeError):
    pass


_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "aircade_active_tape", default=None
)
# when set, relu/abs append the sign pattern of their input (kink detection)
_kink_log: contextvars.ContextVar["list | None"] = contextvars.ContextVar(
    "aircade_kink_log", default=None
)


class Tensor:
    """Immutable n-dimensional float64 value.

    A 0-d tensor is used for scalars (losses); every other tensor has
    dimensions >= 1.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._tape: Tape | None = None

    @classmethod
    def _from_array(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf. ``grad`` is always allocated and has the value's shape."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise TapeError("tape already consumed by backward()")
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise TapeError("tape already consumed by backward()")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced under this tape")
        adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self._records):
            g = adjoints.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    key = id(parent)
                    prev = adjoints.get(key)
                    adjoints[key] = pg if prev is None else prev + pg
                elif parent.grad is not None:
                    parent.grad += pg
        self._records.clear()
        self._consumed = True


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


@contextlib.contextmanager
def no_grad():
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._from_array(np.asarray(x, dtype=DTYPE))


def _emit(arr: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    out = Tensor._from_array(arr)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape._records.append((out, parents, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise binary -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Hadamard product with trailing-aligned broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


hadamard = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _emit(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


# --- elementwise unary ------------------------------------------------------


def _log_kinks(pattern: np.ndarray) -> None:
    log = _kink_log.get()
    if log is not None:
        log.append(pattern)


def relu(x) -> Tensor:
    x = as_tensor(x)
    # subgradient at exactly 0 is 0
    active = x.data > 0
    _log_kinks(active)
    return _emit(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    s = np.sign(x.data)
    _log_kinks(s)
    return _emit(np.abs(x.data), (x,), lambda g: (g * s,))


def square(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _emit(d * d, (x,), lambda g: (2.0 * g * d,))


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "hadamard": mul}


def elementwise(x, fn: str, other=None) -> Tensor:
    if fn in _UNARY:
        if other is not None:
            raise ValueError(f"{fn} takes a single operand")
        return _UNARY[fn](x)
    if fn in _BINARY:
        if other is None:
            raise ValueError(f"{fn} needs two operands")
        return _BINARY[fn](x, other)
    raise ValueError(f"unknown elementwise function {fn!r}")


# --- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch dims {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def grad(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit(ad @ bd, (a, b), grad)


def linear(x, w, b=None) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, -1)), w), (w.shape[1],))
    else:
        y = matmul(x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
        y = add(y, b)
    return y


# --- normalization ----------------------------------------------------------


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    if not np.all(np.isfinite(d)):
        raise FloatingPointError("softmax_lastdim: non-finite input")
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: feature size {d} vs gain {gain.shape}, bias {bias.shape}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    centered = xd - xd.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gain.data
    lead = tuple(range(xd.ndim - 1))

    def grad(g):
        gx = g * gd
        dx = inv_std * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(xhat * gd + bias.data, (x, gain, bias), grad)


# --- shape manipulation -----------------------------------------------------


def concat_lastdim(parts: Sequence) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("concat_lastdim: no parts")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_lastdim: leading shapes differ: {[q.shape for q in parts]}"
            )
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([p.shape[-1] for p in parts])[:-1]
    return _emit(
        np.concatenate([p.data for p in parts], axis=-1),
        parts,
        lambda g: tuple(np.split(g, bounds, axis=-1)),
    )


def slice_lastdim(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    width = x.shape[-1]

    def grad(g):
        out = np.zeros(x.shape, dtype=DTYPE)
        out[..., start:stop] = g
        return (out,)

    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice_lastdim: [{start}, {stop}) outside width {width}")
    return _emit(x.data[..., start:stop], (x,), grad)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last2(x) -> Tensor:
    x = as_tensor(x)
    return _emit(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return _emit(x.data.reshape(tuple(shape)), (x,), lambda g: (g.reshape(orig),))


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from None
    orig = x.shape
    return _emit(y, (x,), lambda g: (_unbroadcast(g, orig),))


def gather_rows(table, index) -> Tensor:
    """``table[index]`` along the first axis; ``index`` is an integer array."""
    table = as_tensor(table)
    idx = np.asarray(index, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: index outside [0, {table.shape[0]})")

    def grad(g):
        out = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(table.data[idx], (table,), grad)


# --- reductions -------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else d for i, d in enumerate(shape))

    return _emit(
        np.sum(x.data, axis=axes, keepdims=keepdims),
        (x,),
        lambda g: (np.broadcast_to(np.reshape(g, kept), shape),),
    )


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# --- gradient checking ------------------------------------------------------


def _rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def _eval_with_kinks(f: Callable[[], Tensor]) -> tuple[float, list[np.ndarray]]:
    log: list[np.ndarray] = []
    token = _kink_log.set(log)
    try:
        value = f().data
    finally:
        _kink_log.reset(token)
    return value.reshape(()), log


def _same_kinks(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-5,
    extended: bool = True,
    max_shrink: int = 3,
) -> dict[str, float]:
    """Compare tape gradients of ``f()`` with central differences.

    Returns the maximum relative error ``|a-n| / max(1e-8, |a|+|n|)`` per
    parameter name. Parameter values and gradients are restored afterwards.

    With ``extended=True`` the difference quotients are evaluated in
    ``np.longdouble`` so roundoff stays well below tiny gradient entries.
    When a step crosses a relu/abs kink (the sign pattern at theta+eps or
    theta-eps differs from theta) the step is divided by 10 up to
    ``max_shrink`` times; past that a one-sided difference is taken on a side
    whose pattern matches theta.
    """
    params = list(params)
    if not params:
        return {}
    with no_grad():
        first, second = f().item(), f().item()
    if first != second and not (np.isnan(first) and np.isnan(second)):
        raise NondeterminismError(f"f() returned {first!r} then {second!r}")

    saved = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad[...] = g

    originals = [p.data for p in params]
    if extended:
        for p in params:
            p.data = p.data.astype(np.longdouble)
    report: dict[str, float] = {}
    try:
        with no_grad():
            base, base_kinks = _eval_with_kinks(f)
            for p, a in zip(params, analytic):
                flat = p.data.reshape(-1)
                numeric = np.empty(flat.size)
                for i in range(flat.size):
                    orig = flat[i]
                    h = eps
                    for _ in range(max_shrink + 1):
                        flat[i] = orig + h
                        fp, kp = _eval_with_kinks(f)
                        flat[i] = orig - h
                        fm, km = _eval_with_kinks(f)
                        flat[i] = orig
                        plus_ok = _same_kinks(kp, base_kinks)
                        minus_ok = _same_kinks(km, base_kinks)
                        if plus_ok and minus_ok:
                            numeric[i] = (fp - fm) / (2 * h)
                            break
                        h /= 10.0
                    else:
                        h *= 10.0
                        if plus_ok:
                            numeric[i] = (fp - base) / h
                        elif minus_ok:
                            numeric[i] = (base - fm) / h
                        else:
                            numeric[i] = (fp - fm) / (2 * h)
                report[p.name] = float(_rel_error(a.reshape(-1), numeric).max())
    finally:
        for p, data in zip(params, originals):
            p.data = data
    return report
