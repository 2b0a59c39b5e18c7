"""Reverse-mode gradient engine over numpy arrays.

The engine covers exactly the operation vocabulary this package needs
(arithmetic, reductions, matmul, hyperbolic/inverse-trig functions,
log-sum-exp, softmax, gather, stop-gradient) rather than being a general
autodiff framework.  Every operation dispatches on its inputs: if no
argument is a :class:`Var`, the plain numpy result is returned, so the same
numeric code serves both the differentiable training path and fast
tape-free evaluation.

Conventions
-----------
* double precision everywhere;
* at non-differentiable kinks (``acosh`` at 1, ``asin``/``acos`` at +-1,
  ``relu`` at 0, norms at 0) the subgradient 0 is used;
* a forward graph is rebuilt for every evaluation; graphs are never reused
  across parameter updates.  Repeated :func:`backward` calls on the same
  graph are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractViolationError, NumericalConsistencyError

Array = np.ndarray

# Below this threshold the series forms of the smooth sqrt-composites are
# more accurate than the direct formulas (cancellation in the derivatives).
_SERIES_CUTOFF = 1e-4


class Var:
    """A node of the computation graph: a float64 array plus the recipe for
    propagating an output adjoint to the node's parents."""

    __slots__ = ("value", "name", "_parents", "_vjp")

    # Make numpy defer mixed ndarray-Var arithmetic to the reflected
    # operators below instead of building object arrays.
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        name: str = "leaf",
        _parents: tuple["Var", ...] = (),
        _vjp: Callable[[Array], tuple] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.name = name
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var({self.name}, shape={self.value.shape})"

    # arithmetic sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

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

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x) -> Array:
    """Raw float64 array behind ``x`` (Var or array-like)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _any_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    if not _any_var(a, b):
        return value_of(a) + value_of(b)
    av, bv = value_of(a), value_of(b)
    ash, bsh = av.shape, bv.shape
    return Var(
        av + bv,
        "add",
        tuple(x for x in (a, b) if is_var(x)),
        lambda g: tuple(
            _unbroadcast(g, sh) for x, sh in ((a, ash), (b, bsh)) if is_var(x)
        ),
    )


def neg(a):
    if not is_var(a):
        return -value_of(a)
    return Var(-a.value, "neg", (a,), lambda g: (-g,))


def sub(a, b):
    return add(a, neg(b)) if _any_var(a, b) else value_of(a) - value_of(b)


def mul(a, b):
    if not _any_var(a, b):
        return value_of(a) * value_of(b)
    av, bv = value_of(a), value_of(b)
    ash, bsh = av.shape, bv.shape

    def vjp(g):
        out = []
        if is_var(a):
            out.append(_unbroadcast(g * bv, ash))
        if is_var(b):
            out.append(_unbroadcast(g * av, bsh))
        return tuple(out)

    return Var(av * bv, "mul", tuple(x for x in (a, b) if is_var(x)), vjp)


def div(a, b):
    if not _any_var(a, b):
        return value_of(a) / value_of(b)
    av, bv = value_of(a), value_of(b)
    ash, bsh = av.shape, bv.shape

    def vjp(g):
        out = []
        if is_var(a):
            out.append(_unbroadcast(g / bv, ash))
        if is_var(b):
            out.append(_unbroadcast(-g * av / (bv * bv), bsh))
        return tuple(out)

    return Var(av / bv, "div", tuple(x for x in (a, b) if is_var(x)), vjp)


def pow_const(a, exponent):
    """``a ** c`` for a constant (non-Var) exponent."""
    if is_var(exponent):
        raise ContractViolationError("pow exponent must be a constant")
    c = float(exponent)
    if not is_var(a):
        return value_of(a) ** c
    av = a.value
    return Var(av**c, "pow", (a,), lambda g: (g * c * av ** (c - 1.0),))


def square(a):
    if not is_var(a):
        v = value_of(a)
        return v * v
    return Var(a.value * a.value, "square", (a,), lambda g: (2.0 * g * a.value,))


# ---------------------------------------------------------------------------
# elementwise transcendentals
# ---------------------------------------------------------------------------

def _unary(a, name, fwd, dfd):
    """Unary elementwise op; ``dfd(x, out)`` is the local derivative."""
    if not is_var(a):
        return fwd(value_of(a))
    out_val = fwd(a.value)
    return Var(out_val, name, (a,), lambda g: (g * dfd(a.value, out_val),))


def exp(a):
    return _unary(a, "exp", np.exp, lambda x, out: out)

def log(a):
    return _unary(a, "log", np.log, lambda x, out: 1.0 / x)

def log1p(a):
    return _unary(a, "log1p", np.log1p, lambda x, out: 1.0 / (1.0 + x))

def cosh(a):
    return _unary(a, "cosh", np.cosh, lambda x, out: np.sinh(x))

def sinh(a):
    return _unary(a, "sinh", np.sinh, lambda x, out: np.cosh(x))

def sqrt(a):
    def dfd(x, out):
        return np.where(out > 0.0, 0.5 / np.where(out > 0.0, out, 1.0), 0.0)

    return _unary(a, "sqrt", np.sqrt, dfd)


def relu(a):
    """max(0, x); subgradient 0 at the hinge point."""
    return _unary(
        a, "relu", lambda x: np.maximum(x, 0.0), lambda x, out: (x > 0.0).astype(float)
    )


def acosh_clamped(a, tol: float = 1e-6):
    """acosh with the argument clamped to [1, inf).

    Values below ``1 - tol`` indicate a bug upstream and raise; values in
    [1 - tol, 1) are treated as floating-point drift at a coincident-point
    kink, where the subgradient 0 is used.
    """
    xv = value_of(a)
    low = np.min(xv) if xv.size else 1.0
    if low < 1.0 - tol:
        raise NumericalConsistencyError(
            f"acosh argument {low!r} below 1 by more than {tol}"
        )
    xc = np.maximum(xv, 1.0)
    out_val = np.arccosh(xc)
    if not is_var(a):
        return out_val

    def vjp(g):
        denom_sq = xc * xc - 1.0
        safe = denom_sq > 0.0
        d = np.where(safe, 1.0 / np.sqrt(np.where(safe, denom_sq, 1.0)), 0.0)
        return (g * d,)

    return Var(out_val, "acosh", (a,), vjp)


def asin_saturating(a):
    """asin with the argument clamped to [0, 1].

    Arguments above 1 are legitimate (cone-aperture saturation at pi/2);
    the clamp acts as a projection with zero gradient on the plateau.
    """
    xv = value_of(a)
    xc = np.clip(xv, 0.0, 1.0)
    out_val = np.arcsin(xc)
    if not is_var(a):
        return out_val

    def vjp(g):
        interior = (xv > 0.0) & (xv < 1.0)
        d = np.where(interior, 1.0 / np.sqrt(np.where(interior, 1.0 - xc * xc, 1.0)), 0.0)
        return (g * d,)

    return Var(out_val, "asin", (a,), vjp)


def acos_clamped(a, tol: float = 1e-6):
    """acos with the argument clamped to [-1, 1]; |x| > 1 + tol raises."""
    xv = value_of(a)
    if xv.size:
        worst = np.max(np.abs(xv))
        if worst > 1.0 + tol:
            raise NumericalConsistencyError(
                f"acos argument magnitude {worst!r} above 1 by more than {tol}"
            )
    xc = np.clip(xv, -1.0, 1.0)
    out_val = np.arccos(xc)
    if not is_var(a):
        return out_val

    def vjp(g):
        interior = np.abs(xv) < 1.0
        d = np.where(
            interior, -1.0 / np.sqrt(np.where(interior, 1.0 - xc * xc, 1.0)), 0.0
        )
        return (g * d,)

    return Var(out_val, "acos", (a,), vjp)


# ---------------------------------------------------------------------------
# smooth composites of sqrt: entire functions of y = x**2, so they stay
# differentiable through y = 0 (used by the exp/log maps at the origin)
# ---------------------------------------------------------------------------

def _cosh_sqrt_val(y: Array) -> Array:
    small = y < _SERIES_CUTOFF
    ys = np.where(small, y, 0.0)
    series = 1.0 + ys / 2.0 + ys**2 / 24.0 + ys**3 / 720.0
    direct = np.cosh(np.sqrt(np.where(small, 1.0, y)))
    return np.where(small, series, direct)


def _sinhc_sqrt_val(y: Array) -> Array:
    small = y < _SERIES_CUTOFF
    ys = np.where(small, y, 0.0)
    series = 1.0 + ys / 6.0 + ys**2 / 120.0 + ys**3 / 5040.0
    r = np.sqrt(np.where(small, 1.0, y))
    direct = np.sinh(r) / r
    return np.where(small, series, direct)


def _asinhc_sqrt_val(y: Array) -> Array:
    small = y < _SERIES_CUTOFF
    ys = np.where(small, y, 0.0)
    series = 1.0 - ys / 6.0 + 3.0 * ys**2 / 40.0 - 5.0 * ys**3 / 112.0
    r = np.sqrt(np.where(small, 1.0, y))
    direct = np.arcsinh(r) / r
    return np.where(small, series, direct)


def cosh_sqrt(a):
    """cosh(sqrt(y)) as an entire function of y >= 0."""

    def dfd(y, out):
        return 0.5 * _sinhc_sqrt_val(y)

    return _unary(a, "cosh_sqrt", _cosh_sqrt_val, dfd)


def sinhc_sqrt(a):
    """sinh(sqrt(y))/sqrt(y) as an entire function of y >= 0."""

    def dfd(y, out):
        small = y < _SERIES_CUTOFF
        ys = np.where(small, y, 0.0)
        series = 1.0 / 6.0 + ys / 60.0 + ys**2 / 1680.0
        ysafe = np.where(small, 1.0, y)
        direct = (_cosh_sqrt_val(ysafe) - out) / (2.0 * ysafe)
        return np.where(small, series, direct)

    return _unary(a, "sinhc_sqrt", _sinhc_sqrt_val, dfd)


def asinhc_sqrt(a):
    """asinh(sqrt(y))/sqrt(y) as an entire function of y >= 0."""

    def dfd(y, out):
        small = y < _SERIES_CUTOFF
        ys = np.where(small, y, 0.0)
        series = -1.0 / 6.0 + 3.0 * ys / 20.0 - 15.0 * ys**2 / 112.0
        ysafe = np.where(small, 1.0, y)
        direct = (1.0 / np.sqrt(1.0 + ysafe) - out) / (2.0 * ysafe)
        return np.where(small, series, direct)

    return _unary(a, "asinhc_sqrt", _asinhc_sqrt_val, dfd)


# ---------------------------------------------------------------------------
# shape / reduction / linear algebra
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims: bool = False):
    if not is_var(a):
        return np.sum(value_of(a), axis=axis, keepdims=keepdims)
    in_shape = a.value.shape
    out_val = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None or keepdims:
            gg = g
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(in_shape) for ax in axes)
            gg = np.expand_dims(g, axes)
        return (np.broadcast_to(gg, in_shape).copy(),)

    return Var(out_val, "sum", (a,), vjp)


def l2norm(a, axis=-1):
    """Euclidean norm along ``axis``; subgradient 0 at the zero vector."""
    if not is_var(a):
        return np.linalg.norm(value_of(a), axis=axis)
    out_val = np.linalg.norm(a.value, axis=axis)

    def vjp(g):
        n = np.expand_dims(out_val, axis)
        safe = n > 0.0
        unit = np.where(safe, a.value / np.where(safe, n, 1.0), 0.0)
        return (np.expand_dims(g, axis) * unit,)

    return Var(out_val, "l2norm", (a,), vjp)


def matmul(a, b):
    if not _any_var(a, b):
        return value_of(a) @ value_of(b)
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ContractViolationError("matmul supports 2-D operands only")

    def vjp(g):
        out = []
        if is_var(a):
            out.append(g @ bv.T)
        if is_var(b):
            out.append(av.T @ g)
        return tuple(out)

    return Var(av @ bv, "matmul", tuple(x for x in (a, b) if is_var(x)), vjp)


def transpose(a):
    if not is_var(a):
        return value_of(a).T
    return Var(a.value.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not is_var(a):
        return value_of(a).reshape(shape)
    in_shape = a.value.shape
    return Var(
        a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(in_shape),)
    )


def outer(a, b):
    """Outer product of two 1-D vectors."""
    if not _any_var(a, b):
        return np.outer(value_of(a), value_of(b))
    av, bv = value_of(a), value_of(b)

    def vjp(g):
        out = []
        if is_var(a):
            out.append(g @ bv)
        if is_var(b):
            out.append(av @ g)
        return tuple(out)

    return Var(np.outer(av, bv), "outer", tuple(x for x in (a, b) if is_var(x)), vjp)


def take_rows(a, idx):
    """Row gather ``a[idx]``; the adjoint scatter-adds duplicate rows."""
    idx = np.asarray(idx, dtype=np.intp)
    if not is_var(a):
        return value_of(a)[idx]
    in_shape = a.value.shape

    def vjp(g):
        acc = np.zeros(in_shape)
        np.add.at(acc, idx, g)
        return (acc,)

    return Var(a.value[idx], "take_rows", (a,), vjp)


def diag_part(a):
    """Diagonal of a square matrix."""
    if not is_var(a):
        return np.diagonal(value_of(a)).copy()
    n = a.value.shape[0]

    def vjp(g):
        acc = np.zeros(a.value.shape)
        acc[np.arange(n), np.arange(n)] = g
        return (acc,)

    return Var(np.diagonal(a.value).copy(), "diag_part", (a,), vjp)


def _softmax_val(x: Array, axis) -> Array:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(a, axis=-1):
    """Stable log-sum-exp; -inf entries are treated as absent terms."""
    xv = value_of(a)
    m = np.max(xv, axis=axis, keepdims=True)
    out_val = np.squeeze(m, axis=axis) + np.log(
        np.sum(np.exp(xv - m), axis=axis)
    )
    if not is_var(a):
        return out_val

    def vjp(g):
        return (np.expand_dims(g, axis) * _softmax_val(xv, axis),)

    return Var(out_val, "logsumexp", (a,), vjp)


def softmax(a, axis=-1):
    """Stable softmax (max-subtracted)."""
    if not is_var(a):
        return _softmax_val(value_of(a), axis)
    s = _softmax_val(a.value, axis)

    def vjp(g):
        dot = np.sum(g * s, axis=axis, keepdims=True)
        return (s * (g - dot),)

    return Var(s, "softmax", (a,), vjp)


class _StopReplay:
    """Record/replay state for stop-gradient values (see
    :func:`record_stop_gradients`)."""

    __slots__ = ("mode", "values", "cursor")

    def __init__(self, mode: str, values: list):
        self.mode = mode
        self.values = values
        self.cursor = 0


_stop_replay: _StopReplay | None = None


class record_stop_gradients:
    """Context manager capturing every stop-gradient value (in call order)
    into ``self.values``.

    Together with :class:`replay_stop_gradients` this lets a
    finite-difference harness evaluate the *surrogate* objective whose
    gradient the tape actually computes: re-running the forward pass under
    replay pins all stopped factors at their recorded base values.
    """

    def __init__(self):
        self.values: list[Array] = []

    def __enter__(self):
        global _stop_replay
        if _stop_replay is not None:
            raise ContractViolationError("stop-gradient record/replay cannot nest")
        _stop_replay = _StopReplay("record", self.values)
        return self

    def __exit__(self, *exc):
        global _stop_replay
        _stop_replay = None
        return False


class replay_stop_gradients:
    """Context manager substituting previously recorded values for every
    stop-gradient encountered, in call order."""

    def __init__(self, values: list):
        self.values = values

    def __enter__(self):
        global _stop_replay
        if _stop_replay is not None:
            raise ContractViolationError("stop-gradient record/replay cannot nest")
        _stop_replay = _StopReplay("replay", self.values)
        return self

    def __exit__(self, *exc):
        global _stop_replay
        replay = _stop_replay
        _stop_replay = None
        if exc[0] is None and replay.cursor != len(replay.values):
            raise ContractViolationError(
                "stop-gradient replay consumed "
                f"{replay.cursor}/{len(replay.values)} recorded values"
            )
        return False


def stop_gradient(a):
    """Forward the value, block the adjoint."""
    global _stop_replay
    val = value_of(a)
    if _stop_replay is not None:
        if _stop_replay.mode == "record":
            _stop_replay.values.append(val.copy())
        else:
            if _stop_replay.cursor >= len(_stop_replay.values):
                raise ContractViolationError(
                    "stop-gradient replay ran out of recorded values"
                )
            val = _stop_replay.values[_stop_replay.cursor]
            _stop_replay.cursor += 1
    if not is_var(a):
        return val
    return Var(val, "stop_gradient")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Var) -> dict[int, Array]:
    """Reverse-mode sweep from a scalar root.

    Returns adjoints keyed by node ``id``.  Raises if any accumulated
    adjoint turns non-finite, naming the offending node.
    """
    if not is_var(root):
        raise ContractViolationError("backward requires a Var root")
    if root.value.size != 1:
        raise ContractViolationError("backward root must be scalar")
    order = _toposort(root)
    grads: dict[int, Array] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalConsistencyError(
                f"non-finite gradient flowing into node '{node.name}'"
            )
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not np.all(np.isfinite(pg)):
                raise NumericalConsistencyError(
                    f"non-finite gradient produced by node '{node.name}'"
                )
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def gradients(root: Var, params: Mapping[str, Var]) -> dict[str, Array]:
    """Adjoints of ``root`` w.r.t. named leaves; unreached leaves get exact
    zeros."""
    grads = backward(root)
    out: dict[str, Array] = {}
    for name, var in params.items():
        g = grads.get(id(var))
        if g is None:
            g = np.zeros_like(var.value)
        elif not np.all(np.isfinite(g)):
            raise NumericalConsistencyError(
                f"non-finite gradient for parameter '{name}'"
            )
        out[name] = g
    return out


# ---------------------------------------------------------------------------
# parameter registry
# ---------------------------------------------------------------------------

class ParameterStore:
    """Flat registry of named learnable arrays.

    Each parameter is a leaf :class:`Var`; the optimizer replaces
    ``var.value`` between steps, so forward graphs always read the current
    values.
    """

    def __init__(self):
        self._params: dict[str, Var] = {}

    def register(self, name: str, value) -> Var:
        if name in self._params:
            raise ContractViolationError(f"parameter '{name}' already registered")
        var = Var(np.asarray(value, dtype=np.float64), name=name)
        self._params[name] = var
        return var

    def __getitem__(self, name: str) -> Var:
        try:
            return self._params[name]
        except KeyError:
            raise ContractViolationError(f"unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Var]]:
        return self._params.items()

    def as_dict(self) -> dict[str, Var]:
        return dict(self._params)

    def snapshot(self) -> dict[str, Array]:
        """Copies of all current values."""
        return {name: var.value.copy() for name, var in self._params.items()}

    def load(self, values: Mapping[str, Array]) -> None:
        if set(values) != set(self._params):
            raise ContractViolationError("parameter name mismatch on load")
        for name, value in values.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != self._params[name].value.shape:
                raise ContractViolationError(
                    f"shape mismatch for parameter '{name}'"
                )
            self._params[name].value = arr.copy()
