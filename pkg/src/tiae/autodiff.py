"""Reverse-mode automatic differentiation over dynamically built graphs.

Values are dense float64 numpy arrays. Every operation returns a new
:class:`Var` that records its parents and one vector-Jacobian product (vjp)
closure per parent; :func:`backward` walks the resulting DAG in reverse
topological order and accumulates gradients. Graphs are rebuilt per
minibatch — nothing is compiled or cached across calls.

Non-finite values (NaN/Inf) are rejected at the op that produced them, so a
divergence surfaces as an exception naming the op instead of propagating
silently. Cycles cannot occur: an op can only reference Vars that already
exist, so every graph is a DAG by construction.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

# Guard for the l2-norm gradient x/||x||: descriptors with norm at or below
# this are treated as degenerate rather than divided by.
L2_NORM_EPSILON = 1e-12


class AutodiffError(Exception):
    pass


class NonFiniteValueError(AutodiffError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by op '{op}'")
        self.op = op


class ShapeMismatchError(AutodiffError):
    pass


class NonScalarRootError(AutodiffError):
    pass


class DegenerateDescriptorError(AutodiffError):
    """l2 norm (or a descriptor norm) too close to zero to differentiate."""


class Var:
    """One node of the computation graph: a value plus how it was made."""

    __slots__ = ("value", "parents", "vjps", "op", "grad")

    def __init__(
        self,
        value,
        parents: tuple["Var", ...] = (),
        vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = (),
        op: str = "leaf",
    ):
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValueError(op)
        self.value = arr
        self.parents = parents
        self.vjps = vjps
        self.op = op
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    # Operator sugar; scalars and arrays are coerced to constant leaves.
    def __add__(self, other):
        return add(self, _as_var(other))

    def __radd__(self, other):
        return add(_as_var(other), self)

    def __sub__(self, other):
        return sub(self, _as_var(other))

    def __rsub__(self, other):
        return sub(_as_var(other), self)

    def __mul__(self, other):
        return mul(self, _as_var(other))

    def __rmul__(self, other):
        return mul(_as_var(other), self)

    def __truediv__(self, other):
        return div(self, _as_var(other))

    def __rtruediv__(self, other):
        return div(_as_var(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_var(other))


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcastable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _binary(a: Var, b: Var, op: str, value_fn, da, db) -> Var:
    # Overflow/invalid warnings are redundant: the Var constructor turns any
    # non-finite result into a NonFiniteValueError naming the op.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        value = value_fn()
    return Var(
        value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(da(g), a.value.shape),
            lambda g: _unbroadcast(db(g), b.value.shape),
        ),
        op=op,
    )


def add(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}")
    return _binary(a, b, "add", lambda: a.value + b.value,
                   lambda g: g, lambda g: g)


def sub(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"sub: {a.shape} vs {b.shape}")
    return _binary(a, b, "sub", lambda: a.value - b.value,
                   lambda g: g, lambda g: -g)


def mul(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}")
    return _binary(
        a, b, "mul", lambda: a.value * b.value,
        lambda g: g * b.value, lambda g: g * a.value,
    )


def div(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"div: {a.shape} vs {b.shape}")
    return _binary(
        a, b, "div", lambda: a.value / b.value,
        lambda g: g / b.value, lambda g: -g * a.value / (b.value * b.value),
    )


def scale(a: Var, s: float) -> Var:
    a = _as_var(a)
    s = float(s)
    return Var(a.value * s, (a,), (lambda g: g * s,), op="scale")


def matmul(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeMismatchError(
            f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dims {a.shape} vs {b.shape}")
    return Var(
        a.value @ b.value,
        parents=(a, b),
        vjps=(lambda g: g @ b.value.T, lambda g: a.value.T @ g),
        op="matmul",
    )


def transpose(a: Var) -> Var:
    a = _as_var(a)
    if a.value.ndim != 2:
        raise ShapeMismatchError(f"transpose needs 2-D, got {a.shape}")
    return Var(a.value.T.copy(), (a,), (lambda g: g.T,), op="transpose")


def reshape(a: Var, shape: Sequence[int]) -> Var:
    a = _as_var(a)
    shape = tuple(int(s) for s in shape)
    old = a.value.shape
    return Var(a.value.reshape(shape), (a,), (lambda g: g.reshape(old),),
               op="reshape")


def concat0(parts: Iterable[Var]) -> Var:
    """Concatenate along axis 0; the vjp splits the gradient back."""
    parts = [_as_var(p) for p in parts]
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        return lambda g: g[offsets[i]:offsets[i + 1]]

    return Var(
        np.concatenate([p.value for p in parts], axis=0),
        parents=tuple(parts),
        vjps=tuple(make_vjp(i) for i in range(len(parts))),
        op="concat0",
    )


def sum_(a: Var, axis: int | None = None) -> Var:
    a = _as_var(a)
    in_shape = a.value.shape
    if axis is None:
        return Var(a.value.sum(), (a,),
                   (lambda g: np.broadcast_to(g, in_shape).copy(),), op="sum")

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis), in_shape).copy()

    return Var(a.value.sum(axis=axis), (a,), (vjp,), op="sum")


def abs_(a: Var) -> Var:
    # Subgradient convention sign(0) = 0 keeps the l1 gradient bounded.
    a = _as_var(a)
    return Var(np.abs(a.value), (a,), (lambda g: g * np.sign(a.value),),
               op="abs")


def tanh(a: Var) -> Var:
    a = _as_var(a)
    t = np.tanh(a.value)
    return Var(t, (a,), (lambda g: g * (1.0 - t * t),), op="tanh")


def sq_l2(a: Var) -> Var:
    """Sum of squared entries; gradient 2x."""
    a = _as_var(a)
    with np.errstate(over="ignore"):
        value = np.sum(a.value * a.value)
    return Var(value, (a,), (lambda g: g * 2.0 * a.value,), op="sq_l2")


def l1_norm(a: Var) -> Var:
    a = _as_var(a)
    return Var(np.sum(np.abs(a.value)), (a,),
               (lambda g: g * np.sign(a.value),), op="l1_norm")


def l2_norm(a: Var) -> Var:
    a = _as_var(a)
    norm = float(np.sqrt(np.sum(a.value * a.value)))

    def vjp(g):
        if norm <= L2_NORM_EPSILON:
            raise DegenerateDescriptorError(
                f"l2_norm gradient undefined: norm {norm:.3e} <= "
                f"{L2_NORM_EPSILON:.0e}")
        return g * (a.value / norm)

    return Var(norm, (a,), (vjp,), op="l2_norm")


class Gradients:
    """Gradient accumulators keyed by Var; absent nodes read as zero."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def __getitem__(self, var: Var) -> np.ndarray:
        got = self._table.get(id(var))
        if got is None:
            return np.zeros_like(var.value)
        return got

    def __contains__(self, var: Var) -> bool:
        return id(var) in self._table


def _topo_order(root: Var) -> list[Var]:
    """Iterative post-order DFS; deterministic given construction order."""
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var) -> Gradients:
    """Reverse accumulation from a scalar root.

    Sets ``.grad`` on every node reachable from the root and returns a
    :class:`Gradients` map (zero for unreached leaves). Accumulation order is
    fixed by graph construction order, so repeated calls are bit-identical.
    """
    if root.value.shape != ():
        raise NonScalarRootError(
            f"backward root must be scalar, got shape {root.value.shape}")
    order = _topo_order(root)
    table: dict[int, np.ndarray] = {id(root): np.ones(())}
    for node in reversed(order):
        g = table.get(id(node))
        if g is None:
            g = np.zeros(node.value.shape)
            table[id(node)] = g
        node.grad = g
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            acc = table.get(id(parent))
            if acc is None:
                table[id(parent)] = np.array(contrib, dtype=np.float64,
                                             copy=True)
            else:
                acc += contrib
    return Gradients(table)


def clear_grads(vars_: Iterable[Var]) -> None:
    for v in vars_:
        v.grad = None
