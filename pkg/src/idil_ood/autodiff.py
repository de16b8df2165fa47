"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The engine is define-by-run: every operation returns a new :class:`Tensor`
holding references to its parents and a vector-Jacobian-product closure.
``backward`` walks the graph in reverse topological order and accumulates
gradients into each tensor's ``grad`` buffer.  ``detach`` produces a tensor
with no parents, so no gradient ever flows past it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense float64 array plus its position in the recorded graph."""

    __slots__ = ("values", "grad", "_parents", "_vjp")

    def __init__(
        self,
        values,
        _parents: Sequence["Tensor"] = (),
        _vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, values={self.values!r})"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce an upstream gradient back to a parent's (possibly broadcast) shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def constant(values) -> Tensor:
    return Tensor(values)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.values * b.values,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.values * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.values @ b.values,
        (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias row broadcast over the batch."""
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return Tensor(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.values)
    return Tensor(
        x.values * s,
        (x,),
        lambda g: (g * (s * (1.0 + x.values * (1.0 - s))),),
    )


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.values), (x,), lambda g: (g / x.values,))


def reduce_sum(x: Tensor) -> Tensor:
    return Tensor(x.values.sum(), (x,), lambda g: (np.full(x.shape, float(g)),))


def reduce_mean(x: Tensor) -> Tensor:
    n = x.values.size
    return Tensor(x.values.mean(), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def softmax_rows(logits: Tensor) -> Tensor:
    if logits.values.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-D tensor, got shape {logits.shape}")
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g: np.ndarray):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor(p, (logits,), vjp)


def select(x: Tensor, row: int, col: int) -> Tensor:
    """Scalar view of x[row, col]; gradient routes one-hot back into the matrix."""
    n_rows, n_cols = x.values.shape
    if not 0 <= row < n_rows:
        raise IndexError(f"row index {row} out of bounds for axis 0 with size {n_rows}")
    if not 0 <= col < n_cols:
        raise IndexError(f"col index {col} out of bounds for axis 1 with size {n_cols}")

    def vjp(g: np.ndarray):
        out = np.zeros_like(x.values)
        out[row, col] = float(g)
        return (out,)

    return Tensor(x.values[row, col], (x,), vjp)


def detach(x: Tensor) -> Tensor:
    """Identity on values; blocks all gradient flow to x and its ancestors."""
    return Tensor(x.values.copy())


def sum_tensors(terms: Sequence[Tensor]) -> Tensor:
    """Sequential sum of scalar tensors; sum_tensors([]) is the zero scalar."""
    total = 0.0
    for t in terms:
        total += float(t.values)
    return Tensor(total, tuple(terms), lambda g: tuple(g for _ in terms))


def backward(root: Tensor) -> None:
    """Populate grad buffers of every tensor reachable from root.

    Repeated calls without zeroing accumulate into existing grad buffers.
    """
    if root.values.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.values)
        node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
