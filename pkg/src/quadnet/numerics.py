"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the handful of primitives the embedding network and its losses need are
provided. Broadcasting is deliberately absent apart from scalar scaling and an
explicit row-bias add, so shape mistakes surface as ``DimensionError``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    """One recorded primitive: ``output = kind(*inputs)``."""

    kind: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn
    output: "Tensor | None" = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; all routes go through the checked primitives below
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{kind} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.node = None
    if out.requires_grad:
        out.node = Node(kind, inputs, backward, out)
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {list(a.shape)} and {list(b.shape)} differ")


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    A, B = a.data, b.data
    return _record("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _record("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", t.data * c, (t,), lambda g: (g * c,))


def shift(t: Tensor, c: float) -> Tensor:
    """Add a scalar constant to every entry."""
    c = float(c)
    return _record("shift", t.data + c, (t,), lambda g: (g,))


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    # derivative at exactly 0 belongs to the non-negative branch
    pos = t.data >= 0
    out = np.where(pos, t.data, slope * t.data)
    return _record("leaky_relu", out, (t,), lambda g: (np.where(pos, g, slope * g),))


def hinge(t: Tensor) -> Tensor:
    """max(0, t); an exactly-zero argument passes no gradient."""
    active = t.data > 0
    return _record("hinge", np.where(active, t.data, 0.0), (t,), lambda g: (g * active,))


def elementwise(op: str, *inputs: Tensor, slope: float = 0.01, factor: float = 1.0) -> Tensor:
    """Dispatch by name: add, sub, mul (two operands), scale, relu_leaky (one)."""
    binary = {"add": add, "sub": sub, "mul": mul}
    if op in binary:
        if len(inputs) != 2:
            raise ContractError(f"{op} takes two operands")
        return binary[op](*inputs)
    if len(inputs) != 1:
        raise ContractError(f"{op} takes one operand")
    if op == "scale":
        return scale(inputs[0], factor)
    if op == "relu_leaky":
        return leaky_relu(inputs[0], slope)
    raise ContractError(f"unknown elementwise op {op!r}")


def reduce_sum(t: Tensor) -> Tensor:
    if t.size == 0:
        raise DomainError("sum of an empty tensor")
    shape = t.shape
    return _record("sum", np.array(t.data.sum()), (t,), lambda g: (np.full(shape, float(g)),))


def reduce_mean(t: Tensor) -> Tensor:
    if t.size == 0:
        raise DomainError("mean of an empty tensor")
    shape, n = t.shape, t.size
    return _record("mean", np.array(t.data.sum() / n), (t,), lambda g: (np.full(shape, float(g) / n),))


def reduce(op: str, t: Tensor) -> Tensor:
    if op == "sum":
        return reduce_sum(t)
    if op == "mean":
        return reduce_mean(t)
    raise ContractError(f"unknown reduction {op!r}")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m x n matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: rows {list(x.shape)} vs bias {list(b.shape)}")
    return _record("add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def take(t: Tensor, index) -> Tensor:
    """Gather entries (1-d) or rows (2-d) along the first axis; repeats allowed."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("take: index must be one-dimensional")
    if t.data.ndim == 0:
        raise DimensionError("take: cannot index a scalar")
    if idx.size and (idx.min() < -t.shape[0] or idx.max() >= t.shape[0]):
        raise IndexError(f"take: index out of range for first axis {t.shape[0]}")
    shape = t.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _record("take", t.data[idx], (t,), back)


def pick(t: Tensor, cols) -> Tensor:
    """Select ``t[i, cols[i]]`` for every row i."""
    c = np.asarray(cols, dtype=np.int64)
    if t.data.ndim != 2 or c.shape != (t.shape[0],):
        raise DimensionError(f"pick: matrix {list(t.shape)} vs column index {list(c.shape)}")
    if c.size and (c.min() < 0 or c.max() >= t.shape[1]):
        raise IndexError(f"pick: column index out of range [0, {t.shape[1]})")
    rows = np.arange(t.shape[0])
    shape = t.shape

    def back(g):
        full = np.zeros(shape)
        full[rows, c] = g
        return (full,)

    return _record("pick", t.data[rows, c], (t,), back)


def row_norm(t: Tensor) -> Tensor:
    """Euclidean norm of each row. The gradient at a zero row is taken as 0."""
    if t.data.ndim != 2:
        raise DimensionError(f"row_norm expects a matrix, got {list(t.shape)}")
    X = t.data
    n = np.sqrt(np.einsum("ij,ij->i", X, X))
    safe = np.where(n > 0, n, 1.0)

    def back(g):
        return ((g / safe * (n > 0))[:, None] * X,)

    return _record("row_norm", n, (t,), back)


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0):
        raise DomainError("log of a non-positive value")
    X = t.data
    return _record("log", np.log(X), (t,), lambda g: (g / X,))


def power(t: Tensor, p: float) -> Tensor:
    """Elementwise ``t ** p`` for non-negative t."""
    X = t.data
    if np.any(X < 0):
        raise DomainError("power of a negative base")
    p = float(p)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(X, p - 1.0)
        # zero base: finite derivative only for p >= 1
        d = np.where(X > 0, d, 1.0 if p == 1.0 else 0.0)
        return (g * d,)

    return _record("power", np.power(X, p), (t,), back)


def clamp_min(t: Tensor, lo: float) -> Tensor:
    keep = t.data >= lo
    return _record("clamp_min", np.where(keep, t.data, lo), (t,), lambda g: (g * keep,))


def softmax(t: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    if t.data.ndim != 2 or t.shape[1] < 1:
        raise DimensionError(f"softmax expects a B x K matrix with K >= 1, got {list(t.shape)}")
    Z = t.data - t.data.max(axis=1, keepdims=True)
    E = np.exp(Z)
    P = E / E.sum(axis=1, keepdims=True)

    def back(g):
        return (P * (g - (g * P).sum(axis=1, keepdims=True)),)

    return _record("softmax", P, (t,), back)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize each column of ``x`` and apply the affine ``gamma, beta``.

    With ``stats=None`` the batch mean and biased variance are used and
    differentiated through. Passing ``(mean, var)`` treats them as constants
    (inference mode). Returns the output plus the mean/variance that were used.
    """
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm: input {list(x.shape)}, gamma {list(gamma.shape)}, beta {list(beta.shape)}"
        )
    X, G = x.data, gamma.data
    if stats is None:
        mu = X.mean(axis=0)
        var = X.var(axis=0)
        batch = True
    else:
        mu, var = (np.asarray(s, dtype=np.float64) for s in stats)
        batch = False
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (X - mu) * inv
    n = X.shape[0]

    def back(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * G
        if batch:
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return (dx, dgamma, dbeta)

    out = _record("batch_norm", xhat * G + beta.data, (x, gamma, beta), back)
    return out, mu, var


# ---------------------------------------------------------------- graph + backward


@dataclass
class Graph:
    """Primitive nodes reachable from an output, inputs before consumers."""

    nodes: list[Node] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        nodes: list[Node] = []
        leaves: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; recursion depth would track network depth otherwise
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                nodes.append(t.node)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t.node is None:
                if t.requires_grad:
                    leaves.append(t)
                continue
            stack.append((t, True))
            for inp in reversed(t.node.inputs):
                if id(inp) not in seen:
                    stack.append((inp, False))
        return cls(nodes, leaves)


def backward(loss: Tensor, params: Iterable[Tensor] = (), graph: Graph | None = None) -> Graph:
    """Write d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    Gradients are overwritten, never accumulated. Tensors listed in ``params``
    that the loss does not depend on receive zero gradients.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    graph = graph or Graph.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=np.float64).reshape(inp.shape)
    for leaf in graph.leaves:
        leaf.grad = grads.get(id(leaf), np.zeros_like(leaf.data))
    if loss.is_leaf and loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    for p in params:
        if not any(p is leaf for leaf in graph.leaves) and p is not loss:
            p.grad = np.zeros_like(p.data)
    return graph


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Largest relative error between autodiff and central-difference gradients.

    ``f`` rebuilds the scalar from ``params`` on every call and must be
    deterministic. Parameter data is perturbed in place and restored.
    Per-coordinate error is ``|g - g_fd| / max(|g|, |g_fd|, 1e-8)``.
    """
    if step <= 0:
        raise DomainError("finite-difference step must be positive")
    backward(f(), params)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            est = (up - down) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(est), 1e-8)
            worst = max(worst, abs(gflat[i] - est) / denom)
    return worst
