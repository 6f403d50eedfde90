"""Minimal reverse-mode differentiation engine.

Every tensor produced by an op keeps references to its operands and a
closure that propagates the incoming gradient to them.  ``backward``
topologically orders the recorded ops reachable from the loss and replays
them in reverse, visiting each node exactly once.  All buffers are 64-bit
floats; the record is rebuilt on every forward pass.
"""

import numpy as np

from ._linalg import cholesky_lower, solve_cholesky
from .errors import DimensionError, DomainError


class Tensor:
    """A dense float64 array with an accumulated-gradient buffer."""

    __slots__ = ("values", "grad", "_parents", "_backward_fn", "name")

    def __init__(self, values, parents=(), backward_fn=None, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def is_leaf(self):
        return self._backward_fn is None

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self):
        tag = self.name or ("leaf" if self.is_leaf() else "op")
        return f"Tensor({tag}, shape={self.values.shape})"


def leaf(values, name=None):
    return Tensor(values, name=name)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into the grad buffer of every leaf.

    Repeated calls without zeroing grads accumulate.
    """
    if loss.values.shape != ():
        raise DomainError(
            f"backward requires a scalar loss, got shape {loss.values.shape}"
        )
    record = _toposort(loss)
    loss.accumulate(np.ones((), dtype=np.float64))
    for node in reversed(record):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
            # Intermediate grads are scratch space; free them so repeated
            # backward calls only accumulate at the leaves.
            if node is not loss:
                node.grad = None
    loss.grad = None


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, iter(root._parents))]
    on_stack = {id(root)}
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen and id(p) not in on_stack:
                stack.append((p, iter(p._parents)))
                on_stack.add(id(p))
                advanced = True
                break
        if not advanced:
            stack.pop()
            on_stack.discard(id(node))
            seen.add(id(node))
            order.append(node)
    return order


# ---------------------------------------------------------------------------
# ops


def matmul(a, b):
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(
            f"matmul shapes do not chain: {av.shape} x {bv.shape}"
        )
    out = Tensor(av @ bv, parents=(a, b))

    def _bw(g):
        a.accumulate(g @ bv.T)
        b.accumulate(av.T @ g)

    out._backward_fn = _bw
    return out


def relu(a):
    mask = a.values > 0.0
    out = Tensor(np.where(mask, a.values, 0.0), parents=(a,))

    def _bw(g):
        a.accumulate(np.where(mask, g, 0.0))

    out._backward_fn = _bw
    return out


def softmax_rows(a):
    v = a.values
    if v.ndim != 2:
        raise DimensionError(f"softmax_rows requires a matrix, got {v.shape}")
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, parents=(a,))

    def _bw(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        a.accumulate(y * (g - dot))

    out._backward_fn = _bw
    return out


def maxpool_over_points(a):
    """Columnwise maximum over the point dimension of an N x C matrix.

    Gradient flows to exactly one argmax entry per column, the lowest row
    index on ties.
    """
    v = a.values
    if v.ndim != 2:
        raise DimensionError(f"maxpool requires a matrix, got {v.shape}")
    if v.shape[0] < 1:
        raise DomainError("maxpool over an empty point dimension")
    idx = np.argmax(v, axis=0)
    cols = np.arange(v.shape[1])
    out = Tensor(v[idx, cols], parents=(a,))

    def _bw(g):
        ga = np.zeros_like(v)
        np.add.at(ga, (idx, cols), g)
        a.accumulate(ga)

    out._backward_fn = _bw
    return out


def concat_cols(a, b):
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
        raise DimensionError(
            f"concat_cols row counts differ: {av.shape} vs {bv.shape}"
        )
    p = av.shape[1]
    out = Tensor(np.concatenate([av, bv], axis=1), parents=(a, b))

    def _bw(g):
        a.accumulate(g[:, :p])
        b.accumulate(g[:, p:])

    out._backward_fn = _bw
    return out


def spd_solve(a, b, sym_tol=1e-9):
    """Solve a Y = b for symmetric positive definite a, differentiably.

    The gradient w.r.t. a is symmetrized, matching the symmetric-valued
    inputs this op receives in the model.
    """
    av, bv = a.values, b.values
    if av.ndim != 2 or av.shape[0] != av.shape[1]:
        raise DimensionError(f"spd_solve needs a square matrix, got {av.shape}")
    if bv.ndim != 2 or bv.shape[0] != av.shape[0]:
        raise DimensionError(
            f"spd_solve right-hand side rows mismatch: {av.shape} vs {bv.shape}"
        )
    defect = np.max(np.abs(av - av.T)) if av.size else 0.0
    if defect > sym_tol:
        raise DomainError(f"spd_solve matrix not symmetric: defect {defect:.3e}")
    L = cholesky_lower(av)
    y = solve_cholesky(L, bv)
    out = Tensor(y, parents=(a, b))

    def _bw(g):
        gb = solve_cholesky(L, g)
        ga = -gb @ y.T
        a.accumulate(0.5 * (ga + ga.T))
        b.accumulate(gb)

    out._backward_fn = _bw
    return out


def add(a, b):
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise DimensionError(f"add shapes differ: {av.shape} vs {bv.shape}")
    out = Tensor(av + bv, parents=(a, b))

    def _bw(g):
        a.accumulate(g)
        b.accumulate(g)

    out._backward_fn = _bw
    return out


def add_bias(x, b):
    """Add a length-C bias vector to every row of an N x C matrix."""
    xv, bv = x.values, b.values
    if xv.ndim != 2 or bv.ndim != 1 or xv.shape[1] != bv.shape[0]:
        raise DimensionError(f"add_bias shapes differ: {xv.shape} vs {bv.shape}")
    out = Tensor(xv + bv[None, :], parents=(x, b))

    def _bw(g):
        x.accumulate(g)
        b.accumulate(g.sum(axis=0))

    out._backward_fn = _bw
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.values * c, parents=(a,))

    def _bw(g):
        a.accumulate(g * c)

    out._backward_fn = _bw
    return out


def mul(a, b):
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise DimensionError(f"mul shapes differ: {av.shape} vs {bv.shape}")
    out = Tensor(av * bv, parents=(a, b))

    def _bw(g):
        a.accumulate(g * bv)
        b.accumulate(g * av)

    out._backward_fn = _bw
    return out


def transpose(a):
    if a.values.ndim != 2:
        raise DimensionError(f"transpose requires a matrix, got {a.values.shape}")
    out = Tensor(a.values.T, parents=(a,))

    def _bw(g):
        a.accumulate(g.T)

    out._backward_fn = _bw
    return out


def as_row(a):
    """View a length-C vector as a 1 x C matrix."""
    v = a.values
    if v.ndim != 1:
        raise DimensionError(f"as_row requires a vector, got {v.shape}")
    out = Tensor(v[None, :], parents=(a,))

    def _bw(g):
        a.accumulate(g[0])

    out._backward_fn = _bw
    return out


def tile_rows(row, m):
    """Repeat a 1 x C row m times; gradient sums over the copies."""
    v = row.values
    if v.ndim != 2 or v.shape[0] != 1:
        raise DimensionError(f"tile_rows requires a 1 x C row, got {v.shape}")
    out = Tensor(np.repeat(v, m, axis=0), parents=(row,))

    def _bw(g):
        row.accumulate(g.sum(axis=0, keepdims=True))

    out._backward_fn = _bw
    return out


def sum_all(a):
    out = Tensor(np.asarray(a.values.sum()), parents=(a,))

    def _bw(g):
        a.accumulate(np.full_like(a.values, float(g)))

    out._backward_fn = _bw
    return out


def add_diag(a, mu):
    """a + mu * I for square a."""
    v = a.values
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise DimensionError(f"add_diag requires a square matrix, got {v.shape}")
    mu = float(mu)
    out = Tensor(v + mu * np.eye(v.shape[0]), parents=(a,))

    def _bw(g):
        a.accumulate(g)

    out._backward_fn = _bw
    return out


def laplacian_from_adjacency(a):
    """diag(a 1) - a for a square (typically symmetric) adjacency tensor."""
    v = a.values
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise DimensionError(f"laplacian requires a square matrix, got {v.shape}")
    out = Tensor(np.diag(v.sum(axis=1)) - v, parents=(a,))

    def _bw(g):
        # d L_kl / d a_ij: the degree diagonal contributes g[i,i], the
        # negated adjacency contributes -g[i,j].
        a.accumulate(np.diag(g)[:, None] - g)

    out._backward_fn = _bw
    return out
