"""Dense tensors with reverse-mode differentiation on a dynamically built tape.

Every model equation downstream (encoder, attention, buffer memory, predictor)
is composed from the primitives here, so all gradients are exact and can be
checked against `finite_diff_grad`. Single-threaded per tape; distinct tapes
share nothing mutable.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "concat",
    "stack",
    "gather_rows",
    "take_per_row",
    "dropout",
    "finite_diff_grad",
    "relative_error",
    "set_default_dtype",
]


class ShapeError(ValueError):
    """Operands with incompatible shapes, or a non-scalar backward seed."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared in a completed operation."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_NODE_IDS = itertools.count()


def set_default_dtype(dtype) -> None:
    """Dtype for new tensors: float64 (default, used by all tests) or float32."""
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _DEFAULT_DTYPE = dtype


class no_grad:
    """Context manager that disables tape building (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(data, op, node_id):
    # One-reduction fast path: NaN/Inf survive summation. A finite sum proves
    # all entries finite; a non-finite sum is confirmed entry-wise before
    # rejecting (the sum alone could overflow on extreme but finite values).
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}' (node {node_id})")


def _unbroadcast(grad, shape):
    """Sum a gradient down to `shape` after numpy broadcasting in the forward."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t, g):
    if t.grad is None:
        # Copy: g may alias another node's gradient buffer.
        t.grad = np.array(g, dtype=t.data.dtype)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


class Tensor:
    """A dense array plus the tape bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "op", "node_id", "parents", "backward_fn")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.node_id = next(_NODE_IDS)
        _check_finite(arr, op, self.node_id)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.op = op
        self.parents = tuple(parents) if self.requires_grad else ()
        self.backward_fn = None

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- graph construction helpers -----------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _result(self, data, parents, op, backward_fn):
        requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=requires, op=op, parents=parents if requires else ())
        if requires:
            out.backward_fn = backward_fn
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        try:
            data = self.data + other.data
        except ValueError:
            raise ShapeError(
                f"add: cannot broadcast {self.data.shape} with {other.data.shape} "
                f"(nodes {self.node_id}, {other.node_id})"
            ) from None

        def backward_fn(g, a=self, b=other):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.data.shape))

        return self._result(data, (self, other), "add", backward_fn)

    def __radd__(self, other):
        return self + other

    def __neg__(self):
        def backward_fn(g, a=self):
            if a.requires_grad:
                _accum(a, -g)

        return self._result(-self.data, (self,), "neg", backward_fn)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = Tensor._lift(other)
        try:
            data = self.data * other.data
        except ValueError:
            raise ShapeError(
                f"mul: cannot broadcast {self.data.shape} with {other.data.shape} "
                f"(nodes {self.node_id}, {other.node_id})"
            ) from None

        def backward_fn(g, a=self, b=other):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.data.shape))

        return self._result(data, (self, other), "mul", backward_fn)

    def __rmul__(self, other):
        return self * other

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(
                f"matmul: operands must be 2-D, got {self.data.shape} @ {other.data.shape} "
                f"(nodes {self.node_id}, {other.node_id})"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions differ, {self.data.shape} @ {other.data.shape} "
                f"(nodes {self.node_id}, {other.node_id})"
            )
        data = self.data @ other.data

        def backward_fn(g, a=self, b=other):
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)

        return self._result(data, (self, other), "matmul", backward_fn)

    # -- elementwise nonlinearities -------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)

        def backward_fn(g, a=self, y=y):
            if a.requires_grad:
                _accum(a, (1.0 - y * y) * g)

        return self._result(y, (self,), "tanh", backward_fn)

    def sigmoid(self):
        # Split by sign so neither exp can overflow; saturates to exact 0/1.
        x = self.data
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)

        def backward_fn(g, a=self, y=y):
            if a.requires_grad:
                _accum(a, y * (1.0 - y) * g)

        return self._result(y, (self,), "sigmoid", backward_fn)

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)

        def backward_fn(g, a=self, y=y, axis=axis):
            if a.requires_grad:
                dot = (g * y).sum(axis=axis, keepdims=True)
                _accum(a, y * (g - dot))

        return self._result(y, (self,), "softmax", backward_fn)

    def log_softmax(self, axis=-1):
        m = self.data.max(axis=axis, keepdims=True)
        z = self.data - m
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True)) + m
        y = self.data - lse

        def backward_fn(g, a=self, y=y, axis=axis):
            if a.requires_grad:
                _accum(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

        return self._result(y, (self,), "log_softmax", backward_fn)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        try:
            data = self.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {old} as {shape} (node {self.node_id})") from None

        def backward_fn(g, a=self, old=old):
            if a.requires_grad:
                _accum(a, g.reshape(old))

        return self._result(data, (self,), "reshape", backward_fn)

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward_fn(g, a=self, axis=axis, keepdims=keepdims):
            if not a.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape).copy())

        return self._result(data, (self,), "sum", backward_fn)

    def __getitem__(self, key):
        # Basic (non-fancy) indexing only; used for slicing rows/steps out.
        data = self.data[key]

        def backward_fn(g, a=self, key=key):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[key] += g
                _accum(a, full)

        return self._result(data, (self,), "slice", backward_fn)

    # -- reverse pass ------------------------------------------------------------

    def backward(self):
        """Populate .grad on every reachable tensor with d(self)/d(tensor).

        The seed must be scalar valued. Leaves that do not influence the seed
        keep a zero (None) gradient. Gradients accumulate by summation when a
        node feeds several consumers.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward seed must be scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def _topo_order(root):
    """Iterative post-order DFS: parents always precede consumers."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


# -- n-ary and indexed operations ------------------------------------------------


def concat(tensors, axis=-1):
    """Concatenate along an axis; backward splits the gradient."""
    tensors = [Tensor._lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            "concat: incompatible shapes " + str([t.data.shape for t in tensors])
        ) from None
    ax = axis % data.ndim
    sizes = [t.data.shape[ax] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g, tensors=tensors, offsets=offsets, ax=ax):
        pieces = np.split(g, offsets, axis=ax)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accum(t, piece)

    probe = tensors[0]
    return probe._result(data, tuple(tensors), "concat", backward_fn)


def stack(tensors, axis=0):
    """Stack equal-shaped tensors along a new axis."""
    tensors = [Tensor._lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: need at least one tensor")
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            "stack: incompatible shapes " + str([t.data.shape for t in tensors])
        ) from None

    def backward_fn(g, tensors=tensors, axis=axis):
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accum(t, piece)

    probe = tensors[0]
    return probe._result(data, tuple(tensors), "stack", backward_fn)


def gather_rows(matrix, ids):
    """Select rows of a 2-D tensor by integer index array (embedding lookup)."""
    matrix = Tensor._lift(matrix)
    ids = np.asarray(ids)
    if matrix.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-D table, got {matrix.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= matrix.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for table with {matrix.data.shape[0]} rows")
    data = matrix.data[ids]

    def backward_fn(g, m=matrix, ids=ids):
        if m.requires_grad:
            full = np.zeros_like(m.data)
            np.add.at(full, ids, g)
            _accum(m, full)

    return matrix._result(data, (matrix,), "gather_rows", backward_fn)


def take_per_row(x, ids):
    """Pick x[i, ids[i]] for each row i of a 2-D tensor."""
    x = Tensor._lift(x)
    ids = np.asarray(ids)
    if x.data.ndim != 2 or ids.ndim != 1 or ids.shape[0] != x.data.shape[0]:
        raise ShapeError(f"take_per_row: got x {x.data.shape}, ids {ids.shape}")
    rows = np.arange(x.data.shape[0])
    data = x.data[rows, ids]

    def backward_fn(g, x=x, rows=rows, ids=ids):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (rows, ids), g)
            _accum(x, full)

    return x._result(data, (x,), "take_per_row", backward_fn)


def dropout(x, rate, rng):
    """Inverted dropout: zero entries with probability `rate`, scale the rest."""
    x = Tensor._lift(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * mask

    def backward_fn(g, x=x, mask=mask):
        if x.requires_grad:
            _accum(x, g * mask)

    return x._result(data, (x,), "dropout", backward_fn)


# -- verification oracle -------------------------------------------------------


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function, one coordinate at a time.

    `f` receives the same array with a single perturbed coordinate and must
    return a float; it must not keep a reference to its argument.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        f_plus = float(f(x))
        x[i] = orig - eps
        f_minus = float(f(x))
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"finite_diff_grad: f returned a non-finite value at index {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
        it.iternext()
    return grad


def relative_error(a, b) -> float:
    """max over coordinates of |a-b| / max(|a|, |b|, 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float((np.abs(a - b) / denom).max())
