"""Dense float64 tensors with reverse-mode automatic differentiation.

Holds the full primitive set used by the toy encoder and the gradient-based
adaptation methods: matmul, add (with bias broadcast), elementwise and scalar
multiplication, relu, exp, clamped log, mean/sum, concat, row selection,
transpose, l2 normalization, layer norm, batch norm, softmax, plus the
entropy / cross-entropy losses and a momentum SGD optimizer.

Every operation checks its result for NaN/Inf and raises ``NumericalError``
rather than letting non-finite values propagate.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError, TtadaptError

LOG_CLAMP = 1e-12
NORM_GUARD = 1e-12
VAR_FLOOR = 1e-5


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop.

    Tensors are immutable after creation except through optimizer-style
    parameter updates that assign ``.data`` in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op}: produced non-finite values")
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, op=op, _parents=tuple(parents) if req else ())
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    out = _result(a.data @ b.data, "matmul", (a, b))

    def backward():
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.data.shape)
    out = _result(a.data.T.copy(), "transpose", (a,))

    def backward():
        _accumulate(a, out.grad.T)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over the rows of a 2-D tensor."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and b.data.shape[0] == a.data.shape[1]
    if not bias and a.data.shape != b.data.shape:
        raise ShapeError("add", a.data.shape, b.data.shape)
    out = _result(a.data + b.data, "add", (a, b))

    def backward():
        g = out.grad
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=0) if bias else g)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError("mul", a.data.shape, b.data.shape)
    out = _result(a.data * b.data, "mul", (a, b))

    def backward():
        g = out.grad
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out._backward = backward
    return out


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(a.data * c, "scalar_mul", (a,))

    def backward():
        _accumulate(a, out.grad * c)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = _result(np.maximum(a.data, 0.0), "relu", (a,))

    def backward():
        _accumulate(a, out.grad * (a.data > 0.0))

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = _result(np.exp(a.data), "exp", (a,))

    def backward():
        _accumulate(a, out.grad * out.data)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    """Natural log with inputs clamped below at LOG_CLAMP, so one-hot rows stay finite."""
    clamped = np.maximum(a.data, LOG_CLAMP)
    out = _result(np.log(clamped), "log", (a,))

    def backward():
        _accumulate(a, out.grad * (a.data > LOG_CLAMP) / clamped)

    out._backward = backward
    return out


def _reduce(a: Tensor, axis, op: str) -> Tensor:
    data = a.data.sum(axis=axis) if op == "sum" else a.data.mean(axis=axis)
    out = _result(data, op, (a,))
    n = a.data.size if axis is None else a.data.shape[axis]

    def backward():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(g, a.data.shape)
        _accumulate(a, g / n if op == "mean" else g.copy())

    out._backward = backward
    return out


def tsum(a: Tensor, axis=None) -> Tensor:
    return _reduce(a, axis, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    return _reduce(a, axis, "mean")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat")
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors))
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward():
        for t, g in zip(tensors, np.split(out.grad, splits, axis=axis)):
            _accumulate(t, g)

    out._backward = backward
    return out


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out = _result(a.data[idx], "take_rows", (a,))

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        _accumulate(a, g)

    out._backward = backward
    return out


def l2_normalize(a: Tensor) -> Tensor:
    """Divide by the L2 norm along the last axis; rows with norm <= NORM_GUARD are an error."""
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    if np.any(norms <= NORM_GUARD):
        raise NumericalError("l2_normalize: zero-norm row")
    y = a.data / norms
    out = _result(y, "l2_normalize", (a,))

    def backward():
        g = out.grad
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - y * dot) / norms)

    out._backward = backward
    return out


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _result(s, "softmax", (a,))

    def backward():
        g = out.grad
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - dot) * s)

    out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = VAR_FLOOR) -> Tensor:
    """Per-row normalization over the last axis with a learnable affine.

    The variance is floored at eps (not added), so unit-variance rows come out
    with variance exactly 1.
    """
    if x.data.ndim != 2 or gamma.data.shape != (x.data.shape[1],) or beta.data.shape != (x.data.shape[1],):
        raise ShapeError("layer_norm", x.data.shape, gamma.data.shape, beta.data.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    std = np.sqrt(np.maximum(var, eps))
    h = (x.data - mu) / std
    out = _result(gamma.data * h + beta.data, "layer_norm", (x, gamma, beta))
    n = x.data.shape[1]

    def backward():
        g = out.grad
        _accumulate(gamma, (g * h).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            active = var > eps
            dvar = (gh * (x.data - mu)).sum(axis=1, keepdims=True) * (-0.5) / std**3 * active
            dmu = -gh.sum(axis=1, keepdims=True) / std
            dx = gh / std + dvar * 2.0 * (x.data - mu) / n + dmu / n
            _accumulate(x, dx)

    out._backward = backward
    return out


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = VAR_FLOOR,
) -> Tensor:
    """Per-feature batch normalization for 2-D activations.

    Train mode normalizes with current-batch statistics and folds them into the
    running buffers with the given momentum; eval mode uses the running buffers.
    The running buffers are plain arrays mutated in place and never carry
    gradients. Variances are floored at eps.
    """
    if x.data.ndim != 2 or gamma.data.shape != (x.data.shape[1],) or beta.data.shape != (x.data.shape[1],):
        raise ShapeError("batch_norm", x.data.shape, gamma.data.shape, beta.data.shape)
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    std = np.sqrt(np.maximum(var, eps))
    h = (x.data - mu) / std
    out = _result(gamma.data * h + beta.data, "batch_norm", (x, gamma, beta))
    n = x.data.shape[0]

    def backward():
        g = out.grad
        _accumulate(gamma, (g * h).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            if training:
                active = var > eps
                dvar = (gh * (x.data - mu)).sum(axis=0) * (-0.5) / std**3 * active
                dmu = -gh.sum(axis=0) / std
                dx = gh / std + dvar * 2.0 * (x.data - mu) / n + dmu / n
            else:
                dx = gh / std
            _accumulate(x, dx)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# losses


def _check_prob_rows(probs: np.ndarray, op: str, tol: float = 1e-6) -> None:
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise TtadaptError(f"{op}: probability rows must sum to 1 (max dev {np.abs(sums - 1.0).max():.3g})")


def entropy(probs: Tensor) -> Tensor:
    """Row-wise Shannon entropy, nonnegative convention: e_i = -sum_k p_ik log p_ik."""
    probs = as_tensor(probs)
    _check_prob_rows(probs.data, "entropy")
    return scalar_mul(tsum(mul(probs, log(probs)), axis=-1), -1.0)


def cross_entropy(probs: Tensor, labels_onehot) -> Tensor:
    """Mean negative log-likelihood of one-hot labels under the given probability rows."""
    probs = as_tensor(probs)
    labels = np.asarray(labels_onehot, dtype=np.float64)
    if labels.shape != probs.data.shape:
        raise ShapeError("cross_entropy", probs.data.shape, labels.shape)
    _check_prob_rows(probs.data, "cross_entropy")
    onehot = np.all((labels == 0.0) | (labels == 1.0)) and np.all(labels.sum(axis=-1) == 1.0)
    if not onehot:
        raise TtadaptError("cross_entropy: labels must be exactly one-hot rows")
    picked = tsum(mul(log(probs), Tensor(labels)), axis=-1)
    return scalar_mul(tmean(picked), -1.0)


# ---------------------------------------------------------------------------
# backward pass


def topological_order(root: Tensor) -> list[Tensor]:
    """All gradient-requiring nodes reachable from root, in topological order."""
    order: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every gradient-requiring tensor reachable from a scalar loss."""
    if loss.data.shape != ():
        raise ShapeError("backward(loss must be scalar)", loss.data.shape)
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Backward pass returning one gradient array per parameter; unreachable params get zeros."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]


# ---------------------------------------------------------------------------
# optimizer


class SGD:
    """Momentum SGD over a fixed parameter list; velocity buffers live here."""

    def __init__(self, params: Iterable[Tensor], lr: float, momentum: float = 0.0):
        self.params = list(params)
        if lr < 0:
            raise TtadaptError(f"SGD: lr must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise TtadaptError(f"SGD: momentum must be in [0, 1), got {momentum}")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise TtadaptError(f"SGD: got {len(grads)} gradients for {len(self.params)} parameters")
        for p, v, g in zip(self.params, self.velocity, grads):
            if g.shape != p.data.shape:
                raise ShapeError("sgd_step", p.data.shape, g.shape)
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v

    def snapshot(self) -> list[np.ndarray]:
        return [v.copy() for v in self.velocity]

    def restore(self, state: Sequence[np.ndarray]) -> None:
        self.velocity = [v.copy() for v in state]
