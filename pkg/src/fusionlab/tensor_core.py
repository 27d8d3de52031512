"""Dense float32 tensors with reverse-mode automatic differentiation.

Values are plain C-order float32 numpy arrays. Differentiable operations
build a dynamic graph of `Node` objects; `backward` walks it once in
reverse topological order and accumulates gradients into `Node.grad`.
Only the shapes the fusion models actually need are supported: there is
no general broadcasting beyond matrix-plus-row-bias.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .rng import RngState

Tensor = np.ndarray  # float32, C-order


def as_tensor(x) -> Tensor:
    """Coerce input to a C-order float32 array."""
    return np.ascontiguousarray(x, dtype=np.float32)


class Node:
    """One value in the autodiff graph.

    grad always has the value's shape and starts at zero. Parents and
    the backward closure describe how to push an incoming gradient to
    the operands.
    """

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False,
                 backward=None):
        self.value = as_tensor(value)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


def leaf(value, requires_grad: bool = False) -> Node:
    return Node(value, requires_grad=requires_grad)


def constant(value) -> Node:
    return Node(value)


def _topo(root: Node) -> list[Node]:
    """Iterative post-order over the graph; each node appears once."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into every reachable node's grad.

    root must be scalar-shaped (a () or (1,) tensor).
    """
    if root.value.size != 1:
        raise ShapeError(f"backward requires a scalar root, got shape {root.shape}")
    root.grad = np.ones_like(root.value)
    for node in reversed(_topo(root)):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(nodes) -> None:
    for n in nodes:
        n.grad = np.zeros_like(n.value)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def back(g):
        a.grad += g
        b.grad += g

    return Node(a.value + b.value, (a, b), "add", backward=back)


def add_bias(x: Node, b: Node) -> Node:
    """x[..., n] + b[n], broadcast over leading axes."""
    if b.value.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")

    def back(g):
        x.grad += g
        b.grad += g.reshape(-1, g.shape[-1]).sum(axis=0)

    return Node(x.value + b.value, (x, b), "add_bias", backward=back)


def neg(a: Node) -> Node:
    def back(g):
        a.grad -= g

    return Node(-a.value, (a,), "neg", backward=back)


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def back(g):
        a.grad += g * b.value
        b.grad += g * a.value

    return Node(a.value * b.value, (a, b), "mul", backward=back)


def scale(a: Node, c: float) -> Node:
    c = np.float32(c)

    def back(g):
        a.grad += g * c

    return Node(a.value * c, (a,), "scale", backward=back)


def matmul(a: Node, b: Node) -> Node:
    """Strict 2-D matrix product [m,k] @ [k,n]."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    return Node(a.value @ b.value, (a, b), "matmul", backward=back)


def bmm(a: Node, b: Node) -> Node:
    """Batched matrix product [B,m,k] @ [B,k,n]."""
    if (a.value.ndim != 3 or b.value.ndim != 3 or a.shape[0] != b.shape[0]
            or a.shape[2] != b.shape[1]):
        raise ShapeError(f"bmm: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        a.grad += g @ b.value.swapaxes(1, 2)
        b.grad += a.value.swapaxes(1, 2) @ g

    return Node(a.value @ b.value, (a, b), "bmm", backward=back)


def transpose_last2(a: Node) -> Node:
    def back(g):
        a.grad += g.swapaxes(-1, -2)

    return Node(np.ascontiguousarray(a.value.swapaxes(-1, -2)), (a,),
                "transpose", backward=back)


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)

    def back(g):
        a.grad += g.reshape(a.value.shape)

    return Node(a.value.reshape(shape), (a,), "reshape", backward=back)


def concat(nodes: Sequence[Node], axis: int) -> Node:
    """Concatenate along `axis`; all other dims must agree."""
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("concat: need at least one tensor")
    ref = list(nodes[0].shape)
    for n in nodes[1:]:
        s = list(n.shape)
        if len(s) != len(ref) or any(
                i != axis and s[i] != ref[i] for i in range(len(ref))):
            raise ShapeError(
                f"concat: shape {tuple(s)} incompatible with {tuple(ref)} "
                f"on axis {axis}")
    sizes = [n.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            n.grad += g[tuple(idx)]

    return Node(np.concatenate([n.value for n in nodes], axis=axis), nodes,
                "concat", backward=back)


def slice_axis(a: Node, axis: int, start: int, stop: int) -> Node:
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        a.grad[idx] += g

    return Node(np.ascontiguousarray(a.value[idx]), (a,), "slice", backward=back)


def elementwise_product(nodes: Sequence[Node]) -> Node:
    """Hadamard product of identically shaped tensors."""
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("elementwise_product: need at least one tensor")
    ref = nodes[0].shape
    for n in nodes[1:]:
        if n.shape != ref:
            raise ShapeError(
                f"elementwise_product: shape {n.shape} differs from {ref}")
    out = nodes[0].value.copy()
    for n in nodes[1:]:
        out = out * n.value

    def back(g):
        for i, n in enumerate(nodes):
            others = np.ones_like(out)
            for j, m in enumerate(nodes):
                if j != i:
                    others = others * m.value
            n.grad += g * others

    return Node(out, nodes, "hadamard", backward=back)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Node) -> Node:
    mask = a.value > 0

    def back(g):
        a.grad += g * mask

    return Node(np.where(mask, a.value, 0.0), (a,), "relu", backward=back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids float32 exp overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    s = _sigmoid(a.value)

    def back(g):
        a.grad += g * s * (1.0 - s)

    return Node(s, (a,), "sigmoid", backward=back)


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)

    def back(g):
        a.grad += g * (1.0 - t * t)

    return Node(t, (a,), "tanh", backward=back)


def softmax_rows(x: Node) -> Node:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        x.grad += s * (g - inner)

    return Node(s, (x,), "softmax", backward=back)


# ---------------------------------------------------------------------------
# reductions


def mean_axis(x: Node, axis: int) -> Node:
    k = x.shape[axis]

    def back(g):
        x.grad += np.expand_dims(g, axis) / np.float32(k)

    return Node(x.value.mean(axis=axis), (x,), "mean_axis", backward=back)


def mean_all(x: Node) -> Node:
    k = x.value.size

    def back(g):
        x.grad += g / np.float32(k)

    return Node(np.float32(x.value.mean()), (x,), "mean", backward=back)


def sum_all(x: Node) -> Node:
    def back(g):
        x.grad += g

    return Node(np.float32(x.value.sum()), (x,), "sum", backward=back)


# ---------------------------------------------------------------------------
# losses


def bce_with_logits(scores: Node, labels: Tensor) -> Node:
    """Mean binary cross-entropy between logits and {0,1} labels.

    Computed in the logit form max(s,0) - s*y + log(1 + exp(-|s|)) so
    extreme scores stay finite.
    """
    y = as_tensor(labels)
    if y.shape != scores.shape:
        raise ShapeError(f"bce: scores {scores.shape} vs labels {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("bce: labels must be 0 or 1")
    s = scores.value
    n = s.size
    loss = np.maximum(s, 0) - s * y + np.log1p(np.exp(-np.abs(s)))

    def back(g):
        scores.grad += g * (_sigmoid(s) - y) / np.float32(n)

    return Node(np.float32(loss.mean()), (scores,), "bce_logits", backward=back)


def bce_on_probs(probs: Node, labels: Tensor, eps: float = 1e-7) -> Node:
    """Mean binary cross-entropy on probabilities already in (0,1).

    Probabilities are clamped to [eps, 1-eps]; clamped coordinates get
    zero gradient.
    """
    y = as_tensor(labels)
    if y.shape != probs.shape:
        raise ShapeError(f"bce: probs {probs.shape} vs labels {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("bce: labels must be 0 or 1")
    p = np.clip(probs.value, eps, 1.0 - eps)
    inside = (probs.value > eps) & (probs.value < 1.0 - eps)
    n = p.size
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))

    def back(g):
        probs.grad += g * inside * (p - y) / (p * (1.0 - p) * np.float32(n))

    return Node(np.float32(loss.mean()), (probs,), "bce_probs", backward=back)


# ---------------------------------------------------------------------------
# stochastic / control ops


def dropout(x: Node, p: float, rng: RngState, training: bool) -> Node:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Inference is the identity and consumes no randomness.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training:
        def back_id(g):
            x.grad += g

        return Node(x.value, (x,), "dropout", backward=back_id)
    keep = (rng.uniform(x.shape) >= np.float32(p)).astype(np.float32)
    scale_ = np.float32(1.0 / (1.0 - p))

    def back(g):
        x.grad += g * keep * scale_

    return Node(x.value * keep * scale_, (x,), "dropout", backward=back)


def where_rows(keep: np.ndarray, a: Node, b: Node) -> Node:
    """Row-select: rows of `a` where keep is true, rows of `b` elsewhere.

    Gradient routes to exactly one operand per row, so the discarded
    operand cannot influence anything upstream.
    """
    if a.shape != b.shape:
        raise ShapeError(f"where_rows: shapes {a.shape} and {b.shape} differ")
    k = np.asarray(keep, dtype=bool).reshape(-1, *([1] * (a.value.ndim - 1)))

    def back(g):
        a.grad += g * k
        b.grad += g * ~k

    return Node(np.where(k, a.value, b.value), (a, b), "where_rows", backward=back)


# ---------------------------------------------------------------------------
# LSTM


def lstm_cell(x_t: Node, h: Node, c: Node, wx: Node, wh: Node, b: Node):
    """One LSTM step on a batch: x_t [B,d], h/c [B,H] -> new (h, c).

    Gate layout along the 4H axis is (input, forget, candidate, output).
    """
    hidden = h.shape[-1]
    gates = add_bias(add(matmul(x_t, wx), matmul(h, wh)), b)
    i = sigmoid(slice_axis(gates, 1, 0, hidden))
    f = sigmoid(slice_axis(gates, 1, hidden, 2 * hidden))
    g = tanh(slice_axis(gates, 1, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_axis(gates, 1, 3 * hidden, 4 * hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def lstm_sequence(x: Node, wx: Node, wh: Node, b: Node,
                  h0: Node | None = None, c0: Node | None = None) -> Node:
    """Run an LSTM over a single sequence [T, d_in] -> all states [T, H].

    Full backpropagation through time comes from the graph itself.
    """
    if x.value.ndim != 2:
        raise ShapeError(f"lstm_sequence expects [T, d_in], got {x.shape}")
    t_len = x.shape[0]
    if t_len == 0:
        raise ShapeError("lstm_sequence: empty sequence (T == 0)")
    hidden = wh.shape[0]
    h = h0 if h0 is not None else constant(np.zeros(hidden, np.float32))
    c = c0 if c0 is not None else constant(np.zeros(hidden, np.float32))
    h = reshape(h, (1, hidden))
    c = reshape(c, (1, hidden))
    states = []
    for t in range(t_len):
        x_t = slice_axis(x, 0, t, t + 1)
        h, c = lstm_cell(x_t, h, c, wx, wh, b)
        states.append(h)
    return concat(states, axis=0)


def lstm_last_state(x: Node, lengths: np.ndarray, wx: Node, wh: Node,
                    b: Node) -> Node:
    """Batched LSTM over padded [B, T, d_in]; returns h at each row's length.

    The recurrence freezes a row once t reaches its length, so padded
    positions cannot affect the result or any gradient.
    """
    if x.value.ndim != 3:
        raise ShapeError(f"lstm_last_state expects [B, T, d], got {x.shape}")
    bsz, t_max, _ = x.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (bsz,) or np.any(lengths < 1) or np.any(lengths > t_max):
        raise ShapeError(f"lstm_last_state: bad lengths for T={t_max}")
    hidden = wh.shape[0]
    h = constant(np.zeros((bsz, hidden), np.float32))
    c = constant(np.zeros((bsz, hidden), np.float32))
    for t in range(t_max):
        x_t = reshape(slice_axis(x, 1, t, t + 1), (bsz, x.shape[2]))
        h_new, c_new = lstm_cell(x_t, h, c, wx, wh, b)
        active = t < lengths
        if active.all():
            h, c = h_new, c_new
        else:
            h = where_rows(active, h_new, h)
            c = where_rows(active, c_new, c)
    return h


# ---------------------------------------------------------------------------
# verification


def gradient_check(f: Callable[[list[Node]], Node], xs: list[Node],
                   eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must map the leaf list to a scalar Node. The gradient is taken at
    the concatenation of all requires_grad inputs; the returned error is
    max_i |analytic_i - numeric_i| / max(1e-8, |analytic| + |numeric|),
    where |.| is the max-norm over that whole gradient: the worst
    coordinate difference is scaled by the gradient's overall magnitude,
    so cancellation-tiny coordinates cannot make the measurement
    ill-posed in float32, while a wrong backward rule still errs at full
    scale. The 1e-8 floor covers identically-zero gradients.
    """
    if eps <= 0:
        raise ConfigError("gradient_check: eps must be positive")
    out = f(xs)
    if out.value.size != 1:
        raise ShapeError(f"gradient_check needs scalar f, got shape {out.shape}")
    zero_grads(_topo(out))
    backward(out)
    analytic_parts = []
    numeric_parts = []
    for x in xs:
        if not x.requires_grad:
            continue
        analytic = x.grad.astype(np.float64).reshape(-1)
        numeric = np.empty_like(analytic)
        flat = x.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + np.float32(eps)
            x_plus = float(flat[i])
            f_plus = float(f(xs).value.ravel()[0])
            flat[i] = orig - np.float32(eps)
            x_minus = float(flat[i])
            f_minus = float(f(xs).value.ravel()[0])
            flat[i] = orig
            # divide by the realized float32 step, not the nominal one
            numeric[i] = (f_plus - f_minus) / (x_plus - x_minus)
        analytic_parts.append(analytic)
        numeric_parts.append(numeric)
    if not analytic_parts:
        return 0.0
    a = np.concatenate(analytic_parts)
    n = np.concatenate(numeric_parts)
    scale = max(1e-8, np.abs(a).max(initial=0.0) + np.abs(n).max(initial=0.0))
    return float(np.abs(a - n).max(initial=0.0)) / scale
