"""Dense-tensor engine with reverse-mode automatic differentiation.

Values live on a Tape: an append-only list of op records whose order is
already topological, so the backward sweep is a single reverse pass and is
bit-deterministic. Two precisions are supported: float32 for training,
float64 for gradient checking.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


class DegenerateMaskError(ValueError):
    """A mask leaves no active position."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where one is not allowed."""


class GraphError(ValueError):
    """Tape misuse: non-scalar loss, detached node, or cross-tape mix."""


# Flipped by planted_backward_bug(); used as a negative control to prove the
# gradient checker detects a wrong backward rule.
_SABOTAGE_TANH_VJP = False


@contextlib.contextmanager
def planted_backward_bug():
    """Deliberately corrupt the tanh backward rule while the context is open."""
    global _SABOTAGE_TANH_VJP
    _SABOTAGE_TANH_VJP = True
    try:
        yield
    finally:
        _SABOTAGE_TANH_VJP = False


class _Node:
    __slots__ = ("value", "parents", "vjp", "requires_grad")

    def __init__(self, value, parents, vjp, requires_grad):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad


class Tensor:
    """Handle to one node of a Tape. Cheap to copy, never mutated."""

    __slots__ = ("tape", "node_id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.node_id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.node_id].value

    @property
    def shape(self) -> tuple:
        return self.tape.nodes[self.node_id].value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.node_id].requires_grad

    @property
    def grad(self):
        """Gradient filled in by the last backward() on this tape."""
        if self.tape.grads is None:
            return None
        return self.tape.grads[self.node_id]

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Append-only op record; owns values and, after backward, gradients."""

    def __init__(self, dtype=np.float32, check_finite: bool = False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes: list[_Node] = []
        self.grads: list | None = None

    def leaf(self, data, requires_grad: bool = False) -> Tensor:
        value = np.asarray(data, dtype=self.dtype)
        if value.ndim:
            value = np.ascontiguousarray(value)
        return self._record(value, (), None, requires_grad)

    def constant(self, data) -> Tensor:
        return self.leaf(data, requires_grad=False)

    def _record(self, value, parents, vjp_builder, requires_grad=None) -> Tensor:
        value = np.asarray(value, dtype=self.dtype)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError("non-finite value produced on tape")
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        vjp = vjp_builder() if (vjp_builder is not None and requires_grad) else None
        node = _Node(value, tuple(p.node_id for p in parents), vjp, requires_grad)
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from a scalar loss; fills per-node gradients.

        Gradients accumulate by summation across fan-out. The node list is
        already topologically ordered, so one reversed pass suffices and two
        runs over the same tape give bit-identical results.
        """
        if loss.tape is not self:
            raise GraphError("loss tensor does not belong to this tape")
        if loss.value.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.value)
        for nid in range(loss.node_id, -1, -1):
            node = self.nodes[nid]
            g = grads[nid]
            if g is None or node.vjp is None:
                continue
            parts = node.vjp(g)
            for pid, pg in zip(node.parents, parts):
                if pg is None or not self.nodes[pid].requires_grad:
                    continue
                if grads[pid] is None:
                    grads[pid] = np.zeros_like(self.nodes[pid].value)
                grads[pid] += pg
        self.grads = grads


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise GraphError("operands live on different tapes")
    return tape


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    _binary_shapes(a, b, "add")
    return tape._record(a.value + b.value, (a, b), lambda: lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    _binary_shapes(a, b, "sub")
    return tape._record(a.value - b.value, (a, b), lambda: lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    _binary_shapes(a, b, "mul")
    av, bv = a.value, b.value
    return tape._record(av * bv, (a, b), lambda: lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape._record(a.value * c, (a,), lambda: lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)

    def build():
        def vjp(g):
            if _SABOTAGE_TANH_VJP:
                return (g * (1.0 - y),)
            return (g * (1.0 - y * y),)
        return vjp

    return a.tape._record(y, (a,), build)


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # stable logistic: never exponentiates a large positive argument
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return a.tape._record(y, (a,), lambda: lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return a.tape._record(y, (a,), lambda: lambda g: (g * y,))


def sqrt(a: Tensor) -> Tensor:
    # derivative taken as 0 at exactly 0, so zero rows cannot mint NaNs
    y = np.sqrt(a.value)
    return a.tape._record(
        y, (a,),
        lambda: lambda g: (np.where(y > 0, g * 0.5 / np.where(y > 0, y, 1.0), 0.0),))


def recip(a: Tensor) -> Tensor:
    y = 1.0 / a.value
    return a.tape._record(y, (a,), lambda: lambda g: (-g * y * y,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    floor = float(floor)
    av = a.value
    # subgradient: clamped coordinates (including the boundary) pass nothing
    return a.tape._record(np.maximum(av, floor), (a,),
                          lambda: lambda g: (g * (av > floor),))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    av, bv = a.value, b.value
    return tape._record(av @ bv, (a, b),
                        lambda: lambda g: (g @ bv.T, av.T @ g))


def matmul3(a: Tensor, w: Tensor) -> Tensor:
    """[B,m,k] @ [k,n] -> [B,m,n]; the 2-D operand is shared across the batch."""
    tape = _same_tape(a, w)
    if len(a.shape) != 3 or len(w.shape) != 2 or a.shape[2] != w.shape[0]:
        raise ShapeError(f"matmul3: shapes {a.shape} and {w.shape} do not chain")
    av, wv = a.value, w.value

    def build():
        def vjp(g):
            da = g @ wv.T
            dw = np.einsum("bmk,bmn->kn", av, g)
            return (da, dw)
        return vjp

    return tape._record(av @ wv, (a, w), build)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul [B,m,k] @ [B,k,n] -> [B,m,n]."""
    tape = _same_tape(a, b)
    if (len(a.shape) != 3 or len(b.shape) != 3
            or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]):
        raise ShapeError(f"bmm: shapes {a.shape} and {b.shape} do not chain")
    av, bv = a.value, b.value
    return tape._record(
        av @ bv, (a, b),
        lambda: lambda g: (g @ np.swapaxes(bv, 1, 2), np.swapaxes(av, 1, 2) @ g))


def transpose_last2(a: Tensor) -> Tensor:
    if len(a.shape) < 2:
        raise ShapeError(f"transpose_last2: rank-{len(a.shape)} operand")
    return a.tape._record(np.swapaxes(a.value, -1, -2), (a,),
                          lambda: lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return a.tape._record(a.value.reshape(shape), (a,),
                          lambda: lambda g: (g.reshape(old),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    tape = _same_tape(*parts)
    widths = [p.shape[-1] for p in parts]
    value = np.concatenate([p.value for p in parts], axis=-1)

    def build():
        def vjp(g):
            out, at = [], 0
            for w in widths:
                out.append(g[..., at:at + w])
                at += w
            return tuple(out)
        return vjp

    return tape._record(value, tuple(parts), build)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[-1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of width {a.shape[-1]}")

    def build():
        def vjp(g):
            full = np.zeros_like(a.value)
            full[..., start:stop] = g
            return (full,)
        return vjp

    return a.tape._record(a.value[..., start:stop], (a,), build)


def select_time(a: Tensor, t: int) -> Tensor:
    """Pick step t from [B,L,d] -> [B,d]."""
    if len(a.shape) != 3:
        raise ShapeError(f"select_time: need rank 3, got {a.shape}")

    def build():
        def vjp(g):
            full = np.zeros_like(a.value)
            full[:, t, :] = g
            return (full,)
        return vjp

    return a.tape._record(a.value[:, t, :], (a,), build)


def stack_time(parts: Sequence[Tensor]) -> Tensor:
    """Stack L tensors of [B,d] into [B,L,d]."""
    tape = _same_tape(*parts)
    value = np.stack([p.value for p in parts], axis=1)

    def build():
        def vjp(g):
            return tuple(g[:, t, :] for t in range(len(parts)))
        return vjp

    return tape._record(value, tuple(parts), build)


# ---------------------------------------------------------------------------
# reductions and broadcast-free scaling

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return a.tape._record(np.asarray(a.value.sum()), (a,),
                          lambda: lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.value.size)


def sum_last(a: Tensor) -> Tensor:
    """Reduce the last axis."""
    n = a.shape[-1]
    return a.tape._record(a.value.sum(axis=-1), (a,),
                          lambda: lambda g: (np.repeat(g[..., None], n, axis=-1),))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """[r,c] + [c], the only sanctioned broadcast."""
    tape = _same_tape(a, b)
    if len(b.shape) != 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: shapes {a.shape} and {b.shape}")
    ndim = len(a.shape)
    axes = tuple(range(ndim - 1))
    return tape._record(a.value + b.value, (a, b),
                        lambda: lambda g: (g, g.sum(axis=axes)))


def scale_rows(a: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of [r,c] by v[i]."""
    tape = _same_tape(a, v)
    if len(a.shape) != 2 or v.shape != (a.shape[0],):
        raise ShapeError(f"scale_rows: shapes {a.shape} and {v.shape}")
    av, vv = a.value, v.value
    return tape._record(av * vv[:, None], (a, v),
                        lambda: lambda g: (g * vv[:, None], (g * av).sum(axis=1)))


def scale_mid(a: Tensor, v: Tensor) -> Tensor:
    """Multiply a[b,i,:] of [B,m,n] by v[b,i]."""
    tape = _same_tape(a, v)
    if len(a.shape) != 3 or v.shape != a.shape[:2]:
        raise ShapeError(f"scale_mid: shapes {a.shape} and {v.shape}")
    av, vv = a.value, v.value
    return tape._record(av * vv[:, :, None], (a, v),
                        lambda: lambda g: (g * vv[:, :, None], (g * av).sum(axis=2)))


def scale_last3(a: Tensor, v: Tensor) -> Tensor:
    """Multiply a[b,:,j] of [B,m,n] by v[b,j]."""
    tape = _same_tape(a, v)
    if len(a.shape) != 3 or v.shape != (a.shape[0], a.shape[2]):
        raise ShapeError(f"scale_last3: shapes {a.shape} and {v.shape}")
    av, vv = a.value, v.value
    return tape._record(av * vv[:, None, :], (a, v),
                        lambda: lambda g: (g * vv[:, None, :], (g * av).sum(axis=1)))


def gather_rows(table: Tensor, ids) -> Tensor:
    """table[V,d] indexed by an integer array -> ids.shape + (d,)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: id out of range for table {table.shape}")
    d = table.shape[1]

    def build():
        def vjp(g):
            dt = np.zeros_like(table.value)
            np.add.at(dt, ids.ravel(), g.reshape(-1, d))
            return (dt,)
        return vjp

    return table.tape._record(table.value[ids], (table,), build)


def unfold_same(a: Tensor, width: int) -> Tensor:
    """Zero-padded sliding windows: [B,L,d] -> [B,L,width*d].

    Window at position t covers t-width//2 .. t+(width-1)//2, the usual
    same-padding layout for odd and even widths.
    """
    if len(a.shape) != 3:
        raise ShapeError(f"unfold_same: need rank 3, got {a.shape}")
    B, L, d = a.shape
    left = width // 2
    av = a.value
    padded = np.zeros((B, L + width - 1, d), dtype=av.dtype)
    padded[:, left:left + L, :] = av
    windows = np.concatenate([padded[:, k:k + L, :] for k in range(width)], axis=2)

    def build():
        def vjp(g):
            dpad = np.zeros((B, L + width - 1, d), dtype=g.dtype)
            for k in range(width):
                dpad[:, k:k + L, :] += g[:, :, k * d:(k + 1) * d]
            return (dpad[:, left:left + L, :],)
        return vjp

    return a.tape._record(windows, (a,), build)


# ---------------------------------------------------------------------------
# softmax family

def _as_mask_array(mask, shape) -> np.ndarray:
    m = mask.value if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(np.float64)
    if m.shape != shape:
        raise ShapeError(f"mask shape {m.shape} does not match logits {shape}")
    return m


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over active positions; masked positions get exactly 0.

    Masked logits are replaced by -inf before the max-subtracted
    normalization, so they carry no probability mass and no gradient.
    Accepts a vector or a matrix (softmax per row).
    """
    m = _as_mask_array(mask, logits.shape)
    active = m > 0
    if not active.any(axis=-1).all():
        raise DegenerateMaskError("masked_softmax: a row has no active position")
    x = np.where(active, logits.value, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)

    def build():
        def vjp(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            return (y * (g - dot),)
        return vjp

    return logits.tape._record(y, (logits,), build)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log softmax of [B,K] (or a single [K] vector)."""
    x = logits.value
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def build():
        def vjp(g):
            return (g - soft * g.sum(axis=-1, keepdims=True),)
        return vjp

    return logits.tape._record(out, (logits,), build)


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Per-row cross-entropy -log softmax(logits)[label], via log-sum-exp."""
    labels = np.asarray(labels)
    if len(logits.shape) != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_xent: logits {logits.shape}, labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("softmax_xent: label out of range")
    x = logits.value
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(x.shape[0])
    losses = (lse[:, 0] - shifted[rows, labels])
    soft = np.exp(shifted - lse)

    def build():
        def vjp(g):
            d = soft * g[:, None]
            d[rows, labels] -= g
            return (d,)
        return vjp

    return logits.tape._record(losses, (logits,), build)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f: Callable[[list[Tensor]], Tensor], params: Sequence[np.ndarray],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f receives freshly wrapped float64 leaves and must return a scalar Tensor;
    it has to be deterministic. Relative error per coordinate is
    |analytic - numeric| / max(1e-6, |analytic| + |numeric|); the floor keeps
    near-zero coordinates from amplifying central-difference rounding noise
    into spurious relative error.
    """
    arrays = [np.asarray(p, dtype=np.float64) for p in params]
    tape = Tape(np.float64)
    leaves = [tape.leaf(a, requires_grad=True) for a in arrays]
    loss = f(leaves)
    tape.backward(loss)
    analytic = [np.zeros_like(a) if lf.grad is None else np.asarray(lf.grad)
                for a, lf in zip(arrays, leaves)]
    if not all(np.all(np.isfinite(a)) for a in analytic):
        raise NumericError("grad_check: non-finite analytic gradient")

    def value_at(arrs) -> float:
        t2 = Tape(np.float64)
        out = float(f([t2.leaf(a) for a in arrs]).value)
        if not np.isfinite(out):
            raise NumericError("grad_check: non-finite value at perturbed point")
        return out

    worst = 0.0
    for i, base in enumerate(arrays):
        flat = base.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = value_at(arrays)
            flat[j] = orig - eps
            down = value_at(arrays)
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[i].ravel()[j]
            err = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
            if not np.isfinite(err):
                raise NumericError("grad_check: non-finite error estimate")
            worst = max(worst, err)
    return worst
