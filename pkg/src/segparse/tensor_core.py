"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Graph` records primitive applications in creation order (which is
topological by construction); :func:`backward` replays the record in reverse,
accumulating gradients additively across fan-out.  Recording only happens
inside a ``with Graph():`` block and only for operations touching tracked
tensors, so inference runs tape-free.

Training runs in float32; tests build float64 tensors for the tighter
finite-difference tolerances.  Dropout masks are always supplied by the
caller so that replays and gradient checks are deterministic.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ContractError, DimensionError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_produced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._produced = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def _tracked(self):
        return self.requires_grad or self._produced

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_ACTIVE: list["Graph"] = []


class Graph:
    """Topologically ordered record of primitive applications."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor):
        backward(self, loss)


def custom_op(out_data, inputs, backward_fn) -> Tensor:
    """Record an operation with a hand-written adjoint.

    ``backward_fn(gout)`` must return one gradient array (or None) per input.
    All model-level fused ops (LSTM steps, biaffine forms, masked losses) are
    built on this hook.
    """
    out = Tensor(out_data)
    if _ACTIVE and any(t._tracked for t in inputs):
        out._produced = True
        _ACTIVE[-1].nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate ``grad`` on every tracked tensor reachable from ``loss``."""
    if loss.data.shape != ():
        raise ContractError(f"loss must be a scalar, got shape {loss.data.shape}")
    if not any(node.out is loss for node in graph.nodes):
        raise ContractError("loss tensor was not produced in this graph")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(graph.nodes):
        gout = node.out.grad
        if gout is None:
            continue
        grads = node.backward_fn(gout)
        for t, g in zip(node.inputs, grads):
            if g is None or not t._tracked:
                continue
            t.grad = g if t.grad is None else t.grad + g
        if not node.out.requires_grad:
            node.out.grad = None  # intermediates reset so repeated calls stay correct


# ---------------------------------------------------------------------------
# primitives


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; operands may share a leading batch axis (both 3-d)."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise DimensionError(f"matmul needs equal-rank matrices, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a._tracked else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b._tracked else None
        return ga, gb

    return custom_op(out_data, (a, b), bwd)


def _binary(a, b, fwd, bwd_a, bwd_b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"shapes {a.shape} and {b.shape} must match (or one be scalar)")
    out_data = fwd(a.data, b.data)

    def bwd(g):
        ga = bwd_a(g, a.data, b.data) if a._tracked else None
        gb = bwd_b(g, a.data, b.data) if b._tracked else None
        if ga is not None and ga.shape != a.data.shape:
            ga = ga.sum().reshape(a.data.shape)
        if gb is not None and gb.shape != b.data.shape:
            gb = gb.sum().reshape(b.data.shape)
        return ga, gb

    return custom_op(out_data, (a, b), bwd)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    return custom_op(out_data, (x,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-x.data))
    return custom_op(out_data, (x,), lambda g: (g * out_data * (1.0 - out_data),))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0
    out_data = np.where(pos, x.data, slope * x.data)
    return custom_op(out_data, (x,), lambda g: (g * np.where(pos, 1.0, slope).astype(x.data.dtype),))


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(pieces)

    return custom_op(out_data, tuple(parts), bwd)


def dropout(x: Tensor, p: float, mask: np.ndarray | None, training: bool) -> Tensor:
    """Inverted dropout with a caller-supplied 0/1 mask; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise DimensionError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if mask is None:
        raise ContractError("training-mode dropout needs an explicit mask")
    if mask.shape != x.data.shape:
        raise DimensionError(f"mask shape {mask.shape} != input shape {x.data.shape}")
    scaled = (mask / (1.0 - p)).astype(x.data.dtype)
    return custom_op(x.data * scaled, (x,), lambda g: (g * scaled,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a row vector to every row of a matrix (the one broadcast we allow)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"add_bias expects (R,C)+(C,), got {x.shape} + {b.shape}")
    return custom_op(x.data + b.data[None, :], (x, b), lambda g: (g, g.sum(axis=0)))


def take_rows(x: Tensor, idx) -> Tensor:
    """Gather rows by integer index; the adjoint scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return custom_op(out_data, (x,), bwd)


def tile_rows(x: Tensor, reps: int) -> Tensor:
    """Repeat a single row vector into (reps, C)."""
    row = x.data.reshape(1, -1)
    out_data = np.repeat(row, reps, axis=0)
    return custom_op(out_data, (x,), lambda g: (g.sum(axis=0).reshape(x.data.shape),))


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)
    return custom_op(out_data, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError("transpose is defined for matrices")
    return custom_op(x.data.T.copy(), (x,), lambda g: (g.T,))


def sum_all(x: Tensor) -> Tensor:
    return custom_op(x.data.sum(), (x,), lambda g: (np.full_like(x.data, 1.0) * g,))


def softmax_xent(logits: Tensor, gold) -> Tensor:
    """Cross-entropy against integer gold class(es), stabilized by max-shift.

    Accepts a (C,) vector with a scalar index, or an (R, C) matrix with a
    length-R index vector (the loss is then the sum over rows).
    """
    data = logits.data
    if data.ndim == 1:
        data = data[None, :]
        gold_idx = np.asarray([gold], dtype=np.int64)
    elif data.ndim == 2:
        gold_idx = np.asarray(gold, dtype=np.int64)
        if gold_idx.shape != (data.shape[0],):
            raise DimensionError(f"need {data.shape[0]} gold indices, got {gold_idx.shape}")
    else:
        raise DimensionError(f"softmax_xent expects a vector or matrix, got {logits.shape}")
    n_classes = data.shape[1]
    if np.any(gold_idx < 0) or np.any(gold_idx >= n_classes):
        raise IndexError(f"gold class out of range 0..{n_classes - 1}")
    shifted = data - data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    rows = np.arange(data.shape[0])
    loss = float((np.log(denom[:, 0]) - shifted[rows, gold_idx]).sum())

    def bwd(g):
        gl = probs.copy()
        gl[rows, gold_idx] -= 1.0
        gl *= g
        return (gl.reshape(logits.data.shape),)

    return custom_op(np.asarray(loss, dtype=logits.data.dtype), (logits,), bwd)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    failures: list  # (flat index, analytic, numeric, rel err) of coords over tol
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the recorded gradient of ``f`` against central differences.

    ``f`` must map ``x`` to a scalar Tensor deterministically (fix any
    dropout masks before calling).  Differences are taken coordinate-wise at
    the tensor's own dtype, so use float64 inputs for tight tolerances.
    """
    x.requires_grad = True
    x.grad = None
    with Graph() as g:
        loss = f(x)
    backward(g, loss)
    analytic = np.zeros_like(x.data) if x.grad is None else np.array(x.grad, copy=True)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = float(f(x).data)
        flat[k] = orig - h
        down = float(f(x).data)
        flat[k] = orig
        numeric[k] = (up - down) / (2.0 * h)
    numeric = numeric.reshape(x.data.shape)

    rel = np.abs(analytic - numeric) / np.maximum(
        1.0, np.maximum(np.abs(analytic), np.abs(numeric))
    )
    failures = [
        (int(k), float(analytic.reshape(-1)[k]), float(numeric.reshape(-1)[k]), float(r))
        for k, r in enumerate(rel.reshape(-1))
        if r > tol
    ]
    return GradCheckReport(float(rel.max()) if rel.size else 0.0, failures, tol)


# ---------------------------------------------------------------------------
# checkpoint container: "CPKT1", little-endian, float32 payloads

CHECKPOINT_MAGIC = b"CPKT1"


def save_checkpoint(path, entries: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            if arr.ndim:
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: bad magic string {blob[:len(CHECKPOINT_MAGIC)]!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    pos = len(CHECKPOINT_MAGIC)

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (count,) = unpack("<I")
    entries = {}
    for _ in range(count):
        (name_len,) = unpack("<H")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = unpack("<B")
        shape = unpack(f"<{ndim}I") if ndim else ()
        n_values = int(np.prod(shape)) if ndim else 1
        size = 4 * n_values
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(blob, dtype="<f4", count=n_values, offset=pos).reshape(shape)
        pos += size
        entries[name] = arr.copy()
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return entries
