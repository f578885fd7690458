"""Dense tensors with recorded reverse-mode differentiation.

Values are numpy arrays of rank <= 2 (scalars allowed as rank 0).  Operations
executed while a :class:`Tape` is active are recorded; :func:`backward` replays
the tape in reverse and accumulates gradients into every ``requires_grad``
tensor that the loss depends on.  Gradients sum into ``Tensor.grad``; call
:func:`zero_grads` before each backward pass.

Float32 is the production dtype; gradient checks run everything in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericError(RuntimeError):
    """A computation produced NaN or Inf."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


_TAPE_STACK: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None, _checked=False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 2:
            raise DimensionError(f"rank {arr.ndim} > 2 not supported")
        if not _checked and not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class _Op:
    out: Tensor
    inputs: tuple
    vjps: tuple  # one callable (or None) per input: upstream grad -> input grad


@dataclass
class Tape:
    """Ordered record of operations for one forward pass."""

    _ops: list = field(default_factory=list)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        assert _TAPE_STACK.pop() is self
        return False

    def __len__(self):
        return len(self._ops)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out_data, inputs, vjps):
    """Wrap ``out_data`` in a Tensor, recording the op if a tape is active.

    ``vjps[i]`` maps the upstream gradient to the gradient of ``inputs[i]``;
    pass None for inputs that never need gradients.
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericError("operation produced NaN or Inf")
    out = Tensor(out_data, _checked=True)
    tape = _active_tape()
    if tape is not None:
        tape._ops.append(_Op(out, tuple(inputs), tuple(vjps)))
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(param) into .grad of every requires_grad tensor."""
    if loss.data.size != 1:
        raise DimensionError(f"backward seed must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for op in reversed(tape._ops):
        g = grads.pop(id(op.out), None)
        if g is None:
            continue
        for inp, vjp in zip(op.inputs, op.vjps):
            if vjp is None:
                continue
            gi = vjp(g)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    # surviving entries are leaves
    for op in tape._ops:
        for inp in op.inputs:
            gi = grads.get(id(inp))
            if gi is not None and isinstance(inp, Tensor) and inp.requires_grad:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad = inp.grad + gi
                del grads[id(inp)]
    if id(loss) in grads and loss.requires_grad:
        loss.grad = (loss.grad if loss.grad is not None else 0) + grads[id(loss)]


def zero_grads(params):
    for p in params:
        p.grad = None


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    out = a.data + b.data
    return record_op(out, (a, b), (
        lambda g: _unbroadcast(g, a.shape),
        lambda g: _unbroadcast(g, b.shape),
    ))


def sub(a, b):
    out = a.data - b.data
    return record_op(out, (a, b), (
        lambda g: _unbroadcast(g, a.shape),
        lambda g: _unbroadcast(-g, b.shape),
    ))


def mul(a, b):
    out = a.data * b.data
    return record_op(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.shape),
        lambda g: _unbroadcast(g * a.data, b.shape),
    ))


def scale(a, c):
    c = float(c)
    return record_op(a.data * c, (a,), (lambda g: g * c,))


def add_const(a, c):
    return record_op(a.data + c, (a,), (lambda g: g,))


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    return record_op(out, (a, b), (
        lambda g: g @ b.data.T,
        lambda g: a.data.T @ g,
    ))


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x):
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0), (x,), (lambda g: g * mask,))


def leaky_relu(x, slope):
    if not 0 <= slope < 1:
        raise ValueError(f"slope must be in [0,1), got {slope}")
    mask = x.data > 0
    factor = np.where(mask, 1.0, slope).astype(x.dtype)
    return record_op(x.data * factor, (x,), (lambda g: g * factor,))


def sigmoid(x):
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record_op(out, (x,), (lambda g: g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return record_op(out, (x,), (lambda g: g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# reductions / reshaping


def sum_all(x):
    return record_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                     (lambda g: np.broadcast_to(g, x.shape).astype(x.dtype),))


def mean_all(x):
    n = x.data.size
    return record_op(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                     (lambda g: np.broadcast_to(g / n, x.shape).astype(x.dtype),))


def concat_cols(tensors):
    datas = [t.data for t in tensors]
    widths = [d.shape[1] for d in datas]
    offs = np.cumsum([0] + widths)
    out = np.concatenate(datas, axis=1)
    vjps = tuple(
        (lambda g, a=offs[i], b=offs[i + 1]: g[:, a:b]) for i in range(len(tensors))
    )
    return record_op(out, tuple(tensors), vjps)


def concat_rows(tensors):
    datas = [t.data for t in tensors]
    heights = [d.shape[0] for d in datas]
    offs = np.cumsum([0] + heights)
    out = np.concatenate(datas, axis=0)
    vjps = tuple(
        (lambda g, a=offs[i], b=offs[i + 1]: g[a:b]) for i in range(len(tensors))
    )
    return record_op(out, tuple(tensors), vjps)


def gather_rows(x, idx):
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return gx

    return record_op(out, (x,), (vjp,))


def segment_sum(x, seg, n_segments):
    """Sum rows of x into n_segments buckets keyed by seg."""
    seg = np.asarray(seg, dtype=np.int64)
    shape = (n_segments,) + x.data.shape[1:]
    out = np.zeros(shape, dtype=x.dtype)
    np.add.at(out, seg, x.data)
    return record_op(out, (x,), (lambda g: g[seg],))


def segment_softmax(x, seg, n_segments):
    """Softmax over rows sharing a segment id, columnwise for rank-2 input.

    Stable via per-segment max subtraction.  Empty segments simply produce no
    output rows.  Outputs within each segment sum to 1 per column.
    """
    seg = np.asarray(seg, dtype=np.int64)
    data = x.data
    mshape = (n_segments,) + data.shape[1:]
    seg_max = np.full(mshape, -np.inf, dtype=data.dtype)
    np.maximum.at(seg_max, seg, data)
    if data.shape[0] == 0:
        return record_op(data.copy(), (x,), (lambda g: np.zeros_like(data),))
    e = np.exp(data - seg_max[seg])
    denom = np.zeros(mshape, dtype=data.dtype)
    np.add.at(denom, seg, e)
    out = e / denom[seg]

    def vjp(g):
        dot = np.zeros(mshape, dtype=data.dtype)
        np.add.at(dot, seg, out * g)
        return out * (g - dot[seg])

    return record_op(out, (x,), (vjp,))


def dropout(x, rate, training, rng):
    """Zero each element with probability ``rate`` and rescale survivors.

    Identity in eval mode or at rate 0; ``rng`` is a numpy Generator.
    """
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return record_op(x.data.copy(), (x,), (lambda g: g,))
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return record_op(x.data * keep, (x,), (lambda g: g * keep,))


# ---------------------------------------------------------------------------
# GRU cell


@dataclass
class GruParams:
    """Weights of a single gated recurrent cell (hidden size h, input size d).

    Matrices are stored [h x d] / [h x h] so states multiply on the right as
    row-major batches: x @ W.T.
    """

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @property
    def hidden_size(self):
        return self.w_z.shape[0]

    @property
    def input_size(self):
        return self.w_z.shape[1]

    def tensors(self, prefix=""):
        return {prefix + k: getattr(self, k) for k in
                ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")}


def _t(p):
    return record_op(p.data.T.copy(), (p,), (lambda g: g.T,))


def _linear(x, w, b):
    out = matmul(x, _t(w))
    return add(out, b)


def gru_cell(x_t, h_prev, p: GruParams):
    """One step of the standard GRU: sigmoid gates, tanh candidate.

    h' = (1 - z) * h_prev + z * h_cand, computed as h_prev + z * (h_cand - h_prev).
    """
    if x_t.shape[1] != p.input_size or h_prev.shape[1] != p.hidden_size:
        raise DimensionError(
            f"gru_cell: x {x_t.shape}, h {h_prev.shape} vs params "
            f"(d={p.input_size}, h={p.hidden_size})")
    z = sigmoid(add(_linear(x_t, p.w_z, p.b_z), matmul(h_prev, _t(p.u_z))))
    r = sigmoid(add(_linear(x_t, p.w_r, p.b_r), matmul(h_prev, _t(p.u_r))))
    h_cand = tanh(add(_linear(x_t, p.w_h, p.b_h), matmul(mul(r, h_prev), _t(p.u_h))))
    return add(h_prev, mul(z, sub(h_cand, h_prev)))


# ---------------------------------------------------------------------------
# parameter helpers


def glorot(rng, fan_out, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype),
                  requires_grad=True)


def zeros_param(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def constant(data, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype))
