"""Dense 2-D tensor engine with reverse-mode differentiation.

Provides exactly the primitives the assembly-graph model needs: matrix
multiplication, concatenation, the activation zoo, batch normalization,
row softmax, an LSTM cell step, gather/scatter over rows, and the
weighted cross-entropy objective. No general broadcasting, no views,
CPU only. Storage defaults to float32; the same code runs in float64
for gradient checks.

Gradients are recorded on an explicit :class:`Tape`. Primitives append
their backward closures in execution order, which is already a
topological order, so ``Tape.backward`` is a single reverse sweep that
visits each recorded value exactly once.
"""

from __future__ import annotations

import json
import math
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_DTYPE = np.float32

PROB_FLOOR = 1e-12  # clamp applied before log / after softmax


class Tensor:
    """A dense (rows, cols) matrix with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        t = Tensor(self.data, requires_grad=self.requires_grad, dtype=self.data.dtype)
        return t

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_TAPES = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TAPES, "stack", None)
    if stack is None:
        stack = []
        _TAPES.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Execution-ordered record of primitive applications.

    Use as a context manager around a forward pass; call
    :meth:`backward` on the scalar output afterwards. A tape and its
    tensors belong to one thread; independent tapes may run
    concurrently.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, callable]] = []
        self._tracked: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def tracks(self, *tensors) -> bool:
        """True if any argument participates in the recorded graph."""
        for t in tensors:
            if isinstance(t, Tensor) and (t.requires_grad or id(t) in self._tracked):
                return True
        return False

    def record(self, out: Tensor, backward_fn):
        self._tracked.add(id(out))
        self._ops.append((out, backward_fn))

    def accumulate(self, t: Tensor, grad: np.ndarray):
        """Add ``grad`` into ``t.grad`` if ``t`` is part of the graph."""
        if not (t.requires_grad or id(t) in self._tracked):
            return
        if grad.shape != t.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != tensor shape {t.data.shape}")
        if t.grad is None:
            t.grad = grad.astype(t.data.dtype, copy=True)
        else:
            t.grad += grad

    def backward(self, loss: Tensor):
        """Reverse sweep from a scalar loss; visits each node once."""
        if loss.data.size != 1:
            raise ShapeError("backward() expects a scalar (1, 1) loss")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._ops):
            if out.grad is None:
                continue
            backward_fn(out.grad)


def _result(value: np.ndarray, *inputs) -> tuple[Tensor, "Tape | None"]:
    out = Tensor(value, dtype=value.dtype)
    tape = active_tape()
    if tape is not None and tape.tracks(*inputs):
        return out, tape
    return out, None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out, tape = _result(a.data @ b.data, a, b)
    if tape:
        def backward(g):
            tape.accumulate(a, g @ b.data.T)
            tape.accumulate(b, a.data.T @ g)
        tape.record(out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a (1, cols) row vector (bias)."""
    if a.shape == b.shape:
        broadcast = False
    elif b.shape == (1, a.shape[1]):
        broadcast = True
    else:
        raise ShapeError(f"add: {a.shape} + {b.shape}")
    out, tape = _result(a.data + b.data, a, b)
    if tape:
        def backward(g):
            tape.accumulate(a, g)
            tape.accumulate(b, g.sum(axis=0, keepdims=True) if broadcast else g)
        tape.record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} * {b.shape}")
    out, tape = _result(a.data * b.data, a, b)
    if tape:
        def backward(g):
            tape.accumulate(a, g * b.data)
            tape.accumulate(b, g * a.data)
        tape.record(out, backward)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar constant."""
    out, tape = _result(a.data * a.data.dtype.type(s), a)
    if tape:
        def backward(g):
            tape.accumulate(a, g * a.data.dtype.type(s))
        tape.record(out, backward)
    return out


def scale_rows(a: Tensor, col: np.ndarray) -> Tensor:
    """Multiply row i by constant ``col[i]``; ``col`` has shape (rows, 1)."""
    col = np.asarray(col, dtype=a.data.dtype).reshape(-1, 1)
    if col.shape[0] != a.shape[0]:
        raise ShapeError(f"scale_rows: {a.shape} rows vs {col.shape[0]} factors")
    out, tape = _result(a.data * col, a)
    if tape:
        def backward(g):
            tape.accumulate(a, g * col)
        tape.record(out, backward)
    return out


def concat_cols(*tensors: Tensor) -> Tensor:
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols: row mismatch {[t.shape for t in tensors]}")
    out, tape = _result(np.concatenate([t.data for t in tensors], axis=1), *tensors)
    if tape:
        widths = [t.shape[1] for t in tensors]
        def backward(g):
            start = 0
            for t, w in zip(tensors, widths):
                tape.accumulate(t, g[:, start:start + w])
                start += w
        tape.record(out, backward)
    return out


def concat_rows(*tensors: Tensor) -> Tensor:
    cols = tensors[0].shape[1]
    for t in tensors:
        if t.shape[1] != cols:
            raise ShapeError(f"concat_rows: col mismatch {[t.shape for t in tensors]}")
    out, tape = _result(np.concatenate([t.data for t in tensors], axis=0), *tensors)
    if tape:
        heights = [t.shape[0] for t in tensors]
        def backward(g):
            start = 0
            for t, h in zip(tensors, heights):
                tape.accumulate(t, g[start:start + h, :])
                start += h
        tape.record(out, backward)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] on {a.shape}")
    out, tape = _result(a.data[:, start:stop].copy(), a)
    if tape:
        def backward(g):
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            tape.accumulate(a, full)
        tape.record(out, backward)
    return out


def relu(a: Tensor) -> Tensor:
    out, tape = _result(np.maximum(a.data, 0), a)
    if tape:
        mask = a.data > 0
        def backward(g):
            tape.accumulate(a, g * mask)
        tape.record(out, backward)
    return out


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    out, tape = _result(np.where(a.data > 0, a.data, a.data * a.data.dtype.type(alpha)), a)
    if tape:
        slope = np.where(a.data > 0, a.data.dtype.type(1), a.data.dtype.type(alpha))
        def backward(g):
            tape.accumulate(a, g * slope)
        tape.record(out, backward)
    return out


def prelu(a: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with one learned slope shared across the matrix; alpha is (1, 1)."""
    if alpha.shape != (1, 1):
        raise ShapeError(f"prelu: alpha must be (1, 1), got {alpha.shape}")
    neg = np.minimum(a.data, 0)
    out, tape = _result(np.maximum(a.data, 0) + alpha.data * neg, a, alpha)
    if tape:
        def backward(g):
            tape.accumulate(a, g * np.where(a.data > 0, a.data.dtype.type(1), alpha.data[0, 0]))
            tape.accumulate(alpha, np.array([[(g * neg).sum()]], dtype=a.data.dtype))
        tape.record(out, backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # split by sign for numerical stability
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = s.astype(x.dtype)
    out, tape = _result(s, a)
    if tape:
        def backward(g):
            tape.accumulate(a, g * s * (1 - s))
        tape.record(out, backward)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out, tape = _result(t, a)
    if tape:
        def backward(g):
            tape.accumulate(a, g * (1 - t * t))
        tape.record(out, backward)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax. Output rows sum to 1; entries are clamped to
    stay strictly positive even when the exponentials underflow."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p = np.maximum(p, a.data.dtype.type(PROB_FLOOR))
    out, tape = _result(p, a)
    if tape:
        def backward(g):
            inner = (g * p).sum(axis=1, keepdims=True)
            tape.accumulate(a, p * (g - inner))
        tape.record(out, backward)
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows, producing a (1, cols) tensor."""
    out, tape = _result(a.data.mean(axis=0, keepdims=True), a)
    if tape:
        n = a.shape[0]
        def backward(g):
            tape.accumulate(a, np.repeat(g / n, n, axis=0))
        tape.record(out, backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a (1, 1) tensor."""
    out, tape = _result(a.data.sum(dtype=a.data.dtype).reshape(1, 1), a)
    if tape:
        def backward(g):
            tape.accumulate(a, np.full_like(a.data, g[0, 0]))
        tape.record(out, backward)
    return out


def index_select_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows: out[i] = a[index[i]]."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("index_select_rows: index must be 1-D")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError("index_select_rows: index out of range")
    out, tape = _result(a.data[index], a)
    if tape:
        def backward(g):
            acc = np.zeros(a.data.shape, dtype=np.float64)
            np.add.at(acc, index, g.astype(np.float64))
            tape.accumulate(a, acc.astype(a.data.dtype))
        tape.record(out, backward)
    return out


def scatter_add_rows(a: Tensor, index: np.ndarray, num_rows: int) -> Tensor:
    """Scatter-sum rows: out[j] = sum of a[i] over i with index[i] == j.

    Accumulation runs in float64 so the result is independent of row
    order for inputs of ordinary magnitude.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or index.size != a.shape[0]:
        raise ShapeError("scatter_add_rows: index length must equal row count")
    if index.size and (index.min() < 0 or index.max() >= num_rows):
        raise ShapeError("scatter_add_rows: index out of range")
    acc = np.zeros((num_rows, a.shape[1]), dtype=np.float64)
    np.add.at(acc, index, a.data.astype(np.float64))
    out, tape = _result(acc.astype(a.data.dtype), a)
    if tape:
        def backward(g):
            tape.accumulate(a, g[index])
        tape.record(out, backward)
    return out


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (not learned)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, width: int, dtype=DEFAULT_DTYPE) -> "BatchNormState":
        return cls(np.zeros((1, width), dtype=dtype), np.ones((1, width), dtype=dtype))


def batch_norm(a: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool) -> Tensor:
    """Column-wise batch normalization with learned affine parameters.

    Training mode normalizes by batch statistics (biased variance) and
    updates the running buffers in place; eval mode is a deterministic
    affine map using the frozen buffers.
    """
    if gamma.shape != (1, a.shape[1]) or beta.shape != (1, a.shape[1]):
        raise ShapeError("batch_norm: affine parameters must be (1, cols)")
    eps = a.data.dtype.type(state.eps)
    if training:
        mu = a.data.mean(axis=0, keepdims=True)
        var = a.data.var(axis=0, keepdims=True)
        # in place: the buffers are views of persistent parameter storage
        state.running_mean += state.momentum * (mu - state.running_mean)
        state.running_var += state.momentum * (var - state.running_var)
    else:
        mu = state.running_mean.astype(a.data.dtype)
        var = state.running_var.astype(a.data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv_std
    out, tape = _result(gamma.data * xhat + beta.data, a, gamma, beta)
    if tape:
        n = a.shape[0]
        def backward(g):
            tape.accumulate(gamma, (g * xhat).sum(axis=0, keepdims=True))
            tape.accumulate(beta, g.sum(axis=0, keepdims=True))
            if training:
                gxhat = g * gamma.data
                dx = (inv_std / n) * (n * gxhat
                                      - gxhat.sum(axis=0, keepdims=True)
                                      - xhat * (gxhat * xhat).sum(axis=0, keepdims=True))
                tape.accumulate(a, dx.astype(a.data.dtype))
            else:
                tape.accumulate(a, (g * gamma.data * inv_std).astype(a.data.dtype))
        tape.record(out, backward)
    return out


def lstm_cell_step(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor,
                   bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell step over a row batch; gate order is [i, f, g, o].

    Composed from finer primitives so its backward pass falls out of
    the tape; the finite-difference suite still checks it end to end.
    """
    hidden = h.shape[1]
    if w_ih.shape != (x.shape[1], 4 * hidden) or w_hh.shape != (hidden, 4 * hidden):
        raise ShapeError("lstm_cell_step: weight shapes inconsistent with hidden width")
    gates = add(add(matmul(x, w_ih), matmul(h, w_hh)), bias)
    i = sigmoid(slice_cols(gates, 0, hidden))
    f = sigmoid(slice_cols(gates, hidden, 2 * hidden))
    g = tanh(slice_cols(gates, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def weighted_cross_entropy(probs: Tensor, y: np.ndarray, weights: np.ndarray,
                           mask: np.ndarray | None = None) -> Tensor:
    """Class-weighted cross entropy over masked rows of a probability matrix.

    loss = sum_i w[y_i] * (-log p_i[y_i]) / sum_i w[y_i], the sum running
    over rows selected by ``mask``. Probabilities are clamped at 1e-12
    before the log.
    """
    y = np.asarray(y, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    n, n_classes = probs.shape
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} vs {n} rows")
    if weights.shape != (n_classes,):
        raise ShapeError(f"weights shape {weights.shape} vs {n_classes} classes")
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape} vs {n} rows")
    if not mask.any():
        raise ConfigError("weighted_cross_entropy: mask selects no rows")

    rows = np.flatnonzero(mask)
    picked = np.maximum(probs.data[rows, y[rows]].astype(np.float64), PROB_FLOOR)
    w = weights[y[rows]]
    w_total = w.sum()
    value = float((w * -np.log(picked)).sum() / w_total)
    out, tape = _result(np.array([[value]], dtype=probs.data.dtype), probs)
    if tape:
        def backward(g):
            dp = np.zeros(probs.data.shape, dtype=np.float64)
            dp[rows, y[rows]] = -w / picked / w_total
            tape.accumulate(probs, (dp * float(g[0, 0])).astype(probs.data.dtype))
        tape.record(out, backward)
    return out


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adam moment buffers plus step count; one instance per model."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: OptimizerState, lr: float | None = None):
    """Apply one Adam update to every trainable parameter with a gradient."""
    state.step_count += 1
    t = state.step_count
    lr = state.lr if lr is None else lr
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad.astype(np.float32)
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine annealing from base_lr at epoch 0 to 0 at ``total_epochs``."""
    if total_epochs <= 0:
        raise ConfigError("cosine_lr: total_epochs must be positive")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


def zero_grads(params: dict):
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# parameter serialization
# ---------------------------------------------------------------------------

_MAGIC = b"MGRF"


def save_params(path, params: dict, header_extra: dict | None = None):
    """Write parameters as little-endian float32 with a JSON header.

    Layout: 4-byte magic, u64 little-endian header length, UTF-8 JSON
    header, then the concatenated tensor payload. Round trips exactly.
    """
    names = sorted(params)
    tensors = {}
    blobs = []
    offset = 0
    for name in names:
        p = params[name]
        raw = np.ascontiguousarray(p.data.astype("<f4")).tobytes()
        tensors[name] = {
            "shape": list(p.shape),
            "offset": offset,
            "trainable": bool(p.requires_grad),
        }
        blobs.append(raw)
        offset += len(raw)
    header = {"format": 1, "tensors": tensors}
    if header_extra:
        header.update(header_extra)
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for raw in blobs:
            fh.write(raw)


def load_params(path) -> tuple[dict, dict]:
    """Read a parameter file; returns (params, full header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ConfigError(f"{path}: not a parameter file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blob = fh.read()
    params = {}
    for name, spec in header["tensors"].items():
        rows, cols = spec["shape"]
        count = rows * cols
        start = spec["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(rows, cols)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=spec["trainable"])
    return params, header
