"""Minimal deterministic tensor library with reverse-mode automatic differentiation.

Everything is 32-bit float. Operations executed while a :class:`Tape` is
active are recorded in execution order; :func:`backward` replays the tape in
reverse to populate ``.grad`` on every tensor that requires gradients and
participates in the loss. There is no broadcasting beyond scalar-tensor
arithmetic, no GPU path and no graph optimization: the goal is a small,
auditable correctness surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .params import ParamSet

DTYPE = np.float32


class Tensor:
    """N-dimensional float32 array tracked by the active tape.

    ``data`` is a row-major numpy array. ``grad`` starts as ``None`` and is
    filled (or accumulated into) by :func:`backward`; callers zero it
    explicitly between steps via :func:`zero_grads`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are allowed on the right.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], None]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Execution order is a topological order of the graph, so a single reverse
    sweep propagates all gradients. ``backward_visits`` counts the entries
    touched by the most recent backward pass (used by tests to assert each
    recorded op is visited exactly once).
    """

    entries: list[TapeEntry] = field(default_factory=list)
    backward_visits: int = 0

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Tape] = []


def _record(op: str, inputs: Sequence[Tensor], output: Tensor,
            backward_fn: Callable[[np.ndarray], None]) -> None:
    if _TAPE_STACK:
        tape = _TAPE_STACK[-1]
        tape.entries.append(TapeEntry(op, tuple(inputs), output, backward_fn))
        output._tape = tape


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(DTYPE, copy=True)
    else:
        t.grad += g.astype(DTYPE, copy=False)


def _out(data: np.ndarray, *inputs: Tensor) -> Tensor:
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = DTYPE(b)
        out = _out(a.data + s, a)
        _record("add_scalar", (a,), out, lambda g: _accum(a, g))
        return out
    _check_same_shape("add", a, b)
    out = _out(a.data + b.data, a, b)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g)

    _record("add", (a, b), out, bwd)
    return out


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = DTYPE(b)
        out = _out(a.data - s, a)
        _record("sub_scalar", (a,), out, lambda g: _accum(a, g))
        return out
    _check_same_shape("sub", a, b)
    out = _out(a.data - b.data, a, b)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -g)

    _record("sub", (a, b), out, bwd)
    return out


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = DTYPE(b)
        out = _out(a.data * s, a)
        _record("mul_scalar", (a,), out, lambda g: _accum(a, g * s))
        return out
    _check_same_shape("mul", a, b)
    out = _out(a.data * b.data, a, b)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _record("mul", (a, b), out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = _out(np.maximum(x.data, DTYPE(0)), x)
    mask = (x.data > 0).astype(DTYPE)
    _record("relu", (x,), out, lambda g: _accum(x, g * mask))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _out(np.asarray(x.data.sum(), dtype=DTYPE), x)
    _record("sum_all", (x,), out,
            lambda g: _accum(x, np.full(x.shape, g.reshape(()), dtype=DTYPE)))
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = _out(np.asarray(x.data.mean(dtype=np.float64), dtype=DTYPE), x)
    _record("mean_all", (x,), out,
            lambda g: _accum(x, np.full(x.shape, g.reshape(()) / n, dtype=DTYPE)))
    return out


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    new = x.data.reshape(tuple(shape))
    out = _out(new.copy(), x)
    _record("reshape", (x,), out, lambda g: _accum(x, g.reshape(x.shape)))
    return out


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    if x.data.ndim < 2:
        raise ValueError(f"flatten expects at least 2 dims, got shape {x.shape}")
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = _out(np.ascontiguousarray(np.transpose(x.data, axes)), x)
    _record("transpose", (x,), out,
            lambda g: _accum(x, np.ascontiguousarray(np.transpose(g, inv))))
    return out


# ---------------------------------------------------------------------------
# gradient routing


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; contributes exactly zero gradient to ``x``.

    The input still appears on the tape so that after backward() its grad is
    populated with zeros rather than left missing.
    """
    out = Tensor(x.data.copy(), requires_grad=False)
    _record("stop_gradient", (x,), out, lambda g: None)
    return out


def straight_through(x: Tensor, value: np.ndarray) -> Tensor:
    """Forward the given value; route gradients unchanged back to ``x``.

    ``value`` must have the same shape as ``x``. The output holds an exact
    copy of ``value`` (no arithmetic), which is what makes quantized tensors
    bit-identical to their codebook rows.
    """
    value = np.asarray(value, dtype=DTYPE)
    if value.shape != x.shape:
        raise ValueError(f"straight_through: shape mismatch {x.shape} vs {value.shape}")
    out = _out(value.copy(), x)
    _record("straight_through", (x,), out, lambda g: _accum(x, g))
    return out


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows from a 2-D table; backward scatter-adds into the table."""
    if table.data.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D table, got shape {table.shape}")
    idx = np.asarray(indices)
    out = _out(table.data[idx], table)

    def bwd(g: np.ndarray) -> None:
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            _accum(table, acc)

    _record("gather_rows", (table,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# dense / convolution layers


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x [N,F] @ w [F,O] + b [O]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(f"linear expects 2-D x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: inner dims differ, x {x.shape} vs w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
    out = _out(x.data @ w.data + b.data, x, w, b)

    def bwd(g: np.ndarray) -> None:
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    _record("linear", (x, w, b), out, bwd)
    return out


def _conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for p in range(kh):
        for q in range(kw):
            cols[:, :, p, q] = x[:, :, p:p + stride * oh:stride, q:q + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int,
            stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for p in range(kh):
        for q in range(kw):
            xp[:, :, p:p + stride * oh:stride, q:q + stride * ow:stride] += cols[:, :, p, q]
    if pad:
        return xp[:, :, pad:h + pad, pad:w + pad]
    return xp


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n = x.shape[0]
    o, c, kh, kw = w.shape
    oh = _conv_out_dim(x.shape[2], kh, stride, pad)
    ow = _conv_out_dim(x.shape[3], kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    out = np.matmul(w.reshape(o, c * kh * kw), cols)
    return out.reshape(n, o, oh, ow)


def _conv_input_grad(dy: np.ndarray, w: np.ndarray, x_shape: tuple[int, ...],
                     stride: int, pad: int) -> np.ndarray:
    o, c, kh, kw = w.shape
    n = dy.shape[0]
    dy_mat = dy.reshape(n, o, -1)
    dcols = np.matmul(w.reshape(o, c * kh * kw).T, dy_mat)
    return _col2im(dcols, x_shape, kh, kw, stride, pad)


def _conv_kernel_grad(x: np.ndarray, dy: np.ndarray, w_shape: tuple[int, ...],
                      stride: int, pad: int) -> np.ndarray:
    o, c, kh, kw = w_shape
    n = dy.shape[0]
    cols = _im2col(x, kh, kw, stride, pad)
    dy_mat = dy.reshape(n, o, -1)
    dw = np.einsum("nop,nkp->ok", dy_mat, cols)
    return dw.reshape(w_shape)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-D cross-correlation. x is NCHW, w is OIHW."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input channels {x.shape[1]} != kernel channels {w.shape[1]}")
    oh = _conv_out_dim(x.shape[2], w.shape[2], stride, padding)
    ow = _conv_out_dim(x.shape[3], w.shape[3], stride, padding)
    if oh <= 0 or ow <= 0:
        raise ValueError(
            f"conv2d: non-positive output size {oh}x{ow} for input {x.shape}, "
            f"kernel {w.shape}, stride {stride}, padding {padding}")
    out = _out(_conv_forward(x.data, w.data, stride, padding), x, w)

    def bwd(g: np.ndarray) -> None:
        _accum(x, _conv_input_grad(g, w.data, x.data.shape, stride, padding))
        _accum(w, _conv_kernel_grad(x.data, g, w.data.shape, stride, padding))

    _record("conv2d", (x, w), out, bwd)
    return out


def transposed_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d (fractionally-strided convolution).

    Weight layout is (in_channels, out_channels, kh, kw). Output spatial size
    is (H - 1) * stride - 2 * padding + k.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"transposed_conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"transposed_conv2d: input channels {x.shape[1]} != kernel in-channels {w.shape[0]}")
    n = x.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    oh = (x.shape[2] - 1) * stride - 2 * padding + kh
    ow = (x.shape[3] - 1) * stride - 2 * padding + kw
    if oh <= 0 or ow <= 0:
        raise ValueError(
            f"transposed_conv2d: non-positive output size {oh}x{ow} for input {x.shape}")
    out_shape = (n, w.shape[1], oh, ow)
    out = _out(_conv_input_grad(x.data, w.data, out_shape, stride, padding), x, w)

    def bwd(g: np.ndarray) -> None:
        _accum(x, _conv_forward(g, w.data, stride, padding))
        _accum(w, _conv_kernel_grad(g, x.data, w.data.shape, stride, padding))

    _record("transposed_conv2d", (x, w), out, bwd)
    return out


def channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to an NCHW tensor."""
    if x.data.ndim != 4 or b.shape != (x.shape[1],):
        raise ValueError(f"channel_bias: bias shape {b.shape} does not match channels of {x.shape}")
    out = _out(x.data + b.data[None, :, None, None], x, b)

    def bwd(g: np.ndarray) -> None:
        _accum(x, g)
        _accum(b, g.sum(axis=(0, 2, 3)))

    _record("channel_bias", (x, b), out, bwd)
    return out


def mean_pool_hw(x: Tensor) -> Tensor:
    """Global average pool over the spatial axes: NCHW -> NC."""
    if x.data.ndim != 4:
        raise ValueError(f"mean_pool_hw expects a 4-D tensor, got shape {x.shape}")
    n, c, h, w = x.shape
    area = h * w
    out = _out(x.data.mean(axis=(2, 3)), x)

    def bwd(g: np.ndarray) -> None:
        _accum(x, np.broadcast_to(g[:, :, None, None] / DTYPE(area), x.shape))

    _record("mean_pool_hw", (x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# losses


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences; differentiable in both arguments."""
    _check_same_shape("mse", a, b)
    diff = a.data - b.data
    n = diff.size
    out = _out(np.asarray(np.mean(diff.astype(np.float64) ** 2), dtype=DTYPE), a, b)

    def bwd(g: np.ndarray) -> None:
        scale = g.reshape(()) * DTYPE(2.0 / n)
        _accum(a, diff * scale)
        _accum(b, -diff * scale)

    _record("mse", (a, b), out, bwd)
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Numerically stabilized by row-max subtraction. Labels must lie in
    [0, num_classes).
    """
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects 2-D logits, got shape {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))
    out = _out(np.asarray(nll.mean(dtype=np.float64), dtype=DTYPE), logits)

    def bwd(g: np.ndarray) -> None:
        grad = probs.copy()
        grad[np.arange(n), labels] -= DTYPE(1)
        _accum(logits, grad * (g.reshape(()) / DTYPE(n)))

    _record("softmax_cross_entropy", (logits,), out, bwd)
    return out


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Stable softmax on a raw [N, C] array (forward only)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# backward pass and SGD


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad ancestor of a scalar loss.

    Non-leaf grads are recomputed from scratch on every call; leaf (parameter)
    grads accumulate across calls until the caller zeroes them, which is the
    contract the training loop relies on.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: loss was not recorded on an active Tape")
    # Clear intermediate grads so repeated backward calls stay additive on leaves.
    for entry in tape.entries:
        entry.output.grad = None
    loss.grad = np.ones_like(loss.data)
    visits = 0
    for entry in reversed(tape.entries):
        visits += 1
        g = entry.output.grad
        if g is None:
            continue
        entry.backward_fn(g)
    tape.backward_visits = visits
    # Tensors that feed the tape but received nothing (e.g. behind
    # stop_gradient) end with an explicit zero grad.
    for entry in tape.entries:
        for t in entry.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


@dataclass
class SgdState:
    """Momentum-SGD state: one velocity buffer per named parameter."""

    learning_rate: float
    momentum: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: "ParamSet", state: SgdState) -> None:
    """v <- momentum * v + g; w <- w - lr * v, in place over all parameters."""
    lr = DTYPE(state.learning_rate)
    mom = DTYPE(state.momentum)
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"sgd_step: parameter '{name}' has no gradient")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(t.data)
            state.velocity[name] = v
        v *= mom
        v += t.grad
        t.data -= lr * v
