"""Dense tensors with reverse-mode automatic differentiation.

Layout convention is channel-first: volumes are [C, D, H, W], vectors are
[C], losses are 0-d scalars. Gradients are recorded on an explicit Tape;
operations executed while no tape is active run in inference mode and build
no graph. A tape and the tensors created under it form a single-threaded
unit; finished tensors are immutable and may be shared read-only.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (ContractError, DegenerateInputError, DimensionError,
                     NumericError)

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


_finite_checks = False


def set_finite_checks(enabled: bool) -> None:
    """Globally toggle per-op output finiteness validation (debug mode)."""
    global _finite_checks
    _finite_checks = enabled


class finite_checks:
    """Context manager enabling finiteness validation of every op output."""

    def __enter__(self):
        global _finite_checks
        self._prev = _finite_checks
        set_finite_checks(True)
        return self

    def __exit__(self, *exc):
        set_finite_checks(self._prev)
        return False


class Tensor:
    """N-dimensional real array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; all graph building happens in the module functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable tensor; modules assemble its unique dotted path name."""

    __slots__ = ("name",)

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = ""


@dataclass
class Node:
    """One recorded operation: inputs precede it on the tape by construction."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], None]


@dataclass
class Tape:
    """Ordered record of operations for one forward pass.

    Creation order is topological (define-by-run), so one reversed sweep
    visits every node exactly once. Repeated backward() calls accumulate
    into existing grads; callers reset grads between steps.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1 or loss.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced under this tape")
        # op outputs are per-sweep scratch; only leaf grads persist, so a
        # repeated call adds exactly one more gradient into the leaves
        for node in self.nodes:
            node.output.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            node.backward_fn(g)
        # inputs that never received a contribution still expose zero grads
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite output of op '{op}'")
    tape = active_tape()
    out = Tensor(out_data)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(Node(op, inputs, out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (have, want) in enumerate(zip(g.shape, shape)):
        if have != want:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _record("add", (a, b), out, bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _record("sub", (a, b), out, bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _record("mul", (a, b), out, bwd)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    out = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record("div", (a, b), out, bwd)


def texp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * y)

    return _record("exp", (x,), y, bwd)


def tlog(x: Tensor) -> Tensor:
    y = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g / x.data)

    return _record("log", (x,), y, bwd)


def tsqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * 0.5 / y)

    return _record("sqrt", (x,), y, bwd)


def tabs(x: Tensor) -> Tensor:
    y = np.abs(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * np.sign(x.data))

    return _record("abs", (x,), y, bwd)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x >= floor."""
    y = np.maximum(x.data, floor)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data >= floor))

    return _record("clamp_min", (x,), y, bwd)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.data.shape).copy())
            return
        if not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            g = np.expand_dims(g, axes)
        x.accumulate_grad(np.broadcast_to(g, x.data.shape).copy())

    return _record("sum", (x,), np.asarray(y), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape {x.shape} -> {shape} changes element count")
    y = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.data.shape))

    return _record("reshape", (x,), y, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into zeros."""
    if not 0 <= axis < x.ndim:
        raise DimensionError(f"narrow axis {axis} out of range for shape {x.shape}")
    if start < 0 or length < 1 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}] exceeds axis {axis} of shape {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    y = x.data[idx].copy()

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[idx] = g
            x.accumulate_grad(full)

    return _record("narrow", (x,), y, bwd)


# ---------------------------------------------------------------------------
# activations


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    y = np.where(x.data >= 0, x.data, slope * x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * np.where(x.data >= 0, 1.0, slope).astype(x.dtype))

    return _record("leaky_relu", (x,), y, bwd)


def _sigmoid_forward(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sigmoid_input_grad(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * y * (1.0 - y)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_forward(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(_sigmoid_input_grad(y, g))

    return _record("sigmoid", (x,), y, bwd)


def softmax_channels(x: Tensor) -> Tensor:
    """Per-position distribution over axis 0, computed with max subtraction."""
    if x.shape[0] < 2:
        raise DimensionError("softmax_channels needs at least 2 channels")
    m = x.data.max(axis=0, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=0, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=0, keepdims=True)
            x.accumulate_grad(y * (g - dot))

    return _record("softmax_channels", (x,), y, bwd)


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ContractError("concat_channels needs at least one tensor")
    spatial = xs[0].shape[1:]
    for t in xs[1:]:
        if t.shape[1:] != spatial:
            raise DimensionError(
                f"concat_channels spatial mismatch: {t.shape[1:]} vs {spatial}")
    y = np.concatenate([t.data for t in xs], axis=0)
    sizes = [t.shape[0] for t in xs]

    def bwd(g):
        start = 0
        for t, c in zip(xs, sizes):
            if t.requires_grad:
                t.accumulate_grad(g[start:start + c])
            start += c

    return _record("concat_channels", tuple(xs), y, bwd)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor doubling of all three spatial axes."""
    c, d, h, w = x.shape
    y = np.broadcast_to(
        x.data[:, :, None, :, None, :, None], (c, d, 2, h, 2, w, 2)
    ).reshape(c, 2 * d, 2 * h, 2 * w).copy()

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(c, d, 2, h, 2, w, 2).sum(axis=(2, 4, 6)))

    return _record("upsample2x", (x,), y, bwd)


def avg_pool2x(x: Tensor) -> Tensor:
    """Non-overlapping 2x2x2 spatial mean; inverse of upsample2x."""
    c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise DimensionError(f"avg_pool2x needs even spatial extents, got {x.shape}")
    y = x.data.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).mean(axis=(2, 4, 6))

    def bwd(g):
        if x.requires_grad:
            gexp = np.broadcast_to(
                (g / 8.0)[:, :, None, :, None, :, None],
                (c, d // 2, 2, h // 2, 2, w // 2, 2),
            ).reshape(c, d, h, w).copy()
            x.accumulate_grad(gexp)

    return _record("avg_pool2x", (x,), y, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    c = x.shape[0]
    n = int(np.prod(x.shape[1:]))
    y = x.data.reshape(c, n).mean(axis=1)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(
                np.broadcast_to((g / n).reshape((c,) + (1,) * (x.ndim - 1)), x.shape).copy())

    return _record("global_avg_pool", (x,), y, bwd)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 1 or weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise DimensionError(
            f"fully_connected shapes: x {x.shape}, weight {weight.shape}")
    y = weight.data @ x.data + bias.data

    def bwd(g):
        if weight.requires_grad:
            weight.accumulate_grad(np.outer(g, x.data))
        if bias.requires_grad:
            bias.accumulate_grad(g)
        if x.requires_grad:
            x.accumulate_grad(weight.data.T @ g)

    return _record("fully_connected", (x, weight, bias), y, bwd)


# ---------------------------------------------------------------------------
# convolution and normalization


def _conv_out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """3-D cross-correlation over [Cin,D,H,W] with an [Cout,Cin,k,k,k] kernel."""
    if stride not in (1, 2):
        raise ContractError(f"conv3d stride must be 1 or 2, got {stride}")
    cin, d, h, w = x.shape
    cout, wcin, k, k2, k3 = weight.shape
    if k != k2 or k != k3 or k % 2 == 0:
        raise DimensionError(f"conv3d kernel must be cubic with odd edge, got {weight.shape}")
    if wcin != cin:
        raise DimensionError(f"conv3d channel mismatch: input {cin} vs weight {wcin}")
    od, oh, ow = (_conv_out_extent(n, k, stride, padding) for n in (d, h, w))
    if od < 1 or oh < 1 or ow < 1:
        raise DimensionError(
            f"conv3d output would be empty for input {x.shape}, kernel {k}, "
            f"stride {stride}, padding {padding}")

    if k == 1 and padding == 0 and stride == 1:
        return _conv3d_1x1(x, weight, bias)

    def im2col() -> np.ndarray:
        xp = np.pad(x.data, ((0, 0), (padding,) * 2, (padding,) * 2, (padding,) * 2)) \
            if padding else x.data
        win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
        win = win[:, ::stride, ::stride, ::stride]
        # [Cin,Do,Ho,Wo,k,k,k] -> [N, Cin*k^3]
        return np.ascontiguousarray(np.moveaxis(win, 0, 3)).reshape(od * oh * ow, cin * k ** 3)

    wmat = weight.data.reshape(cout, cin * k ** 3)
    out = im2col() @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.moveaxis(out.reshape(od, oh, ow, cout), 3, 0).copy()

    def bwd(g):
        # the col matrix is rebuilt here rather than kept alive in the
        # closure; it is the largest buffer in the whole network
        gmat = np.moveaxis(g, 0, 3).reshape(od * oh * ow, cout)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=0))
        if weight.requires_grad:
            weight.accumulate_grad((gmat.T @ im2col()).reshape(weight.shape))
        if x.requires_grad:
            gcols = gmat @ wmat  # [N, Cin*k^3]
            gcols = gcols.reshape(od, oh, ow, cin, k, k, k)
            gxp = np.zeros((cin, d + 2 * padding, h + 2 * padding, w + 2 * padding),
                           dtype=x.dtype)
            for a in range(k):
                for b in range(k):
                    for c in range(k):
                        gxp[:,
                            a:a + (od - 1) * stride + 1:stride,
                            b:b + (oh - 1) * stride + 1:stride,
                            c:c + (ow - 1) * stride + 1:stride] += \
                            np.moveaxis(gcols[..., a, b, c], 3, 0)
            if padding:
                gxp = gxp[:, padding:padding + d, padding:padding + h, padding:padding + w]
            x.accumulate_grad(gxp)

    ins = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv3d", ins, out, bwd)


def _conv3d_1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    cin = x.shape[0]
    cout = weight.shape[0]
    spatial = x.shape[1:]
    n = int(np.prod(spatial))
    xmat = x.data.reshape(cin, n)
    wmat = weight.data.reshape(cout, cin)
    out = wmat @ xmat
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((cout,) + spatial)

    def bwd(g):
        gmat = g.reshape(cout, n)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=1))
        if weight.requires_grad:
            weight.accumulate_grad((gmat @ xmat.T).reshape(weight.shape))
        if x.requires_grad:
            x.accumulate_grad((wmat.T @ gmat).reshape(x.shape))

    ins = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv3d", ins, out, bwd)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel spatial standardization of one instance, then affine."""
    c = x.shape[0]
    n = int(np.prod(x.shape[1:]))
    if n < 2:
        raise DegenerateInputError(
            f"instance_norm needs >= 2 spatial voxels per channel, got {x.shape}")
    axes = tuple(range(1, x.ndim))
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    gshape = (c,) + (1,) * (x.ndim - 1)
    out = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)

    def bwd(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes).reshape(beta.shape))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes).reshape(gamma.shape))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(gshape)
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            x.accumulate_grad(inv_std / n * (n * dxhat - s1 - xhat * s2))

    return _record("instance_norm", (x, gamma, beta), out, bwd)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_input: list[float]
    worst_input: int
    worst_element: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


@dataclass
class ParamGradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    n_negligible: int
    worst_param: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def param_grad_check(f: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]],
                     rng: np.random.Generator,
                     eps_ladder: Sequence[float] = (1e-4, 1e-5, 1e-6),
                     tol: float = 1e-3) -> ParamGradCheckReport:
    """FD-check df/dp per parameter along its own analytic gradient direction.

    For each parameter the whole tensor is perturbed along v = g/|g|, so the
    analytic directional derivative is |g| and the central difference must
    agree iff the analytic gradient is exactly the true one (Cauchy-Schwarz
    equality). The ladder of step sizes lets each parameter be measured at a
    step small enough to avoid activation-kink crossings but large enough to
    stay above cancellation noise; a parameter passes if any rung agrees to
    tol. Parameters whose directional derivative sits below the cancellation
    floor |f|*ulp/(2*eps) on every rung are counted as negligible when the FD
    values sit below the same floor, and fail otherwise. f takes no arguments
    and must be deterministic across calls (fix any noise outside).
    """
    with Tape() as tape:
        loss = f()
    if loss.ndim != 0:
        raise ContractError("param_grad_check needs a scalar-valued function")
    for _, p in params:
        p.grad = None
    tape.backward(loss)

    f_scale = abs(loss.item())
    ulp = float(np.finfo(loss.dtype).eps)

    def floor(eps: float) -> float:
        # central difference of two ~f_scale values: rounding swamps anything
        # smaller, with headroom for long-reduction error growth
        return 8.0 * max(f_scale, 1.0) * ulp / (2.0 * eps)

    max_rel = 0.0
    worst = ""
    n_checked = 0
    n_negligible = 0
    for name, p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        norm = float(np.linalg.norm(g))
        if norm > 0.0:
            v = g / norm
        else:
            v = rng.standard_normal(p.data.shape).astype(p.dtype)
            v /= np.linalg.norm(v)
        ga = norm

        orig = p.data.copy()
        best_rel = math.inf
        fds = []
        for eps in eps_ladder:
            p.data = orig + eps * v
            hi = f().item()
            p.data = orig - eps * v
            lo = f().item()
            p.data = orig
            fd = (hi - lo) / (2 * eps)
            fds.append((eps, fd))
            rel = abs(ga - fd) / max(abs(ga), abs(fd), 1e-8)
            best_rel = min(best_rel, rel)
            # keep descending past a bare pass: a kink-grazed rung can sit
            # just under tol while a smaller step is near exact
            if rel <= 0.3 * tol:
                break
        n_checked += 1
        if best_rel > tol:
            if ga <= floor(min(eps_ladder)) and \
                    all(abs(fd) <= floor(eps) for eps, fd in fds):
                n_negligible += 1
                continue
        if best_rel > max_rel:
            max_rel = best_rel
            worst = name
    return ParamGradCheckReport(max_rel_error=max_rel, tol=tol,
                                n_checked=n_checked, n_negligible=n_negligible,
                                worst_param=worst)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-4, tol: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of scalar f(*inputs) with central differences.

    The finite-difference side re-runs f without a tape, so it is independent
    of every backward rule it checks. Relative error per element is
    |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
    """
    for t in inputs:
        if not np.all(np.isfinite(t.data)):
            raise NumericError("grad_check inputs must be finite")
    if not any(t.requires_grad for t in inputs):
        raise ContractError("grad_check needs at least one input with requires_grad")
    with finite_checks(), Tape() as tape:
        loss = f(*inputs)
    if loss.ndim != 0:
        raise ContractError("grad_check needs a scalar-valued function")
    for t in inputs:
        t.grad = None
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    per_input: list[float] = []
    worst = (0.0, 0, 0)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f(*inputs).item()
            flat[j] = orig - eps
            lo = f(*inputs).item()
            flat[j] = orig
            fd[j] = (hi - lo) / (2 * eps)
        ga = analytic[i].reshape(-1)
        rel = np.abs(ga - fd) / np.maximum(np.maximum(np.abs(ga), np.abs(fd)), 1e-8)
        per_input.append(float(rel.max()) if rel.size else 0.0)
        if rel.size and per_input[-1] > worst[0]:
            worst = (per_input[-1], i, int(rel.argmax()))
    return GradCheckReport(
        max_rel_error=worst[0], tol=tol, per_input=per_input,
        worst_input=worst[1], worst_element=worst[2])
