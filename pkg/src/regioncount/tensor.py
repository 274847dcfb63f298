"""Minimal reverse-mode autodiff over numpy arrays.

Exactly the operators the counting pipeline needs, each with a hand-written
backward rule, plus a central-difference gradient checker. All internal
arithmetic is float64; float32 only ever appears at file boundaries. Tensor
data is treated as immutable once it enters a graph; optimizers replace the
array on parameter tensors rather than mutating shared storage.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

Array = np.ndarray


def _require_finite(arr: Array, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


@dataclass
class OpNode:
    """Records which op produced a tensor, from what inputs, and how to push
    an output gradient back to input gradients (None for non-differentiable
    inputs)."""

    kind: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[Array], tuple[Array | None, ...]]


class Tensor:
    """float64 array plus the bookkeeping reverse mode needs.

    requires_grad marks tensors whose accumulated gradient is kept in .grad
    after backward(). Tensors produced by ops on tracked inputs are tracked
    automatically; plain data tensors are constants.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: OpNode | None = None):
        arr = np.asarray(data, dtype=np.float64)
        _require_finite(arr, f"tensor data ({node.kind if node else 'leaf'})")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.node = node

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of dims {self.dims}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse pass from a scalar output.

        Gradients from every use of a tensor are summed, each contribution
        accumulated exactly once (reverse topological order). Accumulated
        gradients on requires_grad tensors must be finite.
        """
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar (size-1) output")
        order = _topo_order(self)
        pending: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad and t.node is None:
                # leaf parameter: keep the accumulated gradient
                _require_finite(g, "accumulated gradient")
                t.grad = g if t.grad is None else t.grad + g
            if t.node is None:
                continue
            for inp, ig in zip(t.node.inputs, t.node.backward(g)):
                if ig is None or not (inp.requires_grad or inp.node is not None):
                    continue
                acc = pending.get(id(inp))
                pending[id(inp)] = ig if acc is None else acc + ig

    def __repr__(self) -> str:
        tag = self.node.kind if self.node else ("param" if self.requires_grad else "const")
        return f"Tensor(dims={self.dims}, {tag})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                stack.append((inp, False))
    return order


def _make(kind: str, out: Array, inputs: Sequence[Tensor],
          backward: Callable[[Array], tuple[Array | None, ...]]) -> Tensor:
    if any(t.requires_grad for t in inputs):
        return Tensor(out, requires_grad=True, node=OpNode(kind, tuple(inputs), backward))
    return Tensor(out)


# ---------------------------------------------------------------------------
# kink monitoring (used by the gradient checker to avoid false alarms at the
# non-smooth points of relu / maxpool)

class KinkMonitor:
    """Tracks the smallest distance any relu/maxpool input came to its kink."""

    def __init__(self) -> None:
        self.min_margin = math.inf

    def note(self, margin: float) -> None:
        if margin < self.min_margin:
            self.min_margin = margin


_kink_watchers: list[KinkMonitor] = []


@contextlib.contextmanager
def watch_kinks() -> Iterator[KinkMonitor]:
    mon = KinkMonitor()
    _kink_watchers.append(mon)
    try:
        yield mon
    finally:
        _kink_watchers.remove(mon)


def _note_margin(margin: float) -> None:
    for mon in _kink_watchers:
        mon.note(margin)


# ---------------------------------------------------------------------------
# operators


def _im2col(padded: Array, k: int, oh: int, ow: int) -> Array:
    """Gather k*k patches: [cin, hp, wp] -> [cin*k*k, oh*ow]."""
    cin = padded.shape[0]
    cols = np.empty((cin, k, k, oh, ow), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = padded[:, di:di + oh, dj:dj + ow]
    return cols.reshape(cin * k * k, oh * ow)


def _col2im(dcols: Array, cin: int, k: int, oh: int, ow: int,
            hp: int, wp: int) -> Array:
    """Scatter-add transpose of _im2col: [cin*k*k, oh*ow] -> [cin, hp, wp]."""
    dpadded = np.zeros((cin, hp, wp), dtype=np.float64)
    dc = dcols.reshape(cin, k, k, oh, ow)
    for di in range(k):
        for dj in range(k):
            dpadded[:, di:di + oh, dj:dj + ow] += dc[:, di, dj]
    return dpadded


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """2-d cross-correlation, stride 1, square odd kernel, zero padding.

    x: [cin, h, w], kernel: [cout, cin, k, k], bias: [cout]
    -> [cout, h + 2*padding - k + 1, w + 2*padding - k + 1]
    """
    if x.data.ndim != 3:
        raise DimensionError(f"conv2d input must be 3-d, got {x.dims}")
    if kernel.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4-d, got {kernel.dims}")
    cout, cin, kh, kw = kernel.dims
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd side, got {kh}x{kw}")
    if cin != x.dims[0]:
        raise DimensionError(f"conv2d channel mismatch: input {x.dims[0]}, kernel {cin}")
    if bias.dims != (cout,):
        raise DimensionError(f"conv2d bias must have dims ({cout},), got {bias.dims}")
    if padding < 0:
        raise DimensionError("conv2d padding must be non-negative")
    _, h, w = x.dims
    oh = h + 2 * padding - kh + 1
    ow = w + 2 * padding - kw + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d output would be empty: input {h}x{w}, kernel {kh}, padding {padding}")

    if padding:
        padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    cols = _im2col(padded, kh, oh, ow)
    wflat = kernel.data.reshape(cout, cin * kh * kw)
    out = (wflat @ cols).reshape(cout, oh, ow) + bias.data[:, None, None]

    def bw(dout: Array) -> tuple[Array | None, ...]:
        dflat = dout.reshape(cout, oh * ow)
        dkernel = (dflat @ cols.T).reshape(kernel.dims)
        dbias = dout.sum(axis=(1, 2))
        dcols = wflat.T @ dflat
        dpadded = _col2im(dcols, cin, kh, oh, ow, padded.shape[1], padded.shape[2])
        if padding:
            dx = dpadded[:, padding:padding + h, padding:padding + w]
        else:
            dx = dpadded
        return dx, dkernel, dbias

    return _make("conv2d", out, (x, kernel, bias), bw)


def _relu_backward(x_data: Array, dout: Array) -> Array:
    # subgradient at exactly 0 is taken as 0
    return np.where(x_data > 0.0, dout, 0.0)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0)."""
    if _kink_watchers and x.data.size:
        _note_margin(float(np.abs(x.data).min()))
    out = np.maximum(x.data, 0.0)

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (_relu_backward(x.data, dout),)

    return _make("relu", out, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, computed in the overflow-free branch."""
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (dout * out * (1.0 - out),)

    return _make("sigmoid", out, (x,), bw)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 on [c, h, w]; h and w must be even.

    Ties route the full gradient to the first maximal position in row-major
    scan order within the window.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"maxpool2 input must be 3-d, got {x.dims}")
    c, h, w = x.dims
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = (x.data.reshape(c, h // 2, 2, w // 2, 2)
           .transpose(0, 1, 3, 2, 4)
           .reshape(c, h // 2, w // 2, 4))
    idx = win.argmax(axis=-1)  # argmax returns the first max: scan order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if _kink_watchers and win.size:
        # near-ties between distinct values are the kink hazard; exact ties
        # come from shared upstream values (constant or zeroed regions) and
        # move together under perturbation, so they do not count
        second = np.partition(win, 2, axis=-1)[..., 2]
        gap = out - second
        strict = gap[gap > 0.0]
        if strict.size:
            _note_margin(float(strict.min()))

    def bw(dout: Array) -> tuple[Array | None, ...]:
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dx = (dwin.reshape(c, h // 2, w // 2, 2, 2)
              .transpose(0, 1, 3, 2, 4)
              .reshape(c, h, w))
        return (dx,)

    return _make("maxpool2", out, (x,), bw)


_resize_matrix_cache: dict[tuple[int, int], Array] = {}


def _resize_matrix(src: int, dst: int) -> Array:
    """Row-interpolation matrix M [dst, src] for half-pixel bilinear resize.

    Sample coordinate for output i is u = (i + 0.5) * src / dst - 0.5,
    clamped to [0, src - 1], then linear between floor(u) and floor(u) + 1.
    """
    key = (src, dst)
    cached = _resize_matrix_cache.get(key)
    if cached is not None:
        return cached
    m = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        u = (i + 0.5) * scale - 0.5
        u = min(max(u, 0.0), float(src - 1))
        i0 = int(math.floor(u))
        if i0 >= src - 1:
            m[i, src - 1] = 1.0
        else:
            f = u - i0
            m[i, i0] = 1.0 - f
            m[i, i0 + 1] = f
    _resize_matrix_cache[key] = m
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize [c, h, w] to [c, out_h, out_w] with half-pixel bilinear sampling.

    Resizing to the same dims is an exact identity (bit-for-bit pass-through).
    """
    if x.data.ndim != 3:
        raise DimensionError(f"bilinear_resize input must be 3-d, got {x.dims}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize target must be positive, got {out_h}x{out_w}")
    c, h, w = x.dims
    if (out_h, out_w) == (h, w):
        out = x.data.copy()

        def bw_id(dout: Array) -> tuple[Array | None, ...]:
            return (dout,)

        return _make("bilinear_resize", out, (x,), bw_id)

    rows = _resize_matrix(h, out_h)        # [out_h, h]
    cols = _resize_matrix(w, out_w)        # [out_w, w]
    # out[c] = rows @ x[c] @ cols.T
    tmp = np.tensordot(rows, x.data, axes=([1], [1]))      # [out_h, c, w]
    out = np.tensordot(tmp, cols, axes=([2], [1]))          # [out_h, c, out_w]
    out = out.transpose(1, 0, 2)

    def bw(dout: Array) -> tuple[Array | None, ...]:
        # dx[c] = rows.T @ dout[c] @ cols
        t = np.tensordot(rows.T, dout, axes=([1], [1]))     # [h, c, out_w]
        dx = np.tensordot(t, cols.T, axes=([2], [1]))       # [h, c, w]
        return (dx.transpose(1, 0, 2),)

    return _make("bilinear_resize", out, (x,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-d matrix product [n, k] @ [k, m] -> [n, m]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.dims} and {b.dims}")
    if a.dims[1] != b.dims[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.dims} @ {b.dims}")
    out = a.data @ b.data

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return dout @ b.data.T, a.data.T @ dout

    return _make("matmul", out, (a, b), bw)


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> str:
    if a.dims == b.dims:
        return "same"
    # the single permitted broadcast: b a 1-channel map across a's channels
    if (len(a.dims) == 3 and len(b.dims) == 3 and b.dims[0] == 1
            and a.dims[1:] == b.dims[1:]):
        return "channel"
    raise DimensionError(f"{op}: dims {a.dims} and {b.dims} are not compatible")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a 1-channel [1, h, w] map broadcast across
    a's channel axis."""
    kind = _broadcast_kind(a, b, "add")
    out = a.data + b.data

    def bw(dout: Array) -> tuple[Array | None, ...]:
        db = dout if kind == "same" else dout.sum(axis=0, keepdims=True)
        return dout, db

    return _make("add", out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; same broadcast rule as add."""
    kind = _broadcast_kind(a, b, "mul")
    out = a.data * b.data

    def bw(dout: Array) -> tuple[Array | None, ...]:
        da = dout * b.data
        db = dout * a.data
        if kind == "channel":
            db = db.sum(axis=0, keepdims=True)
        return da, db

    return _make("mul", out, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python float constant."""
    cf = float(c)
    out = x.data * cf

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (dout * cf,)

    return _make("scale", out, (x,), bw)


def global_average_pool(x: Tensor) -> Tensor:
    """[c, h, w] -> [c], mean over the spatial axes."""
    if x.data.ndim != 3:
        raise DimensionError(f"global_average_pool input must be 3-d, got {x.dims}")
    _, h, w = x.dims
    out = x.data.mean(axis=(1, 2))

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (np.broadcast_to(dout[:, None, None] / (h * w), x.dims).copy(),)

    return _make("global_average_pool", out, (x,), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, max-subtracted for stability."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows input must be 2-d, got {x.dims}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(dout: Array) -> tuple[Array | None, ...]:
        inner = (dout * out).sum(axis=1, keepdims=True)
        return (out * (dout - inner),)

    return _make("softmax_rows", out, (x,), bw)


def reshape(x: Tensor, dims: tuple[int, ...]) -> Tensor:
    """View x with new dims; the element count must match."""
    dims = tuple(int(d) for d in dims)
    if math.prod(dims) != x.data.size:
        raise DimensionError(f"cannot reshape {x.dims} to {dims}")
    out = x.data.reshape(dims)

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (dout.reshape(x.dims),)

    return _make("reshape", out, (x,), bw)


def transpose2d(x: Tensor) -> Tensor:
    """Transpose of a 2-d tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"transpose2d input must be 2-d, got {x.dims}")
    out = x.data.T

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (dout.T,)

    return _make("transpose2d", out, (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    out = np.asarray(x.data.sum())

    def bw(dout: Array) -> tuple[Array | None, ...]:
        return (np.full(x.dims, float(dout)),)

    return _make("sum_all", out, (x,), bw)


def cross_entropy_logits(logits: Tensor, classes: Array, mode: str = "mean") -> Tensor:
    """Softmax cross-entropy between logits [C, h, w] and integer class ids
    [h, w]; fused for stability. mode 'mean' averages over cells, 'sum' adds.
    """
    if mode not in ("mean", "sum"):
        raise ValidationError(f"unknown cross-entropy mode {mode!r}")
    if logits.data.ndim != 3:
        raise DimensionError(f"cross_entropy_logits needs 3-d logits, got {logits.dims}")
    ids = np.asarray(classes)
    if ids.shape != logits.dims[1:]:
        raise DimensionError(
            f"class map dims {ids.shape} do not match logits {logits.dims[1:]}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValidationError("class ids must be integers")
    n_classes = logits.dims[0]
    if ids.min() < 0 or ids.max() >= n_classes:
        raise ValidationError(f"class ids must lie in [0, {n_classes})")

    z = logits.data
    zmax = z.max(axis=0)
    lse = np.log(np.exp(z - zmax).sum(axis=0)) + zmax
    picked = np.take_along_axis(z, ids[None], axis=0)[0]
    losses = lse - picked
    n_cells = losses.size
    out = np.asarray(losses.mean() if mode == "mean" else losses.sum())

    def bw(dout: Array) -> tuple[Array | None, ...]:
        # grad = softmax - onehot, without materializing the one-hot
        grad = np.exp(z - lse[None])
        rows, cols = np.indices(ids.shape)
        grad[ids, rows, cols] -= 1.0
        g = float(dout)
        if mode == "mean":
            g /= n_cells
        return (grad * g,)

    return _make("cross_entropy_logits", out, (logits,), bw)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Outcome of one central-difference check."""

    passed: bool
    max_rel_error: float
    tol: float
    eps: float
    n_checked: int
    worst_param: str = ""
    worst_index: int = -1
    analytic: float = 0.0
    numeric: float = 0.0
    kink_margin: float = math.inf
    resamples: int = 0
    eps_refinements: int = 0

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        loc = f" worst={self.worst_param}[{self.worst_index}]" if self.worst_param else ""
        return (f"{status} max_rel={self.max_rel_error:.3e} tol={self.tol:.0e}"
                f"{loc} analytic={self.analytic:.6e} numeric={self.numeric:.6e}")


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor],
               eps: float = 1e-5, tol: float = 1e-4,
               resample: Callable[[], None] | None = None,
               max_resamples: int = 8,
               margin_floor: float | None = None) -> GradCheckReport:
    """Compare analytic gradients of scalar f() against central differences.

    Every element of every tensor in params is perturbed by +-eps and the
    relative error |a - n| / max(|a|, |n|, 1e-8) is taken. f is re-evaluated
    from scratch for each perturbation, so it must be deterministic.

    If any relu/maxpool input sits closer than margin_floor to its kink,
    resample() is called to redraw inputs, up to max_resamples times. For
    graphs with many kinked cells the minimum margin is routinely tiny no
    matter the draw, so failing elements are additionally re-measured at
    smaller steps: a probe that crosses a kink at distance d picks up an
    error proportional to (1 - d/eps), which vanishes once eps drops below
    d, while a genuinely wrong gradient stays wrong at every step size.
    Evaluations that go non-finite raise NumericError naming the perturbed
    parameter.
    """
    if margin_floor is None:
        margin_floor = 10.0 * eps
    resamples = 0
    while True:
        with watch_kinks() as mon:
            out = f()
        if out.data.size != 1:
            raise DimensionError("grad_check target must be scalar")
        if mon.min_margin >= margin_floor or resample is None or resamples >= max_resamples:
            break
        resample()
        resamples += 1
    margin = mon.min_margin

    for p in params.values():
        p.grad = None
    out = f()
    out.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    def measure(p: Tensor, i: int, name: str, step: float) -> float:
        orig = p.data.flat[i]
        p.data.flat[i] = orig + step
        fp = f().item()
        p.data.flat[i] = orig - step
        fm = f().item()
        p.data.flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
        return (fp - fm) / (2.0 * step)

    report = GradCheckReport(passed=True, max_rel_error=0.0, tol=tol, eps=eps,
                             n_checked=0, kink_margin=margin, resamples=resamples)
    for name, p in params.items():
        flat_grad = analytic[name].reshape(-1)
        for i in range(p.data.size):
            a = float(flat_grad[i])
            numeric = measure(p, i, name, eps)
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > tol and margin < margin_floor:
                # plausible kink crossing: probe again with finer steps
                for shrink in (16.0, 256.0):
                    numeric2 = measure(p, i, name, eps / shrink)
                    rel2 = abs(a - numeric2) / max(abs(a), abs(numeric2), 1e-8)
                    if rel2 < rel:
                        rel, numeric = rel2, numeric2
                        report.eps_refinements += 1
                    if rel <= tol:
                        break
            report.n_checked += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = name
                report.worst_index = i
                report.analytic = a
                report.numeric = numeric
    report.passed = report.max_rel_error <= tol
    return report
