"""Central-difference verification harnesses for every differentiable op.

Each entry builds a small random problem from a seeded stream, wraps the op
in a scalar objective (a randomly weighted sum, so gradients are not
uniform), and runs the finite-difference checker against the analytic
backward rule. Ops with kinks (relu, maxpool) get a resample hook so the
checker can redraw inputs that sit too close to a non-smooth point.

The "model" entry checks the whole network end to end on a tiny config at a
relaxed tolerance; everything else runs at the per-op tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .labeling import LabelConfig
from .model import ModelConfig, init_params, model_forward
from .rng import Stream
from .rram import RramConfig, rram_forward
from .tensor import GradCheckReport, Tensor, grad_check, parameter
from .training import cls_loss, reg_loss, total_loss

OP_TOL = 1e-4
MODEL_TOL = 1e-3


def _u(st: Stream, dims: tuple[int, ...], lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    return (st.uniform(int(np.prod(dims))) * (hi - lo) + lo).reshape(dims)


def _wsum(t: Tensor, weights: Tensor) -> Tensor:
    return T.sum_all(T.mul(t, weights))


def _check_conv2d(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (2, 6, 6)))
    k = parameter(_u(st, (3, 2, 3, 3)) * 0.5)
    b = parameter(_u(st, (3,)) * 0.5)
    r = Tensor(_u(st, (3, 6, 6)))

    def f() -> Tensor:
        return _wsum(T.conv2d(x, k, b, padding=1), r)

    return grad_check(f, {"x": x, "kernel": k, "bias": b}, tol=OP_TOL)


def _check_relu(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (4, 5, 5)))
    r = Tensor(_u(st, (4, 5, 5)))

    def resample() -> None:
        x.data = _u(st, (4, 5, 5))

    def f() -> Tensor:
        return _wsum(T.relu(x), r)

    return grad_check(f, {"x": x}, tol=OP_TOL, resample=resample)


def _check_sigmoid(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (3, 4, 4), -3.0, 3.0))
    r = Tensor(_u(st, (3, 4, 4)))

    def f() -> Tensor:
        return _wsum(T.sigmoid(x), r)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_maxpool2(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (2, 6, 6)))
    r = Tensor(_u(st, (2, 3, 3)))

    def resample() -> None:
        x.data = _u(st, (2, 6, 6))

    def f() -> Tensor:
        return _wsum(T.maxpool2(x), r)

    return grad_check(f, {"x": x}, tol=OP_TOL, resample=resample)


def _check_bilinear_resize(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (2, 5, 7)))
    r1 = Tensor(_u(st, (2, 8, 4)))
    r2 = Tensor(_u(st, (2, 5, 7)))

    def f() -> Tensor:
        resized = _wsum(T.bilinear_resize(x, 8, 4), r1)
        identity = _wsum(T.bilinear_resize(x, 5, 7), r2)
        return T.add(resized, identity)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_matmul(seed: int) -> GradCheckReport:
    st = Stream(seed)
    a = parameter(_u(st, (4, 3)))
    b = parameter(_u(st, (3, 5)))
    r = Tensor(_u(st, (4, 5)))

    def f() -> Tensor:
        return _wsum(T.matmul(a, b), r)

    return grad_check(f, {"a": a, "b": b}, tol=OP_TOL)


def _check_add(seed: int) -> GradCheckReport:
    st = Stream(seed)
    a = parameter(_u(st, (3, 4, 4)))
    b = parameter(_u(st, (3, 4, 4)))
    c = parameter(_u(st, (1, 4, 4)))
    r1 = Tensor(_u(st, (3, 4, 4)))
    r2 = Tensor(_u(st, (3, 4, 4)))

    def f() -> Tensor:
        same = _wsum(T.add(a, b), r1)
        broadcast = _wsum(T.add(a, c), r2)
        return T.add(same, broadcast)

    return grad_check(f, {"a": a, "b": b, "c": c}, tol=OP_TOL)


def _check_mul(seed: int) -> GradCheckReport:
    st = Stream(seed)
    a = parameter(_u(st, (3, 4, 4)))
    b = parameter(_u(st, (3, 4, 4)))
    c = parameter(_u(st, (1, 4, 4)))
    r1 = Tensor(_u(st, (3, 4, 4)))
    r2 = Tensor(_u(st, (3, 4, 4)))

    def f() -> Tensor:
        same = _wsum(T.mul(a, b), r1)
        broadcast = _wsum(T.mul(a, c), r2)
        return T.add(same, broadcast)

    return grad_check(f, {"a": a, "b": b, "c": c}, tol=OP_TOL)


def _check_scale(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (3, 3)))
    r = Tensor(_u(st, (3, 3)))

    def f() -> Tensor:
        return _wsum(T.scale(x, -1.7), r)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_global_average_pool(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (3, 6, 6)))
    r = Tensor(_u(st, (3,)))

    def f() -> Tensor:
        return _wsum(T.global_average_pool(x), r)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_softmax_rows(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (4, 6), -2.0, 2.0))
    r = Tensor(_u(st, (4, 6)))

    def f() -> Tensor:
        return _wsum(T.softmax_rows(x), r)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_reshape(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (2, 3, 4)))
    r = Tensor(_u(st, (4, 6)))

    def f() -> Tensor:
        return _wsum(T.reshape(x, (4, 6)), r)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_transpose2d(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (3, 5)))
    r = Tensor(_u(st, (5, 3)))

    def f() -> Tensor:
        return _wsum(T.transpose2d(x), r)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_sum_all(seed: int) -> GradCheckReport:
    st = Stream(seed)
    x = parameter(_u(st, (3, 4)))

    def f() -> Tensor:
        return T.sum_all(x)

    return grad_check(f, {"x": x}, tol=OP_TOL)


def _check_cross_entropy(seed: int) -> GradCheckReport:
    st = Stream(seed)
    logits = parameter(_u(st, (4, 5, 5), -2.0, 2.0))
    ids = (st.uniform(25).reshape(5, 5) * 4).astype(np.int64)

    def f() -> Tensor:
        return T.cross_entropy_logits(logits, ids, mode="mean")

    return grad_check(f, {"logits": logits}, tol=OP_TOL)


def _check_rram_block(seed: int) -> GradCheckReport:
    st = Stream(seed)
    cfg = RramConfig(nodes=3, dim=5, gcn_layers=2)
    x = parameter(_u(st, (3, 4, 4)) * 0.5)
    params = {
        "rram.theta.w": parameter(_u(st, (3, 3, 1, 1)) * 0.5),
        "rram.theta.b": parameter(_u(st, (3,)) * 0.5),
        "rram.phi.w": parameter(_u(st, (5, 3, 1, 1)) * 0.5),
        "rram.phi.b": parameter(_u(st, (5,)) * 0.5),
        "rram.adj": parameter(_u(st, (3, 3)) * 0.5),
        "rram.gcn0.w": parameter(_u(st, (5, 5)) * 0.5),
        "rram.gcn1.w": parameter(_u(st, (5, 5)) * 0.5),
        "rram.psi.w": parameter(_u(st, (3, 5, 1, 1)) * 0.5),
        "rram.psi.b": parameter(_u(st, (3,)) * 0.5),
    }
    r = Tensor(_u(st, (3, 4, 4)))

    def resample() -> None:
        x.data = _u(st, (3, 4, 4)) * 0.5

    def f() -> Tensor:
        return _wsum(rram_forward(x, params, cfg), r)

    checked = {"x": x, **params}
    return grad_check(f, checked, tol=OP_TOL, resample=resample)


_TINY_MODEL = ModelConfig(channels=(4, 4, 4), head_width=8,
                          rram_enabled=True,
                          rram=RramConfig(nodes=2, dim=4, gcn_layers=1),
                          label=LabelConfig(r=8),
                          init_scheme="fan_in")


def _jitter_biases(params: dict[str, Tensor], st: Stream) -> None:
    # zero biases put dead-region conv outputs exactly on the relu kink,
    # where the subgradient convention and a symmetric difference quotient
    # legitimately disagree; checking needs a differentiable point
    for name, t in params.items():
        if name.endswith(".b"):
            t.data = t.data + _u(st, t.dims) * 0.05


def _check_model(seed: int) -> GradCheckReport:
    """Whole network: reg + cls loss on random targets, relaxed tolerance."""
    st = Stream(seed)
    cfg = _TINY_MODEL
    draw = [0]  # bump to get fresh parameter draws on resample
    params = init_params(cfg, seed, in_channels=1)
    _jitter_biases(params, st)
    x = parameter(_u(st, (1, 32, 32)) * 0.5)
    hc = 32 // cfg.label.stride + 1
    target = np.floor(st.uniform(hc * hc).reshape(hc, hc) * 3.0)
    ids = (st.uniform(hc * hc).reshape(hc, hc) * cfg.n_classes).astype(np.int64)

    def resample() -> None:
        draw[0] += 1
        fresh = init_params(cfg, seed + 7919 * draw[0], in_channels=1)
        for name, t in params.items():
            t.data = fresh[name].data
        _jitter_biases(params, st)
        x.data = _u(st, (1, 32, 32)) * 0.5

    def f() -> Tensor:
        pred, logits = model_forward(x, params, cfg)
        reg = reg_loss(pred, target[None], mode="mean")
        cls = cls_loss(logits, ids, mode="mean")
        return total_loss(reg, cls, True)

    checked = {"x": x, **params}
    return grad_check(f, checked, tol=MODEL_TOL, resample=resample)


OP_CHECKS: list[tuple[str, Callable[[int], GradCheckReport]]] = [
    ("conv2d", _check_conv2d),
    ("relu", _check_relu),
    ("sigmoid", _check_sigmoid),
    ("maxpool2", _check_maxpool2),
    ("bilinear_resize", _check_bilinear_resize),
    ("matmul", _check_matmul),
    ("add", _check_add),
    ("mul", _check_mul),
    ("scale", _check_scale),
    ("global_average_pool", _check_global_average_pool),
    ("softmax_rows", _check_softmax_rows),
    ("reshape", _check_reshape),
    ("transpose2d", _check_transpose2d),
    ("sum_all", _check_sum_all),
    ("cross_entropy_logits", _check_cross_entropy),
    ("rram_block", _check_rram_block),
    ("model", _check_model),
]


@dataclass
class SuiteResult:
    op: str
    passed: bool
    max_rel_error: float
    tol: float
    seeds: int
    worst: GradCheckReport | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = ""
        if self.worst is not None and not self.passed:
            extra = f" worst={self.worst.worst_param}[{self.worst.worst_index}]"
        return (f"{self.op:<22} seeds={self.seeds} max_rel={self.max_rel_error:.3e} "
                f"tol={self.tol:.0e} {status}{extra}")


def run_suite(n_seeds: int = 10, base_seed: int = 0,
              ops: list[str] | None = None) -> list[SuiteResult]:
    """Run every op check over n_seeds seeds; one SuiteResult per op."""
    wanted = set(ops) if ops is not None else None
    results: list[SuiteResult] = []
    for name, check in OP_CHECKS:
        if wanted is not None and name not in wanted:
            continue
        worst: GradCheckReport | None = None
        max_rel = 0.0
        tol = MODEL_TOL if name == "model" else OP_TOL
        ok = True
        for si in range(n_seeds):
            report = check(base_seed + 1000003 * si + 17)
            if report.max_rel_error >= max_rel:
                max_rel = report.max_rel_error
                worst = report
            ok = ok and report.passed
        results.append(SuiteResult(op=name, passed=ok, max_rel_error=max_rel,
                                   tol=tol, seeds=n_seeds, worst=worst))
    return results
