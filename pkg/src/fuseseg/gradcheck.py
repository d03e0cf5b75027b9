"""Finite-difference validation of every op, every loss, and the full model.

All checks run in double precision on small tensors. Inputs for kinked ops
(leaky_relu, abs, clamp_min) are kept away from the kink so the central
difference is meaningful at eps 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import NetworkConfig
from .losses import (class_weights_online, kl_loss, one_hot, rec_loss,
                     seg_loss, compute_loss_breakdown)
from .model import AppearanceCode, ModalityMask, Network


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _t(rng: np.random.Generator, shape, away_from_zero: float = 0.0) -> T.Tensor:
    x = rng.standard_normal(shape)
    if away_from_zero > 0:
        x = np.where(np.abs(x) < away_from_zero,
            np.sign(x) * away_from_zero + x, x)
    return T.Tensor(x, requires_grad=True, dtype=np.float64)


def _proj(rng: np.random.Generator, shape) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape), dtype=np.float64)


def op_checks(seed: int = 0, tol: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def run(name, f, *inputs):
        rep = T.grad_check(f, inputs, eps=1e-4, tol=tol)
        results.append(CheckResult(name, rep.max_rel_error, tol))

    x = _t(rng, (2, 4, 4, 4))
    w = _t(rng, (3, 2, 3, 3, 3))
    b = _t(rng, (3,))
    p = _proj(rng, (3, 4, 4, 4))
    run("conv3d stride1", lambda x, w, b: T.tsum(T.conv3d(x, w, b, 1, 1) * p),
        x, w, b)

    x = _t(rng, (2, 5, 5, 5))
    w = _t(rng, (3, 2, 3, 3, 3))
    b = _t(rng, (3,))
    p = _proj(rng, (3, 3, 3, 3))
    run("conv3d stride2", lambda x, w, b: T.tsum(T.conv3d(x, w, b, 2, 1) * p),
        x, w, b)

    x = _t(rng, (3, 3, 3, 3))
    w = _t(rng, (4, 3, 1, 1, 1))
    b = _t(rng, (4,))
    p = _proj(rng, (4, 3, 3, 3))
    run("conv3d 1x1x1", lambda x, w, b: T.tsum(T.conv3d(x, w, b, 1, 0) * p),
        x, w, b)

    x = _t(rng, (3, 3, 4, 4))
    g = _t(rng, (3,))
    be = _t(rng, (3,))
    p = _proj(rng, (3, 3, 4, 4))
    run("instance_norm",
        lambda x, g, be: T.tsum(T.instance_norm(x, g, be) * p), x, g, be)

    x = _t(rng, (4, 3, 3, 3), away_from_zero=0.05)
    p = _proj(rng, (4, 3, 3, 3))
    run("leaky_relu", lambda x: T.tsum(T.leaky_relu(x, 0.01) * p), x)

    x = _t(rng, (4, 3, 3, 3))
    run("sigmoid", lambda x: T.tsum(T.sigmoid(x) * p), x)

    x = _t(rng, (4, 3, 3, 3))
    run("softmax_channels", lambda x: T.tsum(T.softmax_channels(x) * p), x)

    x = _t(rng, (2, 3, 3, 3))
    p2 = _proj(rng, (2, 6, 6, 6))
    run("upsample2x", lambda x: T.tsum(T.upsample2x(x) * p2), x)

    x = _t(rng, (2, 4, 4, 4))
    p3 = _proj(rng, (2, 2, 2, 2))
    run("avg_pool2x", lambda x: T.tsum(T.avg_pool2x(x) * p3), x)

    x = _t(rng, (3, 4, 4, 4))
    p4 = _proj(rng, (3,))
    run("global_avg_pool", lambda x: T.tsum(T.global_avg_pool(x) * p4), x)

    x = _t(rng, (6,))
    w = _t(rng, (4, 6))
    b = _t(rng, (4,))
    p5 = _proj(rng, (4,))
    run("fully_connected",
        lambda x, w, b: T.tsum(T.fully_connected(x, w, b) * p5), x, w, b)

    a = _t(rng, (2, 3, 3, 3))
    c = _t(rng, (3, 3, 3, 3))
    p6 = _proj(rng, (5, 3, 3, 3))
    run("concat_channels",
        lambda a, c: T.tsum(T.concat_channels([a, c]) * p6), a, c)

    x = _t(rng, (6, 2, 2, 2))
    p7 = _proj(rng, (2, 2, 2, 2))
    run("narrow", lambda x: T.tsum(T.narrow(x, 0, 2, 2) * p7), x)

    a = _t(rng, (3, 4))
    c = _t(rng, (4,))
    p8 = _proj(rng, (3, 4))
    run("add broadcast", lambda a, c: T.tsum((a + c) * p8), a, c)
    a = _t(rng, (3, 4))
    c = _t(rng, (4,), away_from_zero=0.3)
    run("mul broadcast", lambda a, c: T.tsum((a * c) * p8), a, c)
    run("div broadcast", lambda a, c: T.tsum(T.div(a, c) * p8), a, c)
    run("sub broadcast", lambda a, c: T.tsum(T.sub(a, c) * p8), a, c)

    x = _t(rng, (4, 5))
    p9 = _proj(rng, (4, 1))
    run("sum axis", lambda x: T.tsum(T.tsum(x, axis=1, keepdims=True) * p9), x)
    run("mean axis", lambda x: T.tsum(T.tmean(x, axis=1, keepdims=True) * p9), x)

    x = _t(rng, (3, 4), away_from_zero=0.05)
    p10 = _proj(rng, (3, 4))
    run("abs", lambda x: T.tsum(T.tabs(x) * p10), x)
    x = _t(rng, (3, 4))
    run("exp", lambda x: T.tsum(T.texp(x) * p10), x)
    x = T.Tensor(np.random.default_rng(seed + 1).uniform(0.2, 2.0, (3, 4)),
                 requires_grad=True, dtype=np.float64)
    run("log", lambda x: T.tsum(T.tlog(x) * p10), x)
    run("sqrt", lambda x: T.tsum(T.tsqrt(x) * p10), x)
    x = _t(rng, (3, 4))
    x.data = np.where(np.abs(x.data - 0.5) < 0.05, x.data + 0.1, x.data)
    run("clamp_min", lambda x: T.tsum(T.clamp_min(x, 0.5) * p10), x)
    x = _t(rng, (3, 4))
    p11 = _proj(rng, (12,))
    run("reshape", lambda x: T.tsum(T.reshape(x, (12,)) * p11), x)

    return results


def loss_checks(seed: int = 0, tol: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def run(name, f, *inputs):
        rep = T.grad_check(f, inputs, eps=1e-4, tol=tol)
        results.append(CheckResult(name, rep.max_rel_error, tol))

    k, n = 3, 4
    labels = rng.integers(0, k, (n, n))
    y = one_hot(labels, k).astype(np.float64)
    w = class_weights_online(y)
    logits = _t(rng, (k, n, n))
    run("seg_loss (via softmax)",
        lambda lg: seg_loss(T.softmax_channels(lg), y, w), logits)

    target = rng.standard_normal((1, 3, 3, 3))
    xhat = T.Tensor(target + np.sign(rng.standard_normal(target.shape)) * 0.3,
                    requires_grad=True, dtype=np.float64)
    run("rec_loss", lambda xh: rec_loss([xh], [target]), xhat)

    mu = _t(rng, (8,))
    lv = _t(rng, (8,))
    run("kl_loss",
        lambda mu, lv: kl_loss([AppearanceCode(mu, lv, mu)]), mu, lv)

    return results


def end_to_end_check(seed: int = 0, tol: float = 1e-3) -> CheckResult:
    """Directional FD check of d L_total / d theta on the tiny double model.

    Every parameter is measured along its own analytic gradient direction,
    which by Cauchy-Schwarz agrees with the central difference iff the
    analytic gradient is the true one.
    """
    rng = np.random.default_rng(seed)
    cfg = NetworkConfig(modalities=4, classes=4, stages=4, base_channels=2,
                        appearance_dim=8, patch=16)
    net = Network(cfg, rng=rng).set_dtype(np.float64)
    vols = [T.Tensor(rng.standard_normal((1, 16, 16, 16)), dtype=np.float64)
            for _ in range(4)]
    labels = rng.integers(0, 4, (16, 16, 16))
    onehot = one_hot(labels, 4).astype(np.float64)
    noise = rng.standard_normal((4, 8))
    delta = ModalityMask((True, True, True, True))

    def f():
        out = net.forward_full(vols, delta, training=True, noise=noise)
        bd = compute_loss_breakdown(out, vols, onehot, 0.1, 0.1)
        return bd.total

    rep = T.param_grad_check(f, list(net.named_parameters()), rng, tol=tol)
    return CheckResult("end-to-end L_total", rep.max_rel_error, tol)


def run_all(seed: int = 0, tol: float = 1e-5
            ) -> tuple[list[CheckResult], bool]:
    results = op_checks(seed, tol) + loss_checks(seed, tol)
    results.append(end_to_end_check(seed, tol=max(tol, 1e-3)))
    return results, all(r.passed for r in results)
