"""Adam optimizer and the polynomial learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Parameter


def poly_lr(epoch: int, max_epoch: int, base_lr: float, power: float) -> float:
    if not 0 <= epoch <= max_epoch:
        raise ContractError(
            f"epoch {epoch} outside [0, {max_epoch}]")
    return base_lr * (1.0 - epoch / max_epoch) ** power


class Adam:
    """Standard bias-corrected Adam; updates in place, deterministic.

    Parameters with grad None (never touched by the tape) are treated as
    zero-gradient: moments decay, values stay put on the first steps.
    """

    def __init__(self, params: list[Parameter], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError(
                    f"non-finite gradient for parameter {p.name or i!r}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)
