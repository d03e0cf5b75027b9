"""Training objectives: weighted Dice + cross-entropy, KL prior, L1 cycle.

The Dice term uses probabilities in place of hard one-hot predictions so it
stays differentiable; hard Dice lives in evaluate as the metric. The L1
reconstruction term averages over voxels so its weight is patch-size
independent, and it covers every modality including dropped ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .model import AppearanceCode

EPS_DICE = 1e-7
LOG_FLOOR = 1e-8


@dataclass
class LossBreakdown:
    seg: T.Tensor
    rec: T.Tensor
    kl: T.Tensor
    total: T.Tensor
    per_class_dice_terms: list[float]
    class_weights: np.ndarray


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= classes:
        raise ContractError(
            f"labels must lie in [0,{classes}), got range "
            f"[{labels.min()},{labels.max()}]")
    out = np.zeros((classes,) + labels.shape, dtype=np.float32)
    for k in range(classes):
        out[k] = labels == k
    return out


def class_weights_online(onehot: np.ndarray | T.Tensor) -> np.ndarray:
    """Inverse-frequency weights, absent classes capped, renormalized to K."""
    y = onehot.data if isinstance(onehot, T.Tensor) else np.asarray(onehot)
    k = y.shape[0]
    flat = y.reshape(k, -1).astype(np.float64)
    n = flat.shape[1]
    if n < 1:
        raise ContractError("class_weights_online needs at least one voxel")
    counts = flat.sum(axis=1)
    raw = n / (k * np.maximum(counts, 1.0))
    present = counts > 0
    if present.any() and not present.all():
        cap = 50.0 * raw[present].min()
        raw = np.where(present, raw, np.minimum(raw, cap))
    return (raw * (k / raw.sum())).astype(np.float64)


def _seg_terms(probs: T.Tensor, onehot: np.ndarray, weights: np.ndarray,
               eps: float = EPS_DICE):
    y = np.asarray(onehot)
    if probs.shape != y.shape:
        raise DimensionError(
            f"probs {probs.shape} and one-hot labels {y.shape} disagree")
    k = probs.shape[0]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,):
        raise DimensionError(f"weights must have shape ({k},), got {weights.shape}")
    if (weights < 0).any():
        raise ContractError("class weights must be non-negative")

    dice_terms: list[T.Tensor] = []
    ce_terms: list[T.Tensor] = []
    for c in range(k):
        q = T.narrow(probs, 0, c, 1)
        yk = y[c:c + 1]
        num = T.tsum(q * yk) * 2.0
        den = T.tsum(q * q) + (float((yk * yk).sum()) + eps)
        dice_terms.append(num / den)
        if weights[c] > 0:
            logq = T.tlog(T.clamp_min(q, LOG_FLOOR))
            ce_terms.append(T.tsum(logq * yk) * float(weights[c]))
    acc = dice_terms[0]
    for t in dice_terms[1:]:
        acc = acc + t
    for t in ce_terms:
        acc = acc + t
    loss = -acc
    return loss, [float(t.data) for t in dice_terms]


def seg_loss(probs: T.Tensor, onehot: np.ndarray, weights: np.ndarray,
             eps: float = EPS_DICE) -> T.Tensor:
    loss, _ = _seg_terms(probs, onehot, weights, eps)
    return loss


def kl_loss(codes: list[AppearanceCode]) -> T.Tensor:
    """Sum over modalities of D_KL(N(mu, diag exp(log_var)) || N(0, I))."""
    total = None
    for code in codes:
        term = T.tsum(code.mu * code.mu + T.texp(code.log_var)
                      - 1.0 - code.log_var) * 0.5
        total = term if total is None else total + term
    if total is None:
        raise ContractError("kl_loss needs at least one appearance code")
    return total


def rec_loss(reconstructions: list[T.Tensor], originals) -> T.Tensor:
    if len(reconstructions) != len(originals):
        raise DimensionError(
            f"{len(reconstructions)} reconstructions vs {len(originals)} originals")
    total = None
    for xhat, x in zip(reconstructions, originals):
        xt = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))
        if xt.ndim == 3:
            xt = T.Tensor(xt.data[None])
        if xhat.shape != xt.shape:
            raise DimensionError(
                f"reconstruction {xhat.shape} vs original {xt.shape}")
        term = T.tmean(T.tabs(xhat - xt))
        total = term if total is None else total + term
    return total


def total_loss(seg: T.Tensor, rec: T.Tensor, kl: T.Tensor,
               lam: float = 0.1, beta: float = 0.1) -> T.Tensor:
    return seg + lam * rec + beta * kl


def compute_loss_breakdown(output, originals, onehot: np.ndarray,
                           lam: float = 0.1, beta: float = 0.1,
                           eps: float = EPS_DICE) -> LossBreakdown:
    """Assemble every objective for one forward pass.

    output is a model ForwardOutput; originals are the M input volumes the
    reconstructions are compared against (the same normalized patches that
    were fed in, dropped ones included).
    """
    weights = class_weights_online(onehot)
    seg, dice_terms = _seg_terms(output.probs, onehot, weights, eps)
    if output.reconstructions is not None:
        rec = rec_loss(output.reconstructions, originals)
        kl = kl_loss(output.appearance)
    else:
        rec = T.Tensor(np.float32(0.0))
        kl = T.Tensor(np.float32(0.0))
    total = total_loss(seg, rec, kl, lam, beta)
    return LossBreakdown(seg=seg, rec=rec, kl=kl, total=total,
                         per_class_dice_terms=dice_terms, class_weights=weights)
