"""scikit-learn style facade over the training and inference pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .caseio import REGIONS, Case
from .config import NetworkConfig, TrainConfig
from .errors import DimensionError
from .evaluate import hard_dice, predict_labels, subset_to_mask
from .train import train_cases


class MultimodalSegmenter(BaseEstimator):
    """Multimodal volumetric segmenter with missing-modality support.

    fit expects X of shape (n, modalities, D, H, W) and integer labels y of
    shape (n, D, H, W); predict runs sliding-window inference and accepts an
    optional modality subset so inputs may go missing at test time. All
    constructor arguments are stored verbatim per the estimator contract.
    """

    def __init__(self, modalities: int = 4, classes: int = 4, stages: int = 4,
                 base_channels: int = 4, appearance_dim: int = 8,
                 patch: int = 32, leaky_slope: float = 0.01,
                 dropout_prob: float = 0.5, fusion_mode: str = "gated",
                 disentangle: bool = True, learning_rate: float = 1e-4,
                 max_epoch: int = 10, poly_power: float = 0.9,
                 lam: float = 0.1, beta: float = 0.1, seed: int = 0):
        self.modalities = modalities
        self.classes = classes
        self.stages = stages
        self.base_channels = base_channels
        self.appearance_dim = appearance_dim
        self.patch = patch
        self.leaky_slope = leaky_slope
        self.dropout_prob = dropout_prob
        self.fusion_mode = fusion_mode
        self.disentangle = disentangle
        self.learning_rate = learning_rate
        self.max_epoch = max_epoch
        self.poly_power = poly_power
        self.lam = lam
        self.beta = beta
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        network = NetworkConfig(
            modalities=self.modalities, classes=self.classes,
            stages=self.stages, base_channels=self.base_channels,
            appearance_dim=self.appearance_dim, patch=self.patch,
            leaky_slope=self.leaky_slope, dropout_prob=self.dropout_prob,
            fusion_mode=self.fusion_mode, disentangle=self.disentangle)
        return TrainConfig(
            learning_rate=self.learning_rate, max_epoch=self.max_epoch,
            poly_power=self.poly_power, lam=self.lam, beta=self.beta,
            seed=self.seed, network=network).validate()

    def _as_cases(self, X, y=None, brain_mask=None) -> list[Case]:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 5 or X.shape[1] != self.modalities:
            raise DimensionError(
                f"X must be (n, {self.modalities}, D, H, W), got {X.shape}")
        n = X.shape[0]
        if y is None:
            y = np.zeros((n,) + X.shape[2:], dtype=np.uint8)
        else:
            y = np.asarray(y)
            if y.shape != (n,) + X.shape[2:]:
                raise DimensionError(
                    f"y must be {(n,) + X.shape[2:]}, got {y.shape}")
            y = y.astype(np.uint8)
        if brain_mask is None:
            brain_mask = np.ones((n,) + X.shape[2:], dtype=bool)
        else:
            brain_mask = np.asarray(brain_mask, dtype=bool)
        return [
            Case(id=f"array-{i}", volumes=X[i], labels=y[i],
                 brain_mask=brain_mask[i], classes=self.classes).validate()
            for i in range(n)
        ]

    def fit(self, X, y, brain_mask=None) -> "MultimodalSegmenter":
        cfg = self._train_config()
        cases = self._as_cases(X, y, brain_mask)
        result = train_cases(cfg, cases, out_dir=None)
        self.net_ = result.net
        self.n_iter_ = result.iterations
        self.final_loss_ = float(result.log_rows[-1].rsplit(",", 1)[-1])
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "This MultimodalSegmenter instance is not fitted yet. "
                "Call 'fit' before using this estimator.")

    def predict(self, X, modalities=None, brain_mask=None) -> np.ndarray:
        self._check_fitted()
        cases = self._as_cases(X, None, brain_mask)
        subset = (tuple(range(self.modalities)) if modalities is None
                  else tuple(sorted(set(modalities))))
        delta = subset_to_mask(subset, self.modalities)
        return np.stack([predict_labels(self.net_, c, delta) for c in cases])

    def score(self, X, y, brain_mask=None) -> float:
        """Mean complete-region hard Dice over the samples."""
        pred = self.predict(X, brain_mask=brain_mask)
        y = np.asarray(y).astype(np.uint8)
        complete = REGIONS[0]
        return float(np.mean([
            hard_dice(pred[i], y[i], complete) for i in range(len(pred))
        ]))
