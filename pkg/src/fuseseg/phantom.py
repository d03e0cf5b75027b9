"""Synthetic multimodal phantom: ellipsoidal brain, nested tumor shells,
per-modality intensity rendering with bias field and noise.

The default intensity table makes FLAIR and T2 most contrastive for edema
and T1c most contrastive for the enhancing shell, while every modality keeps
some tumor/brain contrast so single-modality segmentation stays learnable.
A per-case, per-tissue intensity jitter survives the affine normalization,
which is what gives the appearance codes something real to encode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .caseio import Case
from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError

# rows: FLAIR, T1, T1c, T2; columns: air, brain, edema, core, enhancing
DEFAULT_INTENSITY = np.array([
    [0.05, 0.45, 0.95, 0.75, 0.65],
    [0.05, 0.70, 0.45, 0.35, 0.40],
    [0.05, 0.55, 0.75, 0.35, 1.00],
    [0.05, 0.40, 0.90, 0.70, 0.60],
], dtype=np.float64)


@dataclass
class PhantomConfig:
    extents: tuple[int, int, int] = (48, 48, 48)
    modalities: int = 4
    classes: int = 4
    tumor_count: tuple[int, int] = (1, 2)
    tumor_radius: tuple[float, float] | None = None  # default: scaled to extents
    intensity: np.ndarray | None = None
    bias_strength: float = 0.2
    noise_sigma: float = 0.03
    jitter: float = 0.1

    def validate(self) -> "PhantomConfig":
        if any(e < 8 for e in self.extents):
            raise ConfigError(f"extents too small: {self.extents}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        lo, hi = self.tumor_count
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad tumor_count range {self.tumor_count}")
        if self.tumor_radius is None:
            small = min(self.extents)
            self.tumor_radius = (small / 6.0, small / 4.0)
        rlo, rhi = self.tumor_radius
        if not 0 < rlo <= rhi:
            raise ConfigError(f"bad tumor_radius range {self.tumor_radius}")
        if rhi > min(self.extents) / 2:
            raise ConfigError(
                f"tumor radius {rhi} exceeds half the smallest extent")
        if self.intensity is None:
            if (self.modalities, self.classes) != (4, 4):
                raise ConfigError(
                    "default intensity table covers M=4, K=4 only; pass an "
                    f"explicit M x (K+1) table for M={self.modalities}, "
                    f"K={self.classes}")
            self.intensity = DEFAULT_INTENSITY.copy()
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.intensity.shape != (self.modalities, self.classes + 1):
            raise ConfigError(
                f"intensity table must be {self.modalities} x "
                f"{self.classes + 1}, got {self.intensity.shape}")
        if not np.all(np.isfinite(self.intensity)):
            raise ConfigError("intensity table must be finite")
        if not 0 <= self.bias_strength < 1:
            raise ConfigError(f"bias_strength must be in [0,1), got "
                              f"{self.bias_strength}")
        return self


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q


def _bias_field(rng: np.random.Generator, extents, strength: float) -> np.ndarray:
    """Low-frequency multiplicative field from a 3x3x3 trilinear control grid."""
    control = rng.uniform(1.0 - strength, 1.0 + strength, (3, 3, 3))
    if strength == 0:
        return np.ones(extents)
    pts = [np.linspace(0, e - 1, 3) for e in extents]
    interp = RegularGridInterpolator(pts, control, method="linear")
    grid = np.stack(np.meshgrid(*[np.arange(e) for e in extents],
                                indexing="ij"), axis=-1)
    return interp(grid.reshape(-1, 3)).reshape(extents)


def synth_case(config: PhantomConfig, seed: int) -> Case:
    cfg = config.validate()
    rng = np.random.default_rng(seed)
    d, h, w = cfg.extents
    ext = np.array([d, h, w], dtype=np.float64)
    coords = np.stack(np.meshgrid(np.arange(d), np.arange(h), np.arange(w),
                                  indexing="ij"), axis=-1).astype(np.float64)

    brain_center = ext / 2 + rng.uniform(-0.04, 0.04, 3) * ext
    brain_semi = ext * rng.uniform(0.33, 0.42, 3)
    brain_q = (((coords - brain_center) / brain_semi) ** 2).sum(axis=-1)
    brain_mask = brain_q <= 1.0

    labels = np.zeros((d, h, w), dtype=np.uint8)
    # tumor centers restricted to the inner 60% of the brain radius so the
    # shells are not mostly clipped away at the brain boundary
    candidates = np.argwhere(brain_q <= 0.36)
    fracs = np.linspace(1.0, 0.35, cfg.classes - 1)
    n_tumors = int(rng.integers(cfg.tumor_count[0], cfg.tumor_count[1] + 1))
    for _ in range(n_tumors):
        center = candidates[rng.integers(len(candidates))].astype(np.float64)
        outer = rng.uniform(*cfg.tumor_radius)
        axes = outer * rng.uniform(0.7, 1.3, 3)
        rot = _random_rotation(rng)
        u = (coords - center) @ rot.T
        q = ((u / axes) ** 2).sum(axis=-1)
        for label, frac in enumerate(fracs, start=1):
            inside = (q <= frac * frac) & brain_mask
            labels[inside] = np.maximum(labels[inside], label)

    jitter = 1.0 + cfg.jitter * rng.uniform(-1.0, 1.0,
                                            (cfg.modalities, cfg.classes + 1))
    eff = cfg.intensity * jitter
    tissue = np.where(brain_mask, labels.astype(np.intp) + 1, 0)
    volumes = np.empty((cfg.modalities, d, h, w), dtype=np.float32)
    for m in range(cfg.modalities):
        base = eff[m][tissue]
        bias = _bias_field(rng, cfg.extents, cfg.bias_strength)
        noise = rng.normal(0.0, cfg.noise_sigma, (d, h, w))
        volumes[m] = (base * bias + noise).astype(np.float32)

    case = Case(id=f"phantom-{seed:08d}", volumes=volumes, labels=labels,
                brain_mask=brain_mask, classes=cfg.classes)
    return case.validate()


def normalize(volume: np.ndarray, brain_mask: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance within the mask; exact zeros outside."""
    if volume.shape != brain_mask.shape:
        raise DimensionError(
            f"volume {volume.shape} vs mask {brain_mask.shape}")
    vals = volume[brain_mask]
    if vals.size < 2:
        raise DegenerateInputError(
            f"mask keeps {vals.size} voxels; need at least 2")
    mean = vals.mean(dtype=np.float64)
    var = vals.var(dtype=np.float64)
    if var < 1e-16:
        raise DegenerateInputError("zero variance inside the brain mask")
    out = np.zeros(volume.shape, dtype=np.float32)
    out[brain_mask] = ((vals - mean) / np.sqrt(var)).astype(np.float32)
    return out


def crop_patch(case: Case, rng: np.random.Generator, edge: int) -> Case:
    """Cube crop shared by all volumes/labels/mask, biased toward tumor.

    Up to 20 rejection attempts keep crops containing tumor; if all fail the
    final draw is unbiased (a fresh draw, not the last rejected one).
    """
    d, h, w = case.extents
    if edge < 1 or edge > min(d, h, w):
        raise ContractError(
            f"crop edge {edge} does not fit extents {case.extents}")

    def draw():
        return tuple(int(rng.integers(0, e - edge + 1)) for e in (d, h, w))

    corner = None
    if (case.labels > 0).any():
        for _ in range(20):
            c = draw()
            window = case.labels[c[0]:c[0] + edge, c[1]:c[1] + edge,
                                 c[2]:c[2] + edge]
            if (window > 0).any():
                corner = c
                break
    if corner is None:
        corner = draw()
    sl = tuple(slice(c, c + edge) for c in corner)
    return Case(
        id=f"{case.id}+{corner[0]}_{corner[1]}_{corner[2]}",
        volumes=case.volumes[(slice(None),) + sl].copy(),
        labels=case.labels[sl].copy(),
        brain_mask=case.brain_mask[sl].copy(),
        classes=case.classes,
    ).validate()
