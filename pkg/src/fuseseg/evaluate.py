"""Hard-Dice metrics, sliding-window inference, the 15-combination
missing-modality evaluation, the ablation harness, and reconstruction.

Inference normalizes each window the same way training normalizes each
cropped patch, so the network always sees train-time statistics. Windows are
laid out at half-patch stride with a flush window at each far edge, and
overlapping logits are averaged before the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .caseio import (REGIONS, Case, RegionSpec, read_case, read_manifest,
                     region_mask, write_case)
from .checkpoint import load_checkpoint
from .config import MODALITY_NAMES, TrainConfig
from .errors import ConfigError, ContractError, DegenerateInputError
from .model import ModalityMask, Network
from .phantom import normalize
from .train import TrainResult, train_cases


def hard_dice(pred_labels: np.ndarray, gt_labels: np.ndarray,
              region: RegionSpec) -> float:
    if pred_labels.shape != gt_labels.shape:
        raise ContractError(
            f"prediction {pred_labels.shape} vs labels {gt_labels.shape}")
    a = region_mask(pred_labels, region)
    b = region_mask(gt_labels, region)
    na = int(a.sum())
    nb = int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb)


def all_subsets(m: int) -> list[tuple[int, ...]]:
    """Every nonempty modality subset, ordered by size then indices."""
    subsets = []
    for bits in range(1, 1 << m):
        subsets.append(tuple(i for i in range(m) if bits >> i & 1))
    subsets.sort(key=lambda s: (len(s), s))
    return subsets


def modality_name(i: int, m: int) -> str:
    if m == len(MODALITY_NAMES):
        return MODALITY_NAMES[i]
    return f"M{i}"


def subset_name(subset: tuple[int, ...], m: int) -> str:
    return "+".join(modality_name(i, m) for i in subset)


def parse_modalities(spec: str, m: int) -> tuple[int, ...]:
    lookup = {modality_name(i, m).lower(): i for i in range(m)}
    indices = set()
    for token in spec.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token not in lookup:
            raise ConfigError(
                f"unknown modality {token!r}; expected one of "
                f"{[modality_name(i, m) for i in range(m)]}")
        indices.add(lookup[token])
    if not indices:
        raise ConfigError("no modalities selected")
    return tuple(sorted(indices))


def subset_to_mask(subset: tuple[int, ...], m: int) -> ModalityMask:
    return ModalityMask(tuple(i in subset for i in range(m)))


def _window_starts(extent: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def _normalized_window(volumes: np.ndarray, mask: np.ndarray,
                       sl: tuple[slice, ...]) -> list[np.ndarray]:
    wmask = mask[sl]
    out = []
    for mvol in volumes:
        try:
            nv = normalize(mvol[sl], wmask)
        except DegenerateInputError:
            nv = np.zeros(wmask.shape, dtype=np.float32)
        out.append(nv[None])
    return out


def sliding_window_logits(net: Network, case: Case,
                          delta: ModalityMask) -> np.ndarray:
    cfg = net.config
    p = cfg.patch
    d, h, w = case.extents
    if min(d, h, w) < p:
        raise ContractError(
            f"case extents {case.extents} smaller than patch {p}")
    stride = max(p // 2, 1)
    acc = np.zeros((cfg.classes, d, h, w), dtype=np.float32)
    counts = np.zeros((d, h, w), dtype=np.float32)
    for d0 in _window_starts(d, p, stride):
        for h0 in _window_starts(h, p, stride):
            for w0 in _window_starts(w, p, stride):
                sl = (slice(d0, d0 + p), slice(h0, h0 + p), slice(w0, w0 + p))
                vols = _normalized_window(case.volumes, case.brain_mask, sl)
                out = net.forward_full([T.Tensor(v) for v in vols], delta,
                                       training=False,
                                       with_reconstruction=False)
                acc[(slice(None),) + sl] += out.logits.data
                counts[sl] += 1.0
    return acc / counts


def predict_labels(net: Network, case: Case, delta: ModalityMask) -> np.ndarray:
    logits = sliding_window_logits(net, case, delta)
    labels = np.argmax(logits, axis=0).astype(np.uint8)
    labels[~case.brain_mask] = 0
    return labels


@dataclass
class EvalRow:
    subset: tuple[int, ...]
    name: str
    dice: dict[str, float]


@dataclass
class EvalTable:
    rows: list[EvalRow]
    average: dict[str, float]

    def to_csv(self) -> str:
        regions = [r.name for r in REGIONS]
        lines = ["modalities," + ",".join(regions)]
        for row in self.rows:
            lines.append(row.name + "," +
                         ",".join(f"{row.dice[r]:.4f}" for r in regions))
        lines.append("average," +
                     ",".join(f"{self.average[r]:.4f}" for r in regions))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        regions = [r.name for r in REGIONS]
        header = ["modalities"] + [r.capitalize() for r in regions]
        body = [[row.name] + [f"{row.dice[r]:.4f}" for r in regions]
                for row in self.rows]
        body.append(["average"] + [f"{self.average[r]:.4f}" for r in regions])
        widths = [max(len(header[c]), *(len(b[c]) for b in body))
                  for c in range(len(header))]
        def fmt(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([fmt(header), rule] + [fmt(b) for b in body]) + "\n"


def evaluate_cases(net: Network, cases: list[Case],
                   subsets: list[tuple[int, ...]] | None = None,
                   predictions_dir: str | Path | None = None) -> EvalTable:
    m = net.config.modalities
    if subsets is None:
        subsets = all_subsets(m)
    pred_dir = None
    if predictions_dir is not None:
        pred_dir = Path(predictions_dir)
        pred_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for subset in subsets:
        delta = subset_to_mask(subset, m)
        name = subset_name(subset, m)
        sums = {r.name: 0.0 for r in REGIONS}
        for case in cases:
            pred = predict_labels(net, case, delta)
            if pred_dir is not None:
                out_case = Case(id=f"{case.id}_{name.replace('+', '-')}",
                                volumes=case.volumes, labels=pred,
                                brain_mask=case.brain_mask,
                                classes=net.config.classes)
                write_case(out_case, pred_dir / f"{out_case.id}.mmvc")
            for region in REGIONS:
                sums[region.name] += hard_dice(pred, case.labels, region)
        rows.append(EvalRow(subset=subset, name=name,
                            dice={k: v / len(cases) for k, v in sums.items()}))
    average = {r.name: float(np.mean([row.dice[r.name] for row in rows]))
               for r in REGIONS}
    return EvalTable(rows=rows, average=average)


def evaluate_combinations(checkpoint_path: str | Path,
                          manifest_path: str | Path,
                          subsets: list[tuple[int, ...]] | None = None,
                          predictions_dir: str | Path | None = None
                          ) -> EvalTable:
    net, _, _ = load_checkpoint(checkpoint_path)
    cases = [read_case(p) for p in read_manifest(manifest_path)]
    return evaluate_cases(net, cases, subsets=subsets,
                          predictions_dir=predictions_dir)


def reconstruct_volumes(net: Network, case: Case,
                        subset: tuple[int, ...]) -> np.ndarray:
    """Reconstruct all modalities from the subset's fused content.

    Appearance codes of dropped modalities are set to the prior mean (zero),
    so no byte of a dropped input can reach any output.
    """
    cfg = net.config
    if not cfg.disentangle:
        raise ConfigError(
            "checkpoint was trained without the reconstruction branch")
    delta = subset_to_mask(subset, cfg.modalities)
    p = cfg.patch
    d, h, w = case.extents
    if min(d, h, w) < p:
        raise ContractError(
            f"case extents {case.extents} smaller than patch {p}")
    stride = max(p // 2, 1)
    acc = np.zeros((cfg.modalities, d, h, w), dtype=np.float32)
    counts = np.zeros((d, h, w), dtype=np.float32)
    zero_app = T.Tensor(np.zeros(cfg.appearance_dim, dtype=np.float32))
    for d0 in _window_starts(d, p, stride):
        for h0 in _window_starts(h, p, stride):
            for w0 in _window_starts(w, p, stride):
                sl = (slice(d0, d0 + p), slice(h0, h0 + p), slice(w0, w0 + p))
                vols = [T.Tensor(v) for v in
                        _normalized_window(case.volumes, case.brain_mask, sl)]
                pyramids = [
                    net.content_encoders[i](vols[i]) if delta.delta[i] else None
                    for i in range(cfg.modalities)
                ]
                fused = net.fuse_pyramids(pyramids, delta)
                z_deep = fused[-1].z
                for i in range(cfg.modalities):
                    if delta.delta[i]:
                        a = net.appearance_encoders[i](vols[i], False).sample
                    else:
                        a = zero_app
                    recon = net.recon_decoders[i](z_deep, a)
                    acc[(i,) + sl] += recon.data[0]
                counts[sl] += 1.0
    return acc / counts


@dataclass
class AblationVariant:
    key: str
    label: str
    config: TrainConfig
    table: EvalTable | None = None
    train_result: TrainResult | None = None


def ablation_variants(base: TrainConfig) -> list[AblationVariant]:
    net_a = replace(base.network, fusion_mode="average", disentangle=False)
    cfg_a = replace(base, network=net_a, lam=0.0, beta=0.0)
    net_b = replace(base.network, fusion_mode="average", disentangle=True)
    cfg_b = replace(base, network=net_b)
    net_c = replace(base.network, fusion_mode="gated", disentangle=True)
    cfg_c = replace(base, network=net_c)
    return [
        AblationVariant("baseline", "average fusion, no disentanglement", cfg_a),
        AblationVariant("disentangled", "average fusion + disentanglement", cfg_b),
        AblationVariant("full", "gated fusion + disentanglement", cfg_c),
    ]


@dataclass
class AblationResult:
    variants: list[AblationVariant]

    def merged_csv(self) -> str:
        regions = [r.name for r in REGIONS]
        lines = ["variant," + ",".join(regions)]
        for v in self.variants:
            lines.append(v.key + "," +
                         ",".join(f"{v.table.average[r]:.4f}" for r in regions))
        return "\n".join(lines) + "\n"

    def merged_markdown(self) -> str:
        regions = [r.name for r in REGIONS]
        header = ["variant"] + [r.capitalize() for r in regions]
        body = [[v.label] + [f"{v.table.average[r]:.4f}" for r in regions]
                for v in self.variants]
        widths = [max(len(header[c]), *(len(b[c]) for b in body))
                  for c in range(len(header))]
        def fmt(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([fmt(header), rule] + [fmt(b) for b in body]) + "\n"


def ablate(base: TrainConfig, out_dir: str | Path) -> AblationResult:
    """Train and evaluate the three fusion/disentanglement variants with
    identical seeds and data; the 15-combination average per region is the
    comparison of record."""
    if not base.train_manifest:
        raise ConfigError("ablation needs train_manifest")
    if not base.eval_manifest:
        raise ConfigError("ablation needs eval_manifest")
    train_set = [read_case(p) for p in read_manifest(base.train_manifest)]
    eval_set = [read_case(p) for p in read_manifest(base.eval_manifest)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    variants = ablation_variants(base)
    for v in variants:
        result = train_cases(v.config, train_set, out / v.key)
        table = evaluate_cases(result.net, eval_set)
        (out / v.key / "eval.csv").write_text(table.to_csv())
        (out / v.key / "eval.md").write_text(table.to_markdown())
        v.table = table
        v.train_result = result
    report = AblationResult(variants=variants)
    (out / "ablation.csv").write_text(report.merged_csv())
    (out / "ablation.md").write_text(report.merged_markdown())
    return report
