"""Training loop: seeded streams, per-iteration logging, per-epoch checkpoints.

Reproducibility contract: every random choice (weight init, case order,
crop windows, modality masks, reparameterization noise) comes from its own
stream spawned from the config seed, so two runs with the same seed, config,
and data produce byte-identical logs and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .caseio import Case, read_case, read_manifest
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .errors import ConfigError, DegenerateInputError, NumericError
from .losses import LossBreakdown, compute_loss_breakdown, one_hot
from .model import Network, sample_modality_mask
from .optim import Adam, poly_lr
from .phantom import crop_patch, normalize

LOG_HEADER = "iter,epoch,lr,seg,rec,kl,total"


@dataclass
class TrainResult:
    net: Network
    adam: Adam
    checkpoint_path: Path | None
    log_path: Path | None
    epochs: int
    iterations: int
    log_rows: list[str]


def spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    streams = np.random.SeedSequence(seed).spawn(5)
    names = ("init", "order", "crop", "mask", "noise")
    return {n: np.random.default_rng(s) for n, s in zip(names, streams)}


def prepare_patch(case: Case, rng: np.random.Generator, edge: int,
                  attempts: int = 5) -> tuple[Case, list[np.ndarray]]:
    """Crop and normalize one training patch.

    A crop whose mask is degenerate (too few brain voxels or zero variance)
    is re-drawn; after the attempt budget the error propagates.
    """
    last_error = None
    for _ in range(attempts):
        pc = crop_patch(case, rng, edge)
        try:
            vols = [normalize(v, pc.brain_mask) for v in pc.volumes]
        except DegenerateInputError as exc:
            last_error = exc
            continue
        return pc, vols
    raise DegenerateInputError(
        f"no usable crop of case {case.id} after {attempts} attempts: "
        f"{last_error}")


def _format_row(iteration: int, epoch: int, lr: float,
                bd: LossBreakdown) -> str:
    return (f"{iteration},{epoch},{lr:.8e},{float(bd.seg.data):.8e},"
            f"{float(bd.rec.data):.8e},{float(bd.kl.data):.8e},"
            f"{float(bd.total.data):.8e}")


def train_cases(cfg: TrainConfig, cases: list[Case],
                out_dir: str | Path | None = None) -> TrainResult:
    cfg.validate()
    if not cases:
        raise ConfigError("training requires at least one case")
    net_cfg = cfg.network
    for case in cases:
        if case.modalities != net_cfg.modalities:
            raise ConfigError(
                f"case {case.id} has {case.modalities} modalities, config "
                f"says {net_cfg.modalities}")
        if case.classes != net_cfg.classes:
            raise ConfigError(
                f"case {case.id} has {case.classes} classes, config says "
                f"{net_cfg.classes}")

    rngs = spawn_rngs(cfg.seed)
    net = Network(net_cfg, rng=rngs["init"])
    adam = Adam(net.parameters())

    out_path = Path(out_dir) if out_dir is not None else None
    log_path = None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_path = out_path / "train_log.csv"
        log_file = log_path.open("w")
        log_file.write(LOG_HEADER + "\n")

    rows = [LOG_HEADER]
    checkpoint_path = None
    iteration = 0
    try:
        for epoch in range(cfg.max_epoch):
            lr = poly_lr(epoch, cfg.max_epoch, cfg.learning_rate,
                         cfg.poly_power)
            order = rngs["order"].permutation(len(cases))
            for ci in order:
                iteration += 1
                pc, vols = prepare_patch(cases[ci], rngs["crop"],
                                         net_cfg.patch)
                onehot = one_hot(pc.labels, net_cfg.classes)
                delta = sample_modality_mask(rngs["mask"],
                                             net_cfg.modalities,
                                             net_cfg.dropout_prob)
                noise = None
                if net_cfg.disentangle:
                    noise = rngs["noise"].standard_normal(
                        (net_cfg.modalities, net_cfg.appearance_dim)
                    ).astype(np.float32)
                tensors = [T.Tensor(v[None]) for v in vols]
                with T.Tape() as tape:
                    out = net.forward_full(tensors, delta, training=True,
                                           noise=noise)
                    bd = compute_loss_breakdown(out, tensors, onehot,
                                                cfg.lam, cfg.beta)
                total = float(bd.total.data)
                if not np.isfinite(total):
                    raise NumericError(
                        f"non-finite total loss at iteration {iteration} "
                        f"(epoch {epoch}, case {pc.id}): "
                        f"seg={float(bd.seg.data)}, rec={float(bd.rec.data)}, "
                        f"kl={float(bd.kl.data)}")
                net.zero_grads()
                tape.backward(bd.total)
                adam.step(lr)
                row = _format_row(iteration, epoch, lr, bd)
                rows.append(row)
                if log_file is not None:
                    log_file.write(row + "\n")
            if out_path is not None:
                # moments are bulky; persist them only where resume would
                # start, in the final epoch's checkpoint
                last = epoch == cfg.max_epoch - 1
                checkpoint_path = save_checkpoint(
                    out_path / f"checkpoint_ep{epoch + 1:03d}.mdfz",
                    net, epoch + 1, adam if last else None)
                if log_file is not None:
                    log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(net=net, adam=adam, checkpoint_path=checkpoint_path,
                       log_path=log_path, epochs=cfg.max_epoch,
                       iterations=iteration, log_rows=rows)


def train(cfg: TrainConfig, out_dir: str | Path) -> TrainResult:
    if not cfg.train_manifest:
        raise ConfigError("config is missing train_manifest")
    cases = [read_case(p) for p in read_manifest(cfg.train_manifest)]
    return train_cases(cfg, cases, out_dir)
