"""Network blocks: modality-specific encoders, gated fusion, decoders.

Everything is channel-first with no batch dimension; a forward pass handles
one patch. Content encoder stage s emits [base_channels*2^s, patch/2^(s+1)]
per axis, so the deepest code sits at patch/2^stages. Dropped modalities are
never encoded for content: their codes enter fusion as exact zeros, which is
bitwise identical to encoding and then masking, and skips dead compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import NetworkConfig
from .errors import ConfigError, ContractError, DimensionError


class Module:
    """Attribute-registration container for parameters and submodules."""

    def __init__(self):
        self.__dict__["_params"] = {}
        self.__dict__["_children"] = {}

    def __setattr__(self, name, value):
        if isinstance(value, T.Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        self.__dict__[name] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[T.Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self.__dict__["_items"] = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module) -> None:
        self._children[str(len(self._items))] = mod
        self._items.append(mod)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 padding: int = 0, rng: np.random.Generator | None = None,
                 bias: bool = True):
        super().__init__()
        std = math.sqrt(2.0 / (cin * k ** 3))
        self.weight = T.Parameter(rng.normal(0.0, std, (cout, cin, k, k, k)),
                                  dtype=np.float32)
        # A bias feeding a per-channel standardization is cancelled exactly,
        # so norm-preceded convs are built without one.
        self.bias = T.Parameter(np.zeros(cout), dtype=np.float32) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: T.Tensor) -> T.Tensor:
        return T.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        super().__init__()
        std = math.sqrt(2.0 / din)
        self.weight = T.Parameter(rng.normal(0.0, std, (dout, din)), dtype=np.float32)
        self.bias = T.Parameter(np.zeros(dout), dtype=np.float32)

    def forward(self, x: T.Tensor) -> T.Tensor:
        return T.fully_connected(x, self.weight, self.bias)


class InstanceNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = T.Parameter(np.ones(channels), dtype=np.float32)
        self.beta = T.Parameter(np.zeros(channels), dtype=np.float32)
        self.eps = eps

    def forward(self, x: T.Tensor) -> T.Tensor:
        return T.instance_norm(x, self.gamma, self.beta, self.eps)


class ConvBlock(Module):
    """conv 3x3x3 (same) -> instance norm -> leaky relu."""

    def __init__(self, cin: int, cout: int, slope: float, rng):
        super().__init__()
        self.conv = Conv3d(cin, cout, 3, 1, 1, rng, bias=False)
        self.norm = InstanceNorm(cout)
        self.slope = slope

    def forward(self, x: T.Tensor) -> T.Tensor:
        return T.leaky_relu(self.norm(self.conv(x)), self.slope)


class ResBlock(Module):
    """Two ConvBlocks plus an additive shortcut (1x1x1 when channels change)."""

    def __init__(self, cin: int, cout: int, slope: float, rng):
        super().__init__()
        self.block1 = ConvBlock(cin, cout, slope, rng)
        self.block2 = ConvBlock(cout, cout, slope, rng)
        self.proj = Conv3d(cin, cout, 1, 1, 0, rng) if cin != cout else None

    def forward(self, x: T.Tensor) -> T.Tensor:
        y = self.block2(self.block1(x))
        return y + (self.proj(x) if self.proj is not None else x)


def adain(x: T.Tensor, scale: T.Tensor, shift: T.Tensor, eps: float = 1e-5) -> T.Tensor:
    """Standardize per channel over spatial voxels, then style affine.

    scale/shift are 1-d [C] tensors from the style mapper, so gradients flow
    into the mapper. With a single spatial voxel the standardized value is
    exactly zero and the output reduces to shift.
    """
    c = x.shape[0]
    axes = tuple(range(1, x.ndim))
    mean = T.tmean(x, axis=axes, keepdims=True)
    centered = x - mean
    var = T.tmean(centered * centered, axis=axes, keepdims=True)
    xhat = centered / T.tsqrt(var + eps)
    bshape = (c,) + (1,) * (x.ndim - 1)
    return T.reshape(scale, bshape) * xhat + T.reshape(shift, bshape)


class AdaINResBlock(Module):
    """Residual block whose per-channel affine comes from the appearance code."""

    def __init__(self, channels: int, slope: float, rng):
        super().__init__()
        self.conv1 = Conv3d(channels, channels, 3, 1, 1, rng, bias=False)
        self.conv2 = Conv3d(channels, channels, 3, 1, 1, rng, bias=False)
        self.slope = slope

    def forward(self, x: T.Tensor, style) -> T.Tensor:
        (s1, b1), (s2, b2) = style
        h = T.leaky_relu(adain(self.conv1(x), s1, b1), self.slope)
        h = T.leaky_relu(adain(self.conv2(h), s2, b2), self.slope)
        return h + x


@dataclass
class ModalityMask:
    """Presence indicator per modality; all-dropped masks are forbidden."""

    delta: tuple[bool, ...]

    def __post_init__(self):
        self.delta = tuple(bool(d) for d in self.delta)
        if not any(self.delta):
            raise ContractError("modality mask must keep at least one modality")

    def __len__(self):
        return len(self.delta)

    @property
    def kept(self) -> tuple[int, ...]:
        return tuple(i for i, d in enumerate(self.delta) if d)


def sample_modality_mask(rng: np.random.Generator, m: int,
                         dropout_prob: float) -> ModalityMask:
    """Independent Bernoulli drops, resampled until one modality survives."""
    if not 0 <= dropout_prob < 1:
        raise ContractError(f"dropout_prob must be in [0,1), got {dropout_prob}")
    while True:
        keep = rng.random(m) >= dropout_prob
        if keep.any():
            return ModalityMask(tuple(bool(k) for k in keep))


@dataclass
class AppearanceCode:
    mu: T.Tensor
    log_var: T.Tensor
    sample: T.Tensor


@dataclass
class FusionOutput:
    z: T.Tensor
    gates: list[T.Tensor] | None       # one 1-channel map per modality
    gated: list[T.Tensor] | None       # the re-weighted codes


@dataclass
class ForwardOutput:
    logits: T.Tensor
    probs: T.Tensor
    fused: list[FusionOutput]
    appearance: list[AppearanceCode] | None
    reconstructions: list[T.Tensor] | None


class ContentEncoder(Module):
    """Per stage: residual block at the incoming resolution, then a stride-2
    downsampling conv with leaky relu (no norm, so a 1-voxel deepest stage
    stays well defined)."""

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        self.blocks = ModuleList()
        self.downs = ModuleList()
        cin = 1
        for s in range(cfg.stages):
            cout = cfg.stage_channels(s)
            self.blocks.append(ResBlock(cin, cout, cfg.leaky_slope, rng))
            self.downs.append(Conv3d(cout, cout, 3, 2, 1, rng))
            cin = cout
        self.slope = cfg.leaky_slope

    def forward(self, x: T.Tensor) -> list[T.Tensor]:
        stages = []
        h = x
        for block, down in zip(self.blocks, self.downs):
            h = T.leaky_relu(down(block(h)), self.slope)
            stages.append(h)
        return stages


class AppearanceEncoder(Module):
    """Five convs (stride 2 while spatial size allows), GAP, FC to mu/log_var."""

    LAYERS = 5

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        n_stride2 = min(self.LAYERS, int(math.log2(cfg.patch)))
        self.convs = ModuleList()
        cin = 1
        for layer in range(self.LAYERS):
            cout = min(cfg.stage_channels(min(layer, cfg.stages - 1)),
                       cfg.stage_channels(cfg.stages - 1))
            stride = 2 if layer < n_stride2 else 1
            self.convs.append(Conv3d(cin, cout, 3, stride, 1, rng))
            cin = cout
        self.fc = Linear(cin, 2 * cfg.appearance_dim, rng)
        self.dim = cfg.appearance_dim
        self.slope = cfg.leaky_slope

    def forward(self, x: T.Tensor, training: bool,
                noise: np.ndarray | None = None) -> AppearanceCode:
        h = x
        for conv in self.convs:
            h = T.leaky_relu(conv(h), self.slope)
        stats = self.fc(T.global_avg_pool(h))
        mu = T.narrow(stats, 0, 0, self.dim)
        log_var = T.narrow(stats, 0, self.dim, self.dim)
        if training:
            if noise is None:
                raise ContractError("training-mode appearance encoding needs noise")
            if noise.shape != (self.dim,):
                raise DimensionError(
                    f"appearance noise must have shape ({self.dim},), got {noise.shape}")
            std = T.texp(log_var * 0.5)
            sample = mu + std * T.Tensor(noise.astype(mu.dtype))
        else:
            sample = mu
        return AppearanceCode(mu=mu, log_var=log_var, sample=sample)


class GatedFusion(Module):
    """One fusion block for one stage: gate conv over the concatenated codes,
    sigmoid split into per-modality gates, re-weight, 1x1x1 bottleneck."""

    def __init__(self, m: int, channels: int, slope: float, rng):
        super().__init__()
        self.gate_conv = Conv3d(m * channels, m, 3, 1, 1, rng)
        self.bottleneck = Conv3d(m * channels, channels, 1, 1, 0, rng)
        self.m = m
        self.channels = channels
        self.slope = slope

    def forward(self, codes: list[T.Tensor | None], delta: ModalityMask) -> FusionOutput:
        zeroed = _fill_dropped_with_zeros(codes, delta)
        cat = T.concat_channels(zeroed)
        gate_map = T.sigmoid(self.gate_conv(cat))
        gates = [T.narrow(gate_map, 0, i, 1) for i in range(self.m)]
        gated = [zeroed[i] * gates[i] for i in range(self.m)]
        z = T.leaky_relu(self.bottleneck(T.concat_channels(gated)), self.slope)
        return FusionOutput(z=z, gates=gates, gated=gated)


class AverageFusion(Module):
    """Parameter-free mean over the surviving codes."""

    def forward(self, codes: list[T.Tensor | None], delta: ModalityMask) -> FusionOutput:
        kept = [codes[i] for i in delta.kept]
        if any(c is None for c in kept):
            raise ContractError("surviving modalities must provide codes")
        z = kept[0]
        for c in kept[1:]:
            z = z + c
        z = z * (1.0 / len(kept))
        return FusionOutput(z=z, gates=None, gated=None)


def _fill_dropped_with_zeros(codes: list[T.Tensor | None],
                             delta: ModalityMask) -> list[T.Tensor]:
    template = None
    for i in delta.kept:
        if codes[i] is None:
            raise ContractError("surviving modalities must provide codes")
        template = codes[i]
    shape = template.shape
    out = []
    for i, keep in enumerate(delta.delta):
        if keep:
            if codes[i].shape != shape:
                raise DimensionError(
                    f"fusion codes disagree in shape: {codes[i].shape} vs {shape}")
            out.append(codes[i])
        else:
            out.append(T.Tensor(np.zeros(shape, dtype=template.dtype)))
    return out


class SegDecoder(Module):
    """Mirror of the content encoder: upsample, halve channels, concatenate
    the fused code of the matching resolution, residual block. The last
    up-stage reaches patch resolution where no fused code exists, so it has
    no skip and keeps base_channels. A 1x1x1 head emits the K logits."""

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        self.ups = ModuleList()
        self.blocks = ModuleList()
        for s in range(cfg.stages - 1, -1, -1):
            cin = cfg.stage_channels(s)
            cout = cfg.stage_channels(s - 1) if s >= 1 else cfg.base_channels
            skip = cfg.stage_channels(s - 1) if s >= 1 else 0
            self.ups.append(Conv3d(cin, cout, 3, 1, 1, rng))
            self.blocks.append(ResBlock(cout + skip, cout, cfg.leaky_slope, rng))
        self.head = Conv3d(cfg.base_channels, cfg.classes, 1, 1, 0, rng)
        self.stages = cfg.stages
        self.slope = cfg.leaky_slope

    def forward(self, fused: list[FusionOutput]) -> T.Tensor:
        if len(fused) != self.stages:
            raise DimensionError(
                f"expected {self.stages} fused stages, got {len(fused)}")
        h = fused[-1].z
        for idx, s in enumerate(range(self.stages - 1, -1, -1)):
            h = T.upsample2x(h)
            h = T.leaky_relu(self.ups[idx](h), self.slope)
            if s >= 1:
                skip = fused[s - 1].z
                if skip.shape[1:] != h.shape[1:]:
                    raise DimensionError(
                        f"skip/decoder spatial mismatch at stage {s}: "
                        f"{skip.shape[1:]} vs {h.shape[1:]}")
                h = T.concat_channels([h, skip])
            h = self.blocks[idx](h)
        return self.head(h)


class ReconDecoder(Module):
    """Appearance-conditioned reconstruction of one modality from the deepest
    fused code: four AdaIN residual blocks styled by a 2-layer mapper on the
    appearance sample, then one upsample+conv per stage down to 1 channel."""

    N_BLOCKS = 4

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        c_deep = cfg.stage_channels(cfg.stages - 1)
        self.blocks = ModuleList(
            AdaINResBlock(c_deep, cfg.leaky_slope, rng) for _ in range(self.N_BLOCKS))
        hidden = 2 * cfg.appearance_dim
        self.mapper1 = Linear(cfg.appearance_dim, hidden, rng)
        self.mapper2 = Linear(hidden, self.N_BLOCKS * 2 * 2 * c_deep, rng)
        self.ups = ModuleList()
        cin = c_deep
        for i in range(cfg.stages):
            last = i == cfg.stages - 1
            cout = 1 if last else cfg.stage_channels(cfg.stages - 2 - i)
            self.ups.append(Conv3d(cin, cout, 3, 1, 1, rng))
            cin = cout
        self.c_deep = c_deep
        self.dim = cfg.appearance_dim
        self.slope = cfg.leaky_slope

    def forward(self, z: T.Tensor, a_sample: T.Tensor) -> T.Tensor:
        if a_sample.shape != (self.dim,):
            raise ConfigError(
                f"appearance sample must have shape ({self.dim},), got {a_sample.shape}")
        style = self.mapper2(T.leaky_relu(self.mapper1(a_sample), self.slope))
        h = z
        off = 0
        for block in self.blocks:
            pairs = []
            for _ in range(2):
                scale = T.narrow(style, 0, off, self.c_deep) + 1.0
                shift = T.narrow(style, 0, off + self.c_deep, self.c_deep)
                off += 2 * self.c_deep
                pairs.append((scale, shift))
            h = block(h, pairs)
        n_ups = len(self.ups)
        for i, up in enumerate(self.ups):
            h = up(T.upsample2x(h))
            if i < n_ups - 1:
                h = T.leaky_relu(h, self.slope)
        return h


class Network(Module):
    """The whole model: M content encoders, per-stage fusion, segmentation
    decoder, and (when disentangling) M appearance encoders and M
    reconstruction decoders."""

    def __init__(self, cfg: NetworkConfig, rng: int | np.random.Generator = 0):
        super().__init__()
        cfg.validate()
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.__dict__["config"] = cfg
        m = cfg.modalities
        self.content_encoders = ModuleList(
            ContentEncoder(cfg, rng) for _ in range(m))
        if cfg.fusion_mode == "gated":
            self.fusion = ModuleList(
                GatedFusion(m, cfg.stage_channels(s), cfg.leaky_slope, rng)
                for s in range(cfg.stages))
        else:
            self.fusion = ModuleList(AverageFusion() for _ in range(cfg.stages))
        self.seg_decoder = SegDecoder(cfg, rng)
        if cfg.disentangle:
            self.appearance_encoders = ModuleList(
                AppearanceEncoder(cfg, rng) for _ in range(m))
            self.recon_decoders = ModuleList(
                ReconDecoder(cfg, rng) for _ in range(m))
        self._assign_names()

    def _assign_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ContractError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def _check_input(self, vols) -> list[T.Tensor]:
        cfg = self.config
        if len(vols) != cfg.modalities:
            raise DimensionError(
                f"expected {cfg.modalities} modality volumes, got {len(vols)}")
        out = []
        for v in vols:
            t = v if isinstance(v, T.Tensor) else T.Tensor(np.asarray(v))
            if t.ndim == 3:
                t = T.Tensor(t.data[None])
            if t.ndim != 4 or t.shape[0] != 1:
                raise DimensionError(
                    f"modality volume must be [1,D,H,W], got {t.shape}")
            out.append(t)
        return out

    def fuse_pyramids(self, pyramids: list[list[T.Tensor] | None],
                      delta: ModalityMask) -> list[FusionOutput]:
        fused = []
        for s in range(self.config.stages):
            codes = [p[s] if p is not None else None for p in pyramids]
            fused.append(self.fusion[s](codes, delta))
        return fused

    def forward_full(self, vols, delta: ModalityMask, training: bool,
                     noise: np.ndarray | None = None,
                     with_reconstruction: bool = True) -> ForwardOutput:
        cfg = self.config
        vols = self._check_input(vols)
        if len(delta) != cfg.modalities:
            raise DimensionError(
                f"mask covers {len(delta)} modalities, model has {cfg.modalities}")
        pyramids = [
            self.content_encoders[i](vols[i]) if delta.delta[i] else None
            for i in range(cfg.modalities)
        ]
        fused = self.fuse_pyramids(pyramids, delta)
        logits = self.seg_decoder(fused)
        probs = T.softmax_channels(logits)

        appearance = None
        recons = None
        if cfg.disentangle and with_reconstruction:
            if training and noise is not None and noise.shape != (cfg.modalities,
                                                                  cfg.appearance_dim):
                raise DimensionError(
                    f"noise must be [{cfg.modalities},{cfg.appearance_dim}], "
                    f"got {noise.shape}")
            appearance = [
                self.appearance_encoders[i](
                    vols[i], training,
                    noise[i] if training and noise is not None else None)
                for i in range(cfg.modalities)
            ]
            z_deep = fused[-1].z
            recons = [
                self.recon_decoders[i](z_deep, appearance[i].sample)
                for i in range(cfg.modalities)
            ]
        return ForwardOutput(logits=logits, probs=probs, fused=fused,
                             appearance=appearance, reconstructions=recons)
