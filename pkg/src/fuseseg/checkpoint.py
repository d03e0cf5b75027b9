"""MDFZ checkpoint format: config echo, named parameters, Adam moments.

Layout (little-endian):
    magic "MDFZ", version u16,
    config echo (modalities u8, classes u8, stages u8, base_channels u16,
    appearance_dim u16, patch u16, leaky_slope f64, dropout_prob f64,
    fusion_mode u8, disentangle u8),
    epoch u32, parameter count u32,
    per parameter: name length u16, UTF-8 name, ndim u8, dims u32 each,
    float32 data,
    adam flag u8; when 1: step count u64 then per parameter m and v float32
    data in the same order,
    CRC32 u32 over all preceding bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import NetworkConfig
from .errors import ConfigError, ParseError
from .model import Network
from .optim import Adam

MAGIC = b"MDFZ"
VERSION = 1
_HEAD = struct.Struct("<4sH")
_CFG = struct.Struct("<BBBHHHddBB")  # f64 floats so the echo is exact
_FUSION_CODE = {"gated": 0, "average": 1}
_FUSION_NAME = {v: k for k, v in _FUSION_CODE.items()}


@dataclass
class AdamSnapshot:
    t: int
    moments: dict[str, tuple[np.ndarray, np.ndarray]]


def _pack_config(cfg: NetworkConfig) -> bytes:
    return _CFG.pack(
        cfg.modalities, cfg.classes, cfg.stages, cfg.base_channels,
        cfg.appearance_dim, cfg.patch, cfg.leaky_slope, cfg.dropout_prob,
        _FUSION_CODE[cfg.fusion_mode], int(cfg.disentangle))


def save_checkpoint(path: str | Path, net: Network, epoch: int,
                    adam: Adam | None = None) -> Path:
    parts = [_HEAD.pack(MAGIC, VERSION), _pack_config(net.config)]
    named = list(net.named_parameters())
    parts.append(struct.pack("<II", epoch, len(named)))
    for name, p in named:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    if adam is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BQ", 1, adam.t))
        by_id = {id(p): i for i, p in enumerate(adam.params)}
        for name, p in named:
            i = by_id.get(id(p))
            if i is None:
                raise ConfigError(f"optimizer does not track parameter {name!r}")
            parts.append(np.ascontiguousarray(adam.m[i], dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(adam.v[i], dtype="<f4").tobytes())
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    p = Path(path)
    p.write_bytes(blob)
    return p


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise ParseError(f"truncated checkpoint while reading {what}",
                             offset=self.off)
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))


def load_checkpoint(path: str | Path,
                    expect: NetworkConfig | None = None
                    ) -> tuple[Network, int, AdamSnapshot | None]:
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if len(data) < _HEAD.size + _CFG.size + 4:
        raise ParseError(f"file too short for an MDFZ header: {len(data)} bytes",
                         offset=len(data))
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ParseError(
            f"checksum mismatch: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}", offset=len(data) - 4)

    r = _Reader(data[:-4])
    magic, version = r.unpack(_HEAD, "header")
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported MDFZ version {version}", offset=4)
    (m, k, s, base, adim, patch, slope, dprob,
     fmode, disent) = r.unpack(_CFG, "config echo")
    if fmode not in _FUSION_NAME:
        raise ParseError(f"unknown fusion mode code {fmode}", offset=6)
    cfg = NetworkConfig(
        modalities=m, classes=k, stages=s, base_channels=base,
        appearance_dim=adim, patch=patch, leaky_slope=float(slope),
        dropout_prob=float(dprob), fusion_mode=_FUSION_NAME[fmode],
        disentangle=bool(disent))
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ParseError(f"invalid config echo: {exc}", offset=6) from exc
    if expect is not None and cfg != expect:
        raise ParseError(
            f"checkpoint config {cfg} does not match expected {expect}")

    epoch, count = struct.unpack("<II", r.take(8, "epoch/count"))
    net = Network(cfg, rng=0)
    model_params = dict(net.named_parameters())
    if count != len(model_params):
        raise ParseError(
            f"checkpoint has {count} parameters, model has {len(model_params)}",
            offset=r.off)
    seen: set[str] = set()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(nlen, "name").decode("utf-8")
        if name in seen:
            raise ParseError(f"duplicate parameter {name!r}", offset=r.off)
        seen.add(name)
        if name not in model_params:
            raise ParseError(f"unknown parameter name {name!r}", offset=r.off)
        (ndim,) = struct.unpack("<B", r.take(1, "ndim"))
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "dims"))
        target = model_params[name]
        if dims != target.shape:
            raise ParseError(
                f"parameter {name!r} has shape {dims}, model expects "
                f"{target.shape}", offset=r.off)
        n = int(np.prod(dims)) if dims else 1
        raw = r.take(4 * n, f"data of {name!r}")
        target.data = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(
            np.float32)

    (flag,) = struct.unpack("<B", r.take(1, "adam flag"))
    snapshot = None
    if flag == 1:
        (t,) = struct.unpack("<Q", r.take(8, "adam step"))
        moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for name, p in net.named_parameters():
            n = p.size
            mm = np.frombuffer(r.take(4 * n, f"adam m of {name!r}"),
                               dtype="<f4").reshape(p.shape).astype(np.float32)
            vv = np.frombuffer(r.take(4 * n, f"adam v of {name!r}"),
                               dtype="<f4").reshape(p.shape).astype(np.float32)
            moments[name] = (mm, vv)
        snapshot = AdamSnapshot(t=t, moments=moments)
    elif flag != 0:
        raise ParseError(f"bad adam flag {flag}", offset=r.off - 1)
    if r.off != len(r.data):
        raise ParseError(
            f"{len(r.data) - r.off} unexpected trailing bytes", offset=r.off)
    return net, int(epoch), snapshot
