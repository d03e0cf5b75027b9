"""Case container, tumor region definitions, and the MMVC file format.

MMVC layout (all little-endian):
    magic "MMVC", version u16, M u8, K u8, extents D,H,W u32 each,
    M volumes float32 row-major, labels u8, brain mask packed bits
    (numpy packbits, most significant bit first), CRC32 u32 over all
    preceding bytes.

The trailing checksum is what lets the reader reject single-byte payload
corruption that would otherwise parse as a valid float volume.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

MAGIC = b"MMVC"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIII")


@dataclass
class Case:
    id: str
    volumes: np.ndarray      # [M, D, H, W] float32
    labels: np.ndarray       # [D, H, W] uint8, values < classes
    brain_mask: np.ndarray   # [D, H, W] bool
    classes: int

    def validate(self) -> "Case":
        if self.volumes.ndim != 4:
            raise ContractError(f"volumes must be [M,D,H,W], got {self.volumes.shape}")
        ext = self.volumes.shape[1:]
        if self.labels.shape != ext or self.brain_mask.shape != ext:
            raise ContractError(
                f"extent mismatch: volumes {ext}, labels {self.labels.shape}, "
                f"mask {self.brain_mask.shape}")
        if self.labels.max(initial=0) >= self.classes:
            raise ContractError(
                f"labels reach {self.labels.max()} but classes = {self.classes}")
        if (self.labels[~self.brain_mask] != 0).any():
            raise ContractError("tumor labels found outside the brain mask")
        return self

    @property
    def modalities(self) -> int:
        return self.volumes.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        return tuple(self.volumes.shape[1:])


@dataclass(frozen=True)
class RegionSpec:
    name: str
    labels: frozenset[int]


REGIONS: tuple[RegionSpec, ...] = (
    RegionSpec("complete", frozenset({1, 2, 3})),
    RegionSpec("core", frozenset({2, 3})),
    RegionSpec("enhancing", frozenset({3})),
)


def region_mask(labels: np.ndarray, region: RegionSpec) -> np.ndarray:
    return np.isin(labels, sorted(region.labels))


def write_case(case: Case, path: str | Path) -> Path:
    case.validate()
    m = case.modalities
    d, h, w = case.extents
    if m > 255 or case.classes > 255:
        raise ContractError("MMVC supports at most 255 modalities/classes")
    parts = [_HEADER.pack(MAGIC, VERSION, m, case.classes, d, h, w)]
    parts.append(np.ascontiguousarray(case.volumes, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(case.labels, dtype=np.uint8).tobytes())
    parts.append(np.packbits(case.brain_mask.reshape(-1)).tobytes())
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    p = Path(path)
    p.write_bytes(blob)
    return p


def read_case(path: str | Path) -> Case:
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"case file not found: {p}")
    data = p.read_bytes()
    if len(data) < _HEADER.size + 4:
        raise ParseError(f"file too short for an MMVC header: {len(data)} bytes",
                         offset=len(data))
    magic, version, m, k, d, h, w = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported MMVC version {version}", offset=4)
    if m < 1 or k < 2:
        raise ParseError(f"implausible counts: M={m}, K={k}", offset=6)
    if d < 1 or h < 1 or w < 1:
        raise ParseError(f"implausible extents {(d, h, w)}", offset=8)

    nvox = d * h * w
    vol_off = _HEADER.size
    lab_off = vol_off + m * nvox * 4
    mask_off = lab_off + nvox
    crc_off = mask_off + (nvox + 7) // 8
    expected = crc_off + 4
    if len(data) != expected:
        raise ParseError(
            f"size mismatch: expected {expected} bytes, found {len(data)}",
            offset=min(len(data), expected))
    stored_crc = struct.unpack_from("<I", data, crc_off)[0]
    actual_crc = zlib.crc32(data[:crc_off]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ParseError(
            f"checksum mismatch: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}", offset=crc_off)

    volumes = np.frombuffer(data, dtype="<f4", count=m * nvox, offset=vol_off)
    volumes = volumes.reshape(m, d, h, w).astype(np.float32)
    labels = np.frombuffer(data, dtype=np.uint8, count=nvox, offset=lab_off)
    labels = labels.reshape(d, h, w).copy()
    if labels.max(initial=0) >= k:
        raise ParseError(
            f"label value {labels.max()} out of range for K={k}", offset=lab_off)
    packed = np.frombuffer(data, dtype=np.uint8, count=crc_off - mask_off,
                           offset=mask_off)
    mask = np.unpackbits(packed, count=nvox).reshape(d, h, w).astype(bool)
    if (labels[~mask] != 0).any():
        raise ParseError("tumor labels outside the brain mask", offset=lab_off)
    case = Case(id=p.stem, volumes=volumes, labels=labels,
                brain_mask=mask, classes=k)
    return case.validate()


def write_manifest(path: str | Path, case_paths) -> Path:
    p = Path(path)
    p.write_text("".join(f"{cp}\n" for cp in case_paths))
    return p


def read_manifest(path: str | Path) -> list[Path]:
    """One case path per line; relative paths resolve against the manifest."""
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"manifest not found: {p}")
    out = []
    for line in p.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cp = Path(line)
        if not cp.is_absolute():
            cp = p.parent / cp
        out.append(cp)
    if not out:
        raise ParseError(f"manifest is empty: {p}")
    return out
