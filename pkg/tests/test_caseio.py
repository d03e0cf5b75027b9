"""MMVC round trips, validation contracts, and corruption rejection."""

import numpy as np
import pytest

from fuseseg import caseio
from fuseseg.caseio import (REGIONS, Case, read_case, read_manifest,
                            region_mask, write_case, write_manifest)
from fuseseg.errors import ContractError, ParseError

from conftest import make_case


def _small_case(seed=0, edge=12):
    return make_case(seed, edge=edge)


def test_round_trip_is_bitwise(tmp_path):
    case = _small_case(1)
    path = write_case(case, tmp_path / "a.mmvc")
    back = read_case(path)
    assert np.array_equal(back.volumes, case.volumes)
    assert back.volumes.dtype == np.float32
    assert np.array_equal(back.labels, case.labels)
    assert np.array_equal(back.brain_mask, case.brain_mask)
    assert back.classes == case.classes
    assert back.id == "a"


def test_write_is_deterministic(tmp_path):
    case = _small_case(2)
    a = write_case(case, tmp_path / "a.mmvc").read_bytes()
    b = write_case(case, tmp_path / "b.mmvc").read_bytes()
    assert a == b


def test_case_validate_contracts():
    case = _small_case(3)
    with pytest.raises(ContractError):
        Case("x", case.volumes[0], case.labels, case.brain_mask, 4).validate()
    with pytest.raises(ContractError):
        Case("x", case.volumes, case.labels[:6], case.brain_mask, 4).validate()
    bad_labels = case.labels.copy()
    bad_labels[0, 0, 0] = 200
    with pytest.raises(ContractError):
        Case("x", case.volumes, bad_labels, case.brain_mask, 4).validate()
    outside = case.labels.copy()
    outside[~case.brain_mask] = 1
    with pytest.raises(ContractError):
        Case("x", case.volumes, outside, case.brain_mask, 4).validate()


def test_write_case_limits(tmp_path):
    case = _small_case(4, edge=8)
    wide = Case("x", np.zeros((256, 4, 4, 4), dtype=np.float32),
                np.zeros((4, 4, 4), dtype=np.uint8),
                np.ones((4, 4, 4), dtype=bool), 4)
    with pytest.raises(ContractError):
        write_case(wide, tmp_path / "wide.mmvc")
    assert case.modalities == 4


def test_region_definitions():
    names = [r.name for r in REGIONS]
    assert names == ["complete", "core", "enhancing"]
    assert REGIONS[0].labels == frozenset({1, 2, 3})
    assert REGIONS[1].labels == frozenset({2, 3})
    assert REGIONS[2].labels == frozenset({3})
    labels = np.array([[0, 1], [2, 3]])
    assert np.array_equal(region_mask(labels, REGIONS[0]),
                          [[False, True], [True, True]])
    assert np.array_equal(region_mask(labels, REGIONS[2]),
                          [[False, False], [False, True]])


# ------------------------------------------------------------ bad files


def test_read_rejects_missing_and_short(tmp_path):
    with pytest.raises(ParseError):
        read_case(tmp_path / "nope.mmvc")
    short = tmp_path / "short.mmvc"
    short.write_bytes(b"MMVC\x01")
    with pytest.raises(ParseError):
        read_case(short)


def test_read_rejects_targeted_mutations(tmp_path):
    case = _small_case(5, edge=8)
    good = write_case(case, tmp_path / "good.mmvc").read_bytes()

    def expect_reject(blob, what):
        p = tmp_path / "bad.mmvc"
        p.write_bytes(blob)
        with pytest.raises(ParseError):
            read_case(p)
        read_case(write_case(case, tmp_path / "still.mmvc"))  # format intact

    expect_reject(b"XXXX" + good[4:], "magic")
    expect_reject(good[:4] + b"\x63\x00" + good[6:], "version")
    expect_reject(good[:6] + b"\x00" + good[7:], "M = 0")
    expect_reject(good[:-10], "truncation")
    expect_reject(good + b"\x00", "extension")
    flipped = bytearray(good)
    flipped[40] ^= 0xFF  # payload byte, caught by the crc
    expect_reject(bytes(flipped), "payload flip")
    crc = bytearray(good)
    crc[-1] ^= 0x01
    expect_reject(bytes(crc), "crc flip")


def test_read_survives_random_mutation_corpus(tmp_path):
    """Seeded flips, truncations, and splices must all raise ParseError."""
    case = _small_case(6, edge=8)
    good = write_case(case, tmp_path / "good.mmvc").read_bytes()
    rng = np.random.default_rng(70)
    p = tmp_path / "mut.mmvc"
    for i in range(40):
        blob = bytearray(good)
        kind = i % 4
        if kind == 0:
            blob[rng.integers(len(blob))] ^= int(rng.integers(1, 256))
        elif kind == 1:
            blob = blob[:rng.integers(1, len(blob))]
        elif kind == 2:
            blob += bytes(rng.integers(0, 256, rng.integers(1, 9),
                                       dtype=np.uint8))
        else:
            at = int(rng.integers(len(blob) - 8))
            blob[at:at + 8] = bytes(rng.integers(0, 256, 8, dtype=np.uint8))
        p.write_bytes(bytes(blob))
        with pytest.raises(ParseError):
            read_case(p)


# ------------------------------------------------------------ manifests


def test_manifest_round_trip(tmp_path):
    paths = []
    for i in range(3):
        case = _small_case(10 + i, edge=8)
        paths.append(write_case(case, tmp_path / f"c{i}.mmvc"))
    man = write_manifest(tmp_path / "manifest.txt", [p.name for p in paths])
    got = read_manifest(man)
    assert got == paths
    for p in got:
        read_case(p)


def test_manifest_skips_comments_and_blanks(tmp_path):
    man = tmp_path / "m.txt"
    man.write_text("# header\n\n  a.mmvc  \n# tail\nb.mmvc\n")
    got = read_manifest(man)
    assert [p.name for p in got] == ["a.mmvc", "b.mmvc"]
    assert all(p.parent == tmp_path for p in got)


def test_manifest_absolute_paths_kept(tmp_path):
    man = tmp_path / "m.txt"
    man.write_text("/abs/case.mmvc\n")
    assert str(read_manifest(man)[0]) == "/abs/case.mmvc"


def test_manifest_errors(tmp_path):
    with pytest.raises(ParseError):
        read_manifest(tmp_path / "missing.txt")
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ParseError):
        read_manifest(empty)


def test_parse_error_carries_offset(tmp_path):
    case = _small_case(7, edge=8)
    good = write_case(case, tmp_path / "good.mmvc").read_bytes()
    bad = tmp_path / "bad.mmvc"
    bad.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(ParseError) as err:
        read_case(bad)
    assert err.value.offset == 0
    assert str(caseio.MAGIC)[2:-1] in str(err.value)
