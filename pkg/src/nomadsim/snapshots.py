"""Binary snapshot format for particle sets.

This is the payload that moves between nodes, so round-trips must be
bit-exact. Layout, all little-endian:

    offset  size  field
    0       4     magic "NMSN"
    4       4     format version (u32, currently 1)
    8       8     particle count n (u64)
    16      8     SMBH count (u64)
    24      8     simulation time (f64)
    32      65*n  particle records: id i64, mass f64, position 3*f64,
                  velocity 3*f64, smbh flag u8
    32+65n  4     CRC-32 of everything above (u32)

Parse failures raise distinct errors: bad/short header, short body, and
checksum mismatch are told apart so callers can report what broke.
"""

from __future__ import annotations

import io
import struct
import zlib
from os import PathLike
from pathlib import Path

import numpy as np

from .bodies import ParticleSet
from .errors import (
    SnapshotChecksumError,
    SnapshotHeaderError,
    SnapshotTruncatedError,
)

__all__ = [
    "snapshot_to_bytes",
    "snapshot_from_bytes",
    "write_snapshot",
    "read_snapshot",
    "SNAPSHOT_MAGIC",
    "SNAPSHOT_VERSION",
    "snapshot_size",
]

SNAPSHOT_MAGIC = b"NMSN"
SNAPSHOT_VERSION = 1

_HEADER = struct.Struct("<4sIQQd")
_CRC = struct.Struct("<I")
_RECORD_DTYPE = np.dtype(
    [
        ("id", "<i8"),
        ("mass", "<f8"),
        ("pos", "<f8", (3,)),
        ("vel", "<f8", (3,)),
        ("smbh", "<u1"),
    ]
)


def snapshot_size(n: int) -> int:
    """Total byte size of a snapshot holding n particles."""
    return _HEADER.size + n * _RECORD_DTYPE.itemsize + _CRC.size


def snapshot_to_bytes(ps: ParticleSet) -> bytes:
    records = np.empty(len(ps), dtype=_RECORD_DTYPE)
    records["id"] = ps.ids
    records["mass"] = ps.masses
    records["pos"] = ps.positions
    records["vel"] = ps.velocities
    records["smbh"] = ps.smbh.astype(np.uint8)
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, len(ps), ps.n_smbh, ps.time
    )
    payload = header + records.tobytes()
    return payload + _CRC.pack(zlib.crc32(payload))


def snapshot_from_bytes(data: bytes) -> ParticleSet:
    if len(data) < _HEADER.size:
        raise SnapshotHeaderError(
            f"snapshot too short for header ({len(data)} bytes)"
        )
    magic, version, n, n_smbh, time = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotHeaderError(f"bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotHeaderError(f"unsupported snapshot version {version}")
    expected = snapshot_size(n)
    if len(data) < expected:
        raise SnapshotTruncatedError(
            f"snapshot body truncated: have {len(data)} bytes, need {expected}"
        )
    if len(data) > expected:
        raise SnapshotTruncatedError(
            f"snapshot has {len(data) - expected} trailing bytes"
        )
    (crc_stored,) = _CRC.unpack_from(data, expected - _CRC.size)
    crc_actual = zlib.crc32(data[: expected - _CRC.size])
    if crc_stored != crc_actual:
        raise SnapshotChecksumError(
            f"checksum mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
        )
    records = np.frombuffer(
        data, dtype=_RECORD_DTYPE, count=n, offset=_HEADER.size
    )
    ps = ParticleSet(
        ids=records["id"].copy(),
        masses=records["mass"].copy(),
        positions=records["pos"].copy(),
        velocities=records["vel"].copy(),
        smbh=records["smbh"].astype(bool),
        time=time,
    )
    if ps.n_smbh != n_smbh:
        raise SnapshotHeaderError(
            f"header claims {n_smbh} SMBH particles, body has {ps.n_smbh}"
        )
    return ps


def write_snapshot(ps: ParticleSet, destination) -> int:
    """Serialize to a path or binary file object. Returns bytes written."""
    data = snapshot_to_bytes(ps)
    if isinstance(destination, (str, PathLike)):
        Path(destination).write_bytes(data)
    else:
        destination.write(data)
    return len(data)


def read_snapshot(source) -> ParticleSet:
    """Parse a snapshot from a path, binary file object, or bytes."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    elif isinstance(source, (str, PathLike)):
        data = Path(source).read_bytes()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        data = source.read()
    else:
        raise TypeError(f"cannot read a snapshot from {type(source)!r}")
    return snapshot_from_bytes(data)
