import numpy as np
import pytest

from nomadsim.bodies import ParticleSet, make_merger_ics, MergerConfig
from nomadsim.errors import (
    SnapshotChecksumError,
    SnapshotHeaderError,
    SnapshotTruncatedError,
)
from nomadsim.snapshots import (
    read_snapshot,
    snapshot_from_bytes,
    snapshot_size,
    snapshot_to_bytes,
    write_snapshot,
)


def random_particle_set(rng):
    n = int(rng.integers(1, 40))
    n_smbh = int(rng.integers(0, min(3, n) + 1))
    smbh = np.zeros(n, dtype=bool)
    smbh[rng.choice(n, size=n_smbh, replace=False)] = True
    return ParticleSet(
        ids=rng.permutation(10 * n)[:n],
        masses=np.exp(rng.normal(0.0, 2.0, n)),
        positions=rng.normal(0.0, 100.0, (n, 3)),
        velocities=rng.normal(0.0, 10.0, (n, 3)),
        smbh=smbh,
        time=float(rng.normal(0.0, 5.0)),
    )


def test_round_trip_bit_exact(tmp_path):
    ics = make_merger_ics(MergerConfig(n_per_galaxy=32, seed=1))
    ics.time = 1.375
    path = tmp_path / "snap.bin"
    n_written = write_snapshot(ics, path)
    assert n_written == snapshot_size(len(ics)) == path.stat().st_size
    back = read_snapshot(path)
    assert back == ics
    assert snapshot_to_bytes(back) == snapshot_to_bytes(ics)


def test_round_trip_file_object(tmp_path):
    import io

    ics = make_merger_ics(MergerConfig(n_per_galaxy=8, seed=2))
    buf = io.BytesIO()
    write_snapshot(ics, buf)
    buf.seek(0)
    assert read_snapshot(buf) == ics


def test_round_trip_randomized():
    # Read-after-write must be the identity on the byte representation.
    rng = np.random.default_rng(777)
    for _ in range(1000):
        ps = random_particle_set(rng)
        data = snapshot_to_bytes(ps)
        again = snapshot_to_bytes(snapshot_from_bytes(data))
        assert again == data


def test_order_preserved():
    rng = np.random.default_rng(5)
    ps = random_particle_set(rng)
    back = snapshot_from_bytes(snapshot_to_bytes(ps))
    assert np.array_equal(back.ids, ps.ids)


def test_empty_file_is_header_error():
    with pytest.raises(SnapshotHeaderError):
        snapshot_from_bytes(b"")


def test_bad_magic():
    data = bytearray(snapshot_to_bytes(make_merger_ics(MergerConfig(2, seed=0))))
    data[0] ^= 0xFF
    with pytest.raises(SnapshotHeaderError):
        snapshot_from_bytes(bytes(data))


def test_bad_version():
    data = bytearray(snapshot_to_bytes(make_merger_ics(MergerConfig(2, seed=0))))
    data[4] = 99
    with pytest.raises(SnapshotHeaderError):
        snapshot_from_bytes(bytes(data))


def test_truncated_body():
    data = snapshot_to_bytes(make_merger_ics(MergerConfig(4, seed=0)))
    with pytest.raises(SnapshotTruncatedError):
        snapshot_from_bytes(data[:-20])


def test_trailing_garbage():
    data = snapshot_to_bytes(make_merger_ics(MergerConfig(4, seed=0)))
    with pytest.raises(SnapshotTruncatedError):
        snapshot_from_bytes(data + b"x")


def test_flipped_checksum_byte():
    data = bytearray(snapshot_to_bytes(make_merger_ics(MergerConfig(4, seed=0))))
    data[-1] ^= 0x01
    with pytest.raises(SnapshotChecksumError):
        snapshot_from_bytes(bytes(data))


def test_flipped_body_byte():
    data = bytearray(snapshot_to_bytes(make_merger_ics(MergerConfig(4, seed=0))))
    data[40] ^= 0x10
    with pytest.raises(SnapshotChecksumError):
        snapshot_from_bytes(bytes(data))


def test_time_survives():
    ps = make_merger_ics(MergerConfig(2, seed=3))
    ps.time = 0.015625
    assert snapshot_from_bytes(snapshot_to_bytes(ps)).time == 0.015625
