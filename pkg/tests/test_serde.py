import numpy as np
import pytest

from statprec import serde


def test_complex_round_trip(tmp_path, rng):
    a = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    b = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    path = tmp_path / "blob.bin"
    serde.write_complex(path, [a, b])
    a2, b2 = serde.read_complex(path, [(3, 4), (5,)])
    assert np.array_equal(a, a2)
    assert np.array_equal(b, b2)


def test_real_round_trip(tmp_path, rng):
    a = rng.standard_normal((2, 6))
    path = tmp_path / "blob.bin"
    serde.write_real(path, [a])
    (a2,) = serde.read_real(path, [(2, 6)])
    assert np.array_equal(a, a2)


def test_truncated_file_rejected(tmp_path, rng):
    a = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    path = tmp_path / "blob.bin"
    serde.write_complex(path, [a])
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        serde.read_complex(path, [(8,)])


def test_trailing_bytes_rejected(tmp_path, rng):
    a = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    path = tmp_path / "blob.bin"
    serde.write_complex(path, [a])
    path.write_bytes(path.read_bytes() + b"\x00" * 16)
    with pytest.raises(ValueError):
        serde.read_complex(path, [(8,)])


def test_sidecar_round_trip_and_version(tmp_path):
    path = tmp_path / "meta.json"
    serde.write_sidecar(path, {"kind": "test", "count": 3})
    meta = serde.read_sidecar(path)
    assert meta["kind"] == "test"
    assert meta["count"] == 3
    assert meta["version"] == serde.FORMAT_VERSION

    path.write_text(meta_text := path.read_text().replace(
        '"version": %d' % serde.FORMAT_VERSION, '"version": 999'))
    assert '"version": 999' in meta_text
    with pytest.raises(ValueError):
        serde.read_sidecar(path)
