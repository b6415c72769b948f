"""Dataset and model files.

Every artifact is a pair: a raw little-endian binary (8-byte floats,
complex values stored as interleaved real/imag pairs) and a JSON sidecar
carrying shapes, geometry, seeds and a format version.  The binary holds
numbers only; everything needed to interpret them lives in the sidecar.
"""

import hashlib
import json

import numpy as np

FORMAT_VERSION = 1


def write_complex(path_bin, arrays):
    """Write complex arrays to ``path_bin`` as interleaved re/im float64.

    Arrays are concatenated in order, each in C order.
    """
    with open(path_bin, "wb") as fh:
        for arr in arrays:
            a = np.ascontiguousarray(arr, dtype="<c16")
            fh.write(a.tobytes())


def read_complex(path_bin, shapes):
    """Read consecutive complex arrays with the given shapes."""
    out = []
    with open(path_bin, "rb") as fh:
        for shape in shapes:
            count = int(np.prod(shape, dtype=np.int64))
            buf = fh.read(16 * count)
            if len(buf) != 16 * count:
                raise ValueError("binary file truncated: %s" % path_bin)
            out.append(np.frombuffer(buf, dtype="<c16").reshape(shape).copy())
        if fh.read(1):
            raise ValueError("binary file has trailing bytes: %s" % path_bin)
    return out


def write_real(path_bin, arrays):
    """Write real arrays to ``path_bin`` as little-endian float64."""
    with open(path_bin, "wb") as fh:
        for arr in arrays:
            a = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(a.tobytes())


def read_real(path_bin, shapes):
    """Read consecutive real float64 arrays with the given shapes."""
    out = []
    with open(path_bin, "rb") as fh:
        for shape in shapes:
            count = int(np.prod(shape, dtype=np.int64))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError("binary file truncated: %s" % path_bin)
            out.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        if fh.read(1):
            raise ValueError("binary file has trailing bytes: %s" % path_bin)
    return out


def write_sidecar(path_json, meta):
    meta = dict(meta)
    meta.setdefault("version", FORMAT_VERSION)
    with open(path_json, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(path_json):
    with open(path_json) as fh:
        meta = json.load(fh)
    version = meta.get("version")
    if version != FORMAT_VERSION:
        raise ValueError(
            "unsupported format version %r in %s" % (version, path_json))
    return meta


def file_sha256(*paths):
    """Hex digest over the concatenated contents of the given files."""
    h = hashlib.sha256()
    for path in paths:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()
