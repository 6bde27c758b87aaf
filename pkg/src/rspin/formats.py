"""Binary file formats: FMAT feature matrices and RSPN checkpoints.

All integers and floats are little-endian.

FMAT::

    b"FMAT" | u32 rows | u32 cols | float32[rows * cols] (row-major)

RSPN::

    b"RSPN" | u16 version | block*
    block = u16 name_len | utf-8 name | u32 rows | u32 cols | float64[rows * cols]
"""

import struct

import numpy as np

FMAT_MAGIC = b"FMAT"
CKPT_MAGIC = b"RSPN"
CKPT_VERSION = 1


def write_fmat(path, X):
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"FMAT stores 2-D matrices, got shape {X.shape}")
    with open(path, "wb") as f:
        f.write(FMAT_MAGIC + struct.pack("<II", *X.shape))
        f.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def read_fmat(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != FMAT_MAGIC:
        raise ValueError(f"{path}: not an FMAT file")
    rows, cols = struct.unpack_from("<II", data, 4)
    payload = data[12:]
    if len(payload) != rows * cols * 4:
        raise ValueError(f"{path}: expected {rows}x{cols} floats, found {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_checkpoint(path, params):
    """Write an ordered mapping of name -> 2-D float64 array."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<H", CKPT_VERSION))
        for name, value in params.items():
            value = np.atleast_2d(np.asarray(value, dtype=np.float64))
            if value.ndim != 2:
                raise ValueError(f"parameter {name!r} is not 2-D")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw + struct.pack("<II", *value.shape))
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 6 or data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not an RSPN checkpoint")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    params = {}
    off = 6
    try:
        while off < len(data):
            (n,) = struct.unpack_from("<H", data, off)
            name = data[off + 2: off + 2 + n].decode("utf-8")
            rows, cols = struct.unpack_from("<II", data, off + 2 + n)
            off += 2 + n + 8
            size = rows * cols * 8
            if off + size > len(data):
                raise ValueError(f"{path}: truncated block {name!r}")
            params[name] = np.frombuffer(data[off: off + size], dtype="<f8").reshape(rows, cols).copy()
            off += size
    except struct.error:
        raise ValueError(f"{path}: truncated checkpoint") from None
    return params
