"""TensorFile codec: magic "MEMT", ndim u8, dims u32 LE, float32 LE
row-major. Mirrors the signal pipeline's writer so the two packages stay
decoupled at the file boundary."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MEMT"


class TensorCodecError(Exception):
    pass


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 255:
        raise TensorCodecError(f"unsupported ndim {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 5:
        raise TensorCodecError(f"{path}: truncated tensor file")
    if blob[:4] != MAGIC:
        raise TensorCodecError(f"{path}: bad magic {blob[:4]!r}")
    ndim = blob[4]
    head = 5 + 4 * ndim
    if len(blob) < head:
        raise TensorCodecError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", blob, 5)
    count = int(np.prod(dims)) if ndim else 0
    body = blob[head:]
    if len(body) != 4 * count:
        raise TensorCodecError(f"{path}: payload {len(body)} bytes, expected {4 * count}")
    return np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float32)
