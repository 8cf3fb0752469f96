"""Reading and writing the ``TNSRv1`` tensor binary format.

Layout: one ASCII header line ``TNSRv1 f64 <d> <p_1> ... <p_d>\\n`` followed by
``prod(p)`` little-endian binary64 values in mode-1 vectorization order.
Sample-stacked datasets use a ``(d+1)``-mode tensor whose first mode indexes
samples.
"""

from __future__ import annotations

import os

import numpy as np

from .tensor import DenseTensor

MAGIC = b"TNSRv1"
_LE_F64 = np.dtype("<f8")


class TensorFormatError(ValueError):
    pass


def encode_tensor(t: DenseTensor) -> bytes:
    header = " ".join(["TNSRv1", "f64", str(t.order), *map(str, t.dims)]) + "\n"
    return header.encode("ascii") + t.data.astype(_LE_F64).tobytes()


def decode_tensor(buf: bytes) -> DenseTensor:
    nl = buf.find(b"\n")
    if nl < 0:
        raise TensorFormatError("missing header line")
    fields = buf[:nl].split()
    if len(fields) < 3 or fields[0] != MAGIC or fields[1] != b"f64":
        raise TensorFormatError(f"bad header {buf[:nl]!r}")
    try:
        d = int(fields[2])
        dims = tuple(int(x) for x in fields[3:])
    except ValueError as exc:
        raise TensorFormatError(f"bad header {buf[:nl]!r}") from exc
    if d < 1 or len(dims) != d or any(p < 1 for p in dims):
        raise TensorFormatError(f"header declares order {d} but dims {dims}")
    count = int(np.prod(dims))
    body = buf[nl + 1:]
    if len(body) != count * 8:
        raise TensorFormatError(f"expected {count * 8} payload bytes, found {len(body)}")
    return DenseTensor(dims, np.frombuffer(body, dtype=_LE_F64).astype(np.float64))


def write_tensor(path: str | os.PathLike, t: DenseTensor | np.ndarray) -> None:
    if not isinstance(t, DenseTensor):
        t = DenseTensor.from_array(t)
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def read_tensor(path: str | os.PathLike) -> DenseTensor:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def read_array(path: str | os.PathLike) -> np.ndarray:
    """Read a tensor file and return it as an ndarray indexed ``[i_1, ..., i_d]``."""
    return read_tensor(path).to_array()
