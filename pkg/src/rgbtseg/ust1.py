"""The ``UST1`` binary tensor record and the named-record container built on it.

Record layout (all integers little-endian)::

    b"UST1" | u32 rank | rank x u32 dims | u8 dtype code | raw row-major payload

dtype codes: 0 = float32, 1 = uint16, 2 = uint8.

A named container (checkpoints, prior bundles) is a plain concatenation of
``u32 name length | UTF-8 name | UST1 record`` entries.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"UST1"
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<u2"): 1, np.dtype("u1"): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    """A UST1 stream is malformed or truncated."""


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype.kind == "f" and arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    if dt not in DTYPE_CODES:
        raise TypeError(f"UST1 cannot store dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=dt)
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + struct.pack("<B", DTYPE_CODES[dt]) + arr.tobytes(order="C")


def _read_exact(fh: BinaryIO, n: int, what: str, source: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{source}: truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_record(fh: BinaryIO, source: str = "<stream>") -> np.ndarray:
    magic = _read_exact(fh, 4, "magic", source)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank", source))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims", source)) if rank else ()
    (code,) = struct.unpack("<B", _read_exact(fh, 1, "dtype code", source))
    if code not in CODE_DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    dt = CODE_DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    payload = _read_exact(fh, nbytes, "payload", source)
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def save(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing tensor file: {path}")
    with path.open("rb") as fh:
        arr = read_record(fh, str(path))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after record")
    return arr


def save_named(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = []
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + encode(arr))
    Path(path).write_bytes(b"".join(parts))


def load_named(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    out: dict[str, np.ndarray] = {}
    with path.open("rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError(f"{path}: truncated name length")
            (n,) = struct.unpack("<I", head)
            name = _read_exact(fh, n, "name", str(path)).decode("utf-8")
            out[name] = read_record(fh, f"{path}[{name}]")
    return out


def text_to_u8(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def u8_to_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8")
