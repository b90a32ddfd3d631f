"""Binary container for named float64 arrays.

One file = header (8 magic bytes, u32 format version, length-prefixed UTF-8
metadata block) followed by named arrays. Every array is stored as
little-endian float64 with an explicit shape prefix, so a round trip is
bit-exact. Both the dataset container and the model checkpoint use this
layout, with different magic bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptContainer, VersionMismatch

DATASET_MAGIC = b"SVSQDAT1"
CHECKPOINT_MAGIC = b"SVSQCKP1"

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def write_container(path, magic: bytes, version: int, meta: str,
                    arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    meta_bytes = meta.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_U32.pack(version))
        fh.write(_U64.pack(len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(_U32.pack(len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            name_bytes = name.encode("utf-8")
            fh.write(_U16.pack(len(name_bytes)))
            fh.write(name_bytes)
            fh.write(_U16.pack(data.ndim))
            for dim in data.shape:
                fh.write(_U64.pack(dim))
            fh.write(data.tobytes())


def read_container(path, magic: bytes,
                   supported_versions: tuple[int, ...] = (1,)
                   ) -> tuple[int, str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CorruptContainer(f"truncated container: {path}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != magic:
        raise CorruptContainer(f"bad magic bytes in {path}")
    version = _U32.unpack(take(4))[0]
    if version not in supported_versions:
        raise VersionMismatch(
            f"container version {version} not in supported {supported_versions}"
        )
    meta_len = _U64.unpack(take(8))[0]
    meta = bytes(take(meta_len)).decode("utf-8")
    n_arrays = _U32.unpack(take(4))[0]
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        name_len = _U16.unpack(take(2))[0]
        name = bytes(take(name_len)).decode("utf-8")
        ndim = _U16.unpack(take(2))[0]
        shape = tuple(_U64.unpack(take(8))[0] for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        raw = take(count * 8)
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if pos != len(view):
        raise CorruptContainer(f"trailing bytes after arrays in {path}")
    return version, meta, arrays
