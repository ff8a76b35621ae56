"""Binary checkpoint format.

Layout: magic b"MLAB1", one version byte, then repeated records of
(u16 name length, utf-8 name, u8 dtype code, u8 rank, rank x u32 dims,
little-endian payload).  dtype code 0 = float32 (the default training dtype),
1 = float64.  Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MLAB1"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        for name, a in arrays.items():
            a = np.asarray(a)
            if a.dtype not in _CODES_BY_KIND:
                raise ValueError(f"unsupported checkpoint dtype for {name}: {a.dtype}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _CODES_BY_KIND[a.dtype], a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(np.ascontiguousarray(a, dtype=_DTYPE_CODES[_CODES_BY_KIND[a.dtype]]).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        while True:
            head = f.read(2)
            if not head:
                break
            (nlen,) = struct.unpack("<H", head)
            name = f.read(nlen).decode("utf-8")
            code, rank = struct.unpack("<BB", f.read(2))
            if code not in _DTYPE_CODES:
                raise ValueError(f"unknown dtype code {code} for {name}")
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            dt = _DTYPE_CODES[code]
            count = int(np.prod(dims)) if dims else 1
            payload = f.read(count * dt.itemsize)
            if len(payload) != count * dt.itemsize:
                raise ValueError(f"truncated payload for {name}")
            arrays[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    return arrays
