"""Named-tensor checkpoint container.

Layout (all little-endian)::

    8 bytes   magic  b"SPKGANTS"
    u32       version
    u32       entry count
    per entry:
      u32       name length, then UTF-8 name bytes
      u32       ndim, then ndim x u64 dimensions
      f64[...]  row-major payload
"""

import struct

import numpy as np

from ..errors import CorruptionError, FormatError

MAGIC = b"SPKGANTS"
VERSION = 1


def save_tensors(tensors, path):
    """Write a ``{name: array}`` mapping; order of insertion is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError(f"{path}: not a tensor checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(blob):
                raise CorruptionError(f"{path}: payload of {name!r} is truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
    except struct.error:
        raise CorruptionError(f"{path}: truncated checkpoint header") from None
    if pos != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
