"""Binary checkpoint container.

Layout (little-endian): the 8-byte magic ``BLNDCKPT``, one version byte,
then records of ``name_len:u32, name:utf8, rank:u32, shape:u32[rank],
data:f64[prod(shape)]`` until end of file. Records are written sorted by
name so identical weights always produce identical bytes.
"""
import struct

import numpy as np

MAGIC = b"BLNDCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays):
    parts = [MAGIC, bytes([VERSION])]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic header")
    if len(blob) < 9 or blob[8] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[8] if len(blob) > 8 else None}")
    pos = 9
    out = {}
    try:
        while pos < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointError(f"record {name!r} truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    return out


def save(path, arrays):
    with open(path, "wb") as fh:
        fh.write(dumps(arrays))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
