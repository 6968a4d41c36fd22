"""Binary parameter container: magic ``LTEC``, u32 version, u32 count, then per
parameter u32 name length, UTF-8 name, u32 rank, u64 extents, little-endian f32 data."""
import struct

import numpy as np

MAGIC = b"LTEC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, arrays):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC or len(buf) < 12:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        out, off = _parse(buf, count)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt ({e})") from None
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def _parse(buf, count):
    off = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    return out, off


def save_params(path, store):
    write_checkpoint(path, {n: t.data for n, t in store.items()})


def load_params(path, store, strict=True):
    arrays = read_checkpoint(path)
    for name, t in store.items():
        if name not in arrays:
            if strict:
                raise CheckpointError(f"{path}: missing parameter {name}")
            continue
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name].astype(t.data.dtype)
    return store
