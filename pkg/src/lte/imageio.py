"""HDR (PFM) and LDR (PNG) image files."""
from pathlib import Path

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


def write_pfm(path, image):
    """RGB float image (H, W, 3) as little-endian PFM, rows stored bottom-up."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"PFM needs an (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"PF":
        raise ImageFormatError(f"{path}: not an RGB PFM file")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError as e:
        raise ImageFormatError(f"{path}: malformed header") from e
    if scale != -1.0:
        raise ImageFormatError(f"{path}: scale/endianness field must be -1.0, got {scale}")
    data = parts[3]
    if len(data) != w * h * 12:
        raise ImageFormatError(f"{path}: expected {w * h * 12} data bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(h, w, 3)[::-1].copy()


def tonemap(image):
    """Reinhard x / (1 + x), clamped at zero."""
    x = np.maximum(np.asarray(image, dtype=np.float64), 0.0)
    return x / (1.0 + x)


def to_ldr(image, gamma=2.2):
    return np.round(np.clip(tonemap(image) ** (1.0 / gamma), 0, 1) * 255).astype(np.uint8)


def write_png(path, image, gamma=2.2):
    """Tone-mapped, gamma-encoded 8-bit PNG of an HDR image."""
    Image.fromarray(to_ldr(image, gamma), mode="RGB").save(path)
