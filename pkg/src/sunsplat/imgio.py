"""Image I/O: 8-bit PNG for previews and masks, PFM for float data.

Image planes are plain float64 numpy arrays, (H, W) or (H, W, C) with
C in {1, 3}; masks are restricted to values {0, 1}.
"""
from __future__ import annotations

import numpy as np
from PIL import Image


def ensure_image(arr: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"{name}: expected (H, W) or (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite samples")
    return arr


def write_png(path, img: np.ndarray) -> None:
    """Clamp to [0, 1] and quantize to 8 bits."""
    img = ensure_image(img)
    q = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L" if q.ndim == 2 else "RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr.astype(np.float64) / 255.0


def write_pfm(path, img: np.ndarray) -> None:
    img = ensure_image(img)
    color = img.ndim == 3
    header = b"PF\n" if color else b"Pf\n"
    h, w = img.shape[:2]
    data = np.flipud(img).astype("<f4")  # PFM stores rows bottom-to-top
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale marks little-endian
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        count = w * h * (3 if magic == b"PF" else 1)
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
        dtype = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    shape = (h, w, 3) if magic == b"PF" else (h, w)
    return np.flipud(arr.reshape(shape)).copy()
