"""Image file IO: 8-bit PNG, float PFM, and Radiance HDR.

PNG carries display-ready (gamma-encoded) values; PFM and HDR carry
linear radiance. The HDR reader handles both flat and new-style RLE
scanlines; the writer emits flat scanlines, which every Radiance-aware
loader accepts.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "write_png",
    "read_png",
    "write_pfm",
    "read_pfm",
    "read_hdr",
    "write_hdr",
    "read_radiance_image",
]


def write_png(path, image: np.ndarray) -> None:
    """Save an (H, W, 3) or (H, W) array of [0, 1] values as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode).save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# PFM: float32, rows stored bottom-to-top, negative scale = little-endian


def write_pfm(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None].repeat(3, axis=2)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        channels = 3 if header == b"PF" else 1
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    img = data.reshape(h, w, channels)[::-1].astype(np.float64)
    if channels == 1:
        img = img[..., 0:1].repeat(3, axis=2)
    if abs(scale) not in (0.0, 1.0):
        img = img * abs(scale)
    return np.ascontiguousarray(img)


# ---------------------------------------------------------------------------
# Radiance HDR (RGBE)


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.where(exp == 0, 0.0, np.ldexp(1.0, exp - 136))
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    peak = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    live = peak >= 1e-32
    mant, exp = np.frexp(peak[live])
    scale = mant * 256.0 / peak[live]
    out[live, :3] = np.clip(np.round(rgb[live] * scale[:, None]),
                            0, 255).astype(np.uint8)
    out[live, 3] = (exp + 128).astype(np.uint8)
    return out


def write_hdr(path, image: np.ndarray) -> None:
    """Write (H, W, 3) linear radiance as flat (non-RLE) Radiance HDR."""
    arr = np.asarray(image, dtype=np.float64)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\n")
        f.write(b"FORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode())
        f.write(_float_to_rgbe(arr).tobytes())


def _decode_rle_scanline(data: bytes, pos: int, width: int):
    line = np.empty((width, 4), dtype=np.uint8)
    for ch in range(4):
        x = 0
        while x < width:
            count = data[pos]
            pos += 1
            if count > 128:  # run of a repeated byte
                run = count - 128
                line[x:x + run, ch] = data[pos]
                pos += 1
            else:            # literal bytes
                line[x:x + count, ch] = np.frombuffer(
                    data, dtype=np.uint8, count=count, offset=pos)
                pos += count
            x += run if count > 128 else count
    return line, pos


def read_hdr(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"#?"):
        raise ValueError(f"{path}: not a Radiance HDR file")
    pos = 0
    resolution = None
    while True:
        end = blob.index(b"\n", pos)
        line = blob[pos:end]
        pos = end + 1
        if line.startswith(b"-Y") or line.startswith(b"+Y"):
            resolution = line.split()
            break
        if pos >= len(blob):
            raise ValueError(f"{path}: missing resolution line")
    if (resolution[0] != b"-Y" or resolution[2] != b"+X"):
        raise ValueError(f"{path}: unsupported scanline orientation")
    h, w = int(resolution[1]), int(resolution[3])

    rows = []
    for _ in range(h):
        head = blob[pos:pos + 4]
        if len(head) == 4 and head[0] == 2 and head[1] == 2 \
                and (head[2] << 8 | head[3]) == w and w >= 8:
            line, pos = _decode_rle_scanline(blob, pos + 4, w)
        else:
            line = np.frombuffer(blob, dtype=np.uint8, count=w * 4,
                                 offset=pos).reshape(w, 4)
            pos += w * 4
        rows.append(line)
    return _rgbe_to_float(np.stack(rows, axis=0))


def read_radiance_image(path) -> np.ndarray:
    """Load linear radiance from .hdr or .pfm by extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".hdr":
        return read_hdr(path)
    if suffix == ".pfm":
        return read_pfm(path)
    raise ValueError(f"unsupported radiance image format: {path}")
