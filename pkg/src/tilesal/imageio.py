"""Image and saliency-map files.

Binary PGM (P5) and PPM (P6) are always available; PNG works when Pillow is
installed.  Raw saliency maps use a small ``.f32`` container: magic ``SMAP``,
u32 height, u32 width, then little-endian float32 values in row-major order.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .network import atomic_write

SMAP_MAGIC = b"SMAP"
_SMAP_HEADER = struct.Struct("<4sII")
PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


class ImageFormatError(ValueError):
    pass


def png_available() -> bool:
    try:
        import PIL  # noqa: F401
    except ImportError:
        return False
    return True


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated PNM header")
        if data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    """(H, W) for P5, (H, W, 3) for P6; uint8 or uint16 depending on maxval."""
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"not a binary PGM/PPM file (magic {data[:2]!r})")
    try:
        tokens, pos = _pnm_tokens(data, 4)
        _, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ImageFormatError(f"malformed PNM header: {exc}") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid PNM dimensions {w}x{h} / maxval {maxval}")
    channels = 3 if data[:2] == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    raster = data[pos : pos + n * dtype.itemsize]
    if len(raster) != n * dtype.itemsize:
        raise ImageFormatError(f"PNM raster truncated: expected {n * dtype.itemsize} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=dtype).astype(np.uint16 if maxval > 255 else np.uint8)
    return arr.reshape((h, w, 3) if channels == 3 else (h, w))


def encode_pnm(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in (np.uint8, np.uint16):
        raise ImageFormatError(f"PNM pixels must be uint8 or uint16, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot encode an array of shape {arr.shape} as PGM/PPM")
    h, w = arr.shape[:2]
    maxval = 255 if arr.dtype == np.uint8 else 65535
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    body = arr.astype(">u2").tobytes() if maxval > 255 else arr.tobytes()
    return header + body


def read_pixels(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc.strerror}") from None
    if path.suffix.lower() == ".png" or data[:8] == b"\x89PNG\r\n\x1a\n":
        if not png_available():
            raise ImageFormatError(f"{path}: PNG support needs Pillow (pip install tilesal[png])")
        import io

        from PIL import Image

        try:
            with Image.open(io.BytesIO(data)) as im:
                return np.asarray(im.convert("RGB" if im.mode not in ("L", "I;16") else im.mode))
        except Exception as exc:  # Pillow raises many types for bad data
            raise ImageFormatError(f"{path}: {exc}") from None
    return decode_pnm(data)


def write_pixels(path, arr: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not png_available():
            raise ImageFormatError("PNG output needs Pillow")
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        atomic_write(path, buf.getvalue())
    else:
        atomic_write(path, encode_pnm(arr))


def to_tensor(pixels: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) float32 in [0, 1]; grayscale is replicated to three channels."""
    scale = 65535.0 if pixels.dtype == np.uint16 else 255.0
    x = pixels.astype(np.float32) / np.float32(scale)
    if x.ndim == 2:
        x = np.repeat(x[None], 3, axis=0)
    else:
        x = x.transpose(2, 0, 1)
    return np.ascontiguousarray(x[None])


def read_image(path) -> np.ndarray:
    return to_tensor(read_pixels(path))


def quantize(smap: np.ndarray) -> np.ndarray:
    """Min-max scale a map to uint8; a constant map becomes all zeros."""
    s = np.asarray(smap, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi <= lo:
        return np.zeros(s.shape, dtype=np.uint8)
    return np.rint((s - lo) / (hi - lo) * 255.0).astype(np.uint8)


def encode_f32(smap: np.ndarray) -> bytes:
    s = np.ascontiguousarray(smap, dtype="<f4")
    if s.ndim != 2:
        raise ImageFormatError(f"saliency map must be 2-D, got {s.shape}")
    return _SMAP_HEADER.pack(SMAP_MAGIC, *s.shape) + s.tobytes()


def decode_f32(data: bytes) -> np.ndarray:
    if len(data) < _SMAP_HEADER.size:
        raise ImageFormatError("truncated .f32 map header")
    magic, h, w = _SMAP_HEADER.unpack_from(data)
    if magic != SMAP_MAGIC:
        raise ImageFormatError(f"not a raw saliency map (magic {magic!r})")
    body = data[_SMAP_HEADER.size :]
    if len(body) != 4 * h * w:
        raise ImageFormatError(f".f32 map body is {len(body)} bytes, expected {4 * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


def write_f32(path, smap: np.ndarray) -> None:
    atomic_write(path, encode_f32(smap))


def read_f32(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_f32(fh.read())


def read_map(path) -> np.ndarray:
    """Float map from ``.f32`` or any image file (first channel for colour images)."""
    if os.fspath(path).endswith(".f32"):
        return read_f32(path)
    px = read_pixels(path)
    if px.ndim == 3:
        px = px[..., 0]
    return px.astype(np.float32)


def write_saliency(path, smap: np.ndarray, raw: bool = False) -> list[Path]:
    """8-bit grayscale map at ``path``; with ``raw`` also ``<path stem>.f32``."""
    path = Path(path)
    written = [path]
    write_pixels(path, quantize(smap))
    if raw:
        side = path.with_suffix(".f32")
        write_f32(side, smap)
        written.append(side)
    return written
