"""Raster file IO: binary PPM (P6) for images, binary PGM (P5) for masks and
label maps, and BFR for float32 blast-field rasters.

BFR layout: one ASCII header line "BFR1 <H> <W> <C>\\n" followed by H*W*C
little-endian float32 values, channel index varying fastest. All writers
emit canonical bytes, so write -> read -> write roundtrips are byte-exact.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "RasterError",
    "MagicError",
    "HeaderError",
    "TruncatedError",
    "write_ppm",
    "read_ppm",
    "write_pgm",
    "read_pgm",
    "write_bfr",
    "read_bfr",
]


class RasterError(ValueError):
    """Base class for raster decode failures."""


class MagicError(RasterError):
    """The file does not start with the expected format tag."""


class HeaderError(RasterError):
    """The header is present but malformed."""


class TruncatedError(RasterError):
    """The payload is shorter than the header promises."""


def _read_file(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _parse_netpbm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    """Parse '<magic> <w> <h> <maxval>' allowing any whitespace between tokens.

    Returns (width, height, maxval, payload offset).
    """
    if not raw.startswith(magic):
        raise MagicError(f"{path}: expected {magic.decode()} magic")
    pos = len(magic)
    values = []
    while len(values) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token:
            raise HeaderError(f"{path}: truncated header")
        try:
            values.append(int(token))
        except ValueError:
            raise HeaderError(f"{path}: non-numeric header field {token!r}") from None
    if pos >= len(raw):
        raise HeaderError(f"{path}: header not terminated")
    pos += 1  # single whitespace byte separates header from payload
    width, height, maxval = values
    if width < 1 or height < 1 or not (0 < maxval < 256):
        raise HeaderError(f"{path}: invalid header values {values}")
    return width, height, maxval, pos


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("write_ppm expects a uint8 (H, W, 3) array")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = _read_file(path)
    width, height, _, offset = _parse_netpbm_header(raw, b"P6", path)
    need = width * height * 3
    payload = raw[offset : offset + need]
    if len(payload) < need:
        raise TruncatedError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("write_pgm expects a uint8 (H, W) array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = _read_file(path)
    width, height, _, offset = _parse_netpbm_header(raw, b"P5", path)
    need = width * height
    payload = raw[offset : offset + need]
    if len(payload) < need:
        raise TruncatedError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_bfr(path, field: np.ndarray) -> None:
    field = np.asarray(field, dtype=np.float32)
    if field.ndim != 3:
        raise ValueError("write_bfr expects an (H, W, C) array")
    h, w, c = field.shape
    with open(path, "wb") as fh:
        fh.write(f"BFR1 {h} {w} {c}\n".encode())
        fh.write(np.ascontiguousarray(field).astype("<f4").tobytes())


def read_bfr(path) -> np.ndarray:
    raw = _read_file(path)
    if not raw.startswith(b"BFR1"):
        raise MagicError(f"{path}: expected BFR1 magic")
    newline = raw.find(b"\n")
    if newline < 0:
        raise HeaderError(f"{path}: header line not terminated")
    parts = raw[:newline].split()
    if len(parts) != 4:
        raise HeaderError(f"{path}: header must be 'BFR1 H W C'")
    try:
        h, w, c = (int(p) for p in parts[1:])
    except ValueError:
        raise HeaderError(f"{path}: non-numeric header field") from None
    if h < 1 or w < 1 or c < 1:
        raise HeaderError(f"{path}: invalid dimensions {h}x{w}x{c}")
    need = h * w * c * 4
    payload = raw[newline + 1 : newline + 1 + need]
    if len(payload) < need:
        raise TruncatedError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()
