"""Binary PGM images, ``.meta`` spacing sidecars and the MREGF1 field format."""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .image import DisplacementField, Image, Mask

DEFAULT_SPACING = 0.05
FIELD_MAGIC = b"MREGF1\n"


class PGMFormatError(ValueError):
    """Header is not a binary P5 graymap we can read."""


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf: bytes):
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise PGMFormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise PGMFormatError(f"unsupported magic {tokens[0]!r}, expected P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PGMFormatError(f"non-integer PGM header fields {tokens[1:]!r}") from None
    if width < 1 or height < 1:
        raise PGMFormatError(f"bad PGM dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise PGMFormatError(f"unsupported maxval {maxval}; need 255 or 65535")
    # Exactly one whitespace byte separates the header from the raster.
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PGMFormatError("missing whitespace after PGM header")
    return width, height, maxval, pos + 1


def read_meta(path) -> dict[str, float]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = float(value)
    return meta


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".meta")


def load_pgm(path, spacing=None) -> Image:
    """Read a P5 graymap into an :class:`Image` normalized by maxval.

    Spacing comes from ``spacing`` if given, else the ``<name>.meta`` sidecar,
    else 0.05 mm.
    """
    buf = Path(path).read_bytes()
    width, height, maxval, start = _read_header(buf)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = buf[start : start + need]
    if len(payload) < need:
        raise OSError(f"{path}: truncated PGM payload ({len(payload)} of {need} bytes)")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width) / float(maxval)
    if spacing is None:
        sx = sy = DEFAULT_SPACING
        side = meta_path(path)
        if side.exists():
            meta = read_meta(side)
            sx = meta.get("spacing_x", sx)
            sy = meta.get("spacing_y", sy)
        spacing = (sx, sy)
    return Image(np.minimum(data, 1.0), spacing)


def save_pgm(image: Image, path, bit_depth: int = 16, write_meta: bool = True) -> None:
    """Write ``image`` as P5 with maxval 255 (8-bit) or 65535 (16-bit, big-endian)."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    maxval = 255 if bit_depth == 8 else 65535
    dtype = np.dtype("u1") if bit_depth == 8 else np.dtype(">u2")
    raster = np.rint(image.data * maxval).astype(dtype)
    header = b"P5\n%d %d\n%d\n" % (image.width, image.height, maxval)
    path = Path(path)
    path.write_bytes(header + raster.tobytes())
    if write_meta:
        sx, sy = image.spacing
        meta_path(path).write_text(f"spacing_x={sx!r}\nspacing_y={sy!r}\n")


def save_mask(mask: Mask, path) -> None:
    """Masks go out as 8-bit PGM, 0 or 255."""
    raster = np.where(mask.data, 255, 0).astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (mask.width, mask.height)
    Path(path).write_bytes(header + raster.tobytes())


def load_mask(path) -> Mask:
    img = load_pgm(path, spacing=(1.0, 1.0))
    return Mask(img.data >= 0.5)


def save_field(field: DisplacementField, path) -> None:
    """MREGF1: magic line, then width, height, spacing_x, spacing_y, the dx
    plane and the dy plane, all little-endian float32."""
    head = FIELD_MAGIC + struct.pack("<4f", field.width, field.height, *field.spacing)
    body = field.vectors.astype("<f4").tobytes()
    Path(path).write_bytes(head + body)


def load_field(path) -> DisplacementField:
    buf = Path(path).read_bytes()
    if not buf.startswith(FIELD_MAGIC):
        raise PGMFormatError(f"{path}: not an MREGF1 field file")
    off = len(FIELD_MAGIC)
    width, height, sx, sy = struct.unpack_from("<4f", buf, off)
    width, height = int(width), int(height)
    off += 16
    need = 2 * width * height * 4
    if len(buf) - off < need:
        raise OSError(f"{path}: truncated field payload")
    vec = np.frombuffer(buf, dtype="<f4", count=2 * width * height, offset=off)
    return DisplacementField(vec.reshape(2, height, width).astype(np.float64), (sx, sy))
