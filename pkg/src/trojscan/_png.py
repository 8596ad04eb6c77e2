"""Minimal PNG reader/writer for 8-bit grayscale and RGB images.

Covers exactly what the dataset manifest format needs: bit depth 8,
color types 0 (gray) and 2 (RGB), no interlacing, no palette.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png(path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise ValueError("write_png expects uint8 pixels")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        color_type = 0
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type = 2
    else:
        raise ValueError(f"unsupported pixel shape {arr.shape}")
    height, width = arr.shape[:2]
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    flat = arr.reshape(height, -1)
    raw = b"".join(b"\x00" + flat[row].tobytes() for row in range(height))
    data = zlib.compress(raw, 9)
    with open(Path(path), "wb") as fh:
        fh.write(_SIGNATURE)
        fh.write(_chunk(b"IHDR", ihdr))
        fh.write(_chunk(b"IDAT", data))
        fh.write(_chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> bytearray:
    out = bytearray(height * stride)
    pos = 0
    for row in range(height):
        ftype = raw[pos]
        pos += 1
        line = raw[pos : pos + stride]
        pos += stride
        base = row * stride
        prev = row - 1
        for i, value in enumerate(line):
            left = out[base + i - bpp] if i >= bpp else 0
            up = out[prev * stride + i] if row > 0 else 0
            ul = out[prev * stride + i - bpp] if (row > 0 and i >= bpp) else 0
            if ftype == 0:
                rec = value
            elif ftype == 1:
                rec = value + left
            elif ftype == 2:
                rec = value + up
            elif ftype == 3:
                rec = value + ((left + up) >> 1)
            elif ftype == 4:
                rec = value + _paeth(left, up, ul)
            else:
                raise ValueError(f"unknown PNG filter type {ftype}")
            out[base + i] = rec & 0xFF
    return out


def read_png(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != _SIGNATURE:
        raise ValueError(f"{path}: not a PNG file")
    pos = 8
    width = height = None
    color_type = None
    idat = bytearray()
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color_type, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if depth != 8:
                raise ValueError(f"{path}: only bit depth 8 supported, got {depth}")
            if color_type not in (0, 2):
                raise ValueError(f"{path}: only gray/RGB supported, got color type {color_type}")
            if comp != 0 or filt != 0 or interlace != 0:
                raise ValueError(f"{path}: unsupported PNG encoding options")
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError(f"{path}: missing IHDR")
    channels = 1 if color_type == 0 else 3
    stride = width * channels
    raw = zlib.decompress(bytes(idat))
    if len(raw) != height * (stride + 1):
        raise ValueError(f"{path}: unexpected scanline payload size")
    out = _unfilter(raw, height, stride, channels)
    arr = np.frombuffer(bytes(out), dtype=np.uint8).reshape(height, width, channels)
    return arr
