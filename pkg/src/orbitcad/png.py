"""Minimal deterministic PNG writer/reader for 8-bit RGBA images.

Output bytes are a pure function of the pixel array: fixed zlib level,
fixed strategy, filter type 0 on every scanline. That determinism is load
bearing for thumbnail tests, so no external imaging library is involved.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(Exception):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_png(pixels: np.ndarray) -> bytes:
    """pixels: (height, width, 4) uint8 RGBA."""
    if pixels.ndim != 3 or pixels.shape[2] != 4 or pixels.dtype != np.uint8:
        raise PngError(f"expected (h, w, 4) uint8 array, got {pixels.shape} {pixels.dtype}")
    h, w = pixels.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 6, 0, 0, 0)
    raw = np.zeros((h, w * 4 + 1), dtype=np.uint8)
    raw[:, 1:] = pixels.reshape(h, w * 4)
    compressor = zlib.compressobj(level=6, strategy=zlib.Z_DEFAULT_STRATEGY)
    idat = compressor.compress(raw.tobytes()) + compressor.flush()
    return _SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def decode_png(data: bytes) -> np.ndarray:
    if data[:8] != _SIGNATURE:
        raise PngError("not a PNG (bad signature)")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        if len(payload) != length:
            raise PngError(f"chunk {tag!r} truncated at byte {pos}")
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            break
        pos += 12 + length
    if ihdr is None:
        raise PngError("missing IHDR")
    w, h, depth, color, _comp, _filt, interlace = ihdr
    if depth != 8 or color != 6 or interlace != 0:
        raise PngError(f"only 8-bit RGBA non-interlaced supported, got depth={depth} color={color}")
    raw = np.frombuffer(zlib.decompress(bytes(idat)), dtype=np.uint8)
    stride = w * 4 + 1
    if raw.size != h * stride:
        raise PngError(f"decompressed size {raw.size} != expected {h * stride}")
    rows = raw.reshape(h, stride)
    out = np.zeros((h, w * 4), dtype=np.uint8)
    prev = np.zeros(w * 4, dtype=np.uint8)
    for i in range(h):
        ftype = rows[i, 0]
        line = rows[i, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:  # Up
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = _unfilter_scalar(ftype, line, prev)
        else:
            raise PngError(f"unknown filter type {ftype} on row {i}")
        out[i] = cur.astype(np.uint8)
        prev = out[i].astype(np.int32)
    return out.reshape(h, w, 4)


def _unfilter_scalar(ftype: int, line: np.ndarray, prev: np.ndarray) -> np.ndarray:
    bpp = 4
    cur = np.zeros_like(line)
    for x in range(line.size):
        a = cur[x - bpp] if x >= bpp else 0
        b = prev[x]
        if ftype == 1:  # Sub
            cur[x] = (line[x] + a) & 0xFF
        elif ftype == 3:  # Average
            cur[x] = (line[x] + (a + b) // 2) & 0xFF
        else:  # Paeth
            c = prev[x - bpp] if x >= bpp else 0
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
            cur[x] = (line[x] + pred) & 0xFF
    return cur
