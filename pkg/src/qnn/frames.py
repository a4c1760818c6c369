"""Minimal readers for frame inputs: binary PGM and YUV4MPEG2 luma."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import BadMagic, Truncated


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Binary (P5) PGM; returns (plane, bitdepth inferred from maxval)."""
    buf = Path(path).read_bytes()
    if not buf.startswith(b"P5"):
        raise BadMagic("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        m = re.match(rb"\s*(?:#[^\n]*\n\s*)*(\d+)", buf[pos:])
        if not m:
            raise Truncated("PGM header ends early")
        fields.append(int(m.group(1)))
        pos += m.end()
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    depth = max(maxval.bit_length(), 1)
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    if data.size < count:
        raise Truncated("PGM payload shorter than its dimensions")
    return data.reshape(h, w).astype(np.int64), depth


def write_pgm(path, plane: np.ndarray, bitdepth: int = 10) -> None:
    maxval = (1 << bitdepth) - 1
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else "u1"
    Path(path).write_bytes(header + plane.astype(dtype).tobytes())


def read_y4m_luma(path) -> tuple[np.ndarray, int]:
    """First-frame luma plane of a YUV4MPEG2 stream (4:2:0 or mono,
    8 or 10 bit)."""
    buf = Path(path).read_bytes()
    if not buf.startswith(b"YUV4MPEG2"):
        raise BadMagic("not a YUV4MPEG2 stream")
    nl = buf.index(b"\n")
    header = buf[:nl].decode("ascii", "replace").split(" ")
    w = h = 0
    colorspace = "420"
    for tok in header[1:]:
        if tok.startswith("W"):
            w = int(tok[1:])
        elif tok.startswith("H"):
            h = int(tok[1:])
        elif tok.startswith("C"):
            colorspace = tok[1:]
    if not w or not h:
        raise Truncated("stream header lacks dimensions")
    depth = 10 if "p10" in colorspace else 8
    pos = nl + 1
    if not buf[pos:].startswith(b"FRAME"):
        raise Truncated("no FRAME marker after stream header")
    pos = buf.index(b"\n", pos) + 1
    if depth == 8:
        count = w * h
        data = np.frombuffer(buf, dtype="u1", count=count, offset=pos)
    else:
        count = w * h
        data = np.frombuffer(buf, dtype="<u2", count=count, offset=pos)
    if data.size < count:
        raise Truncated("luma plane shorter than the header implies")
    return data.reshape(h, w).astype(np.int64), depth


def read_frame(path) -> tuple[np.ndarray, int]:
    """Dispatch on magic: PGM or YUV4MPEG2."""
    head = Path(path).read_bytes()[:9]
    if head.startswith(b"P5"):
        return read_pgm(path)
    if head.startswith(b"YUV4MPEG"):
        return read_y4m_luma(path)
    raise BadMagic(f"unrecognized frame container in {path}")
