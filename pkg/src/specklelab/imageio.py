"""Reading and writing gray images.

Native format (``.gimg``)::

    GIMG1\\n
    <height> <width>\\n
    height*width little-endian float64, row-major

Binary PGM (``P5``) is read and written with linear quantization
``round(v * maxval)`` clamped to ``[0, maxval]`` (8-bit for maxval < 256,
16-bit big-endian otherwise). Binary PPM (``P6``) and anything Pillow can
decode are accepted on load and converted to gray with BT.601 luma weights.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import HeaderError, TruncatedError, UnsupportedFormatError
from .speckle import as_gray, to_grayscale

GIMG_MAGIC = b"GIMG1\n"
_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def encode_gimg(image) -> bytes:
    image = as_gray(image)
    h, w = image.shape
    return GIMG_MAGIC + f"{h} {w}\n".encode("ascii") + image.astype("<f8").tobytes()


def decode_gimg(buf: bytes) -> np.ndarray:
    if not buf.startswith(GIMG_MAGIC):
        raise HeaderError("missing GIMG1 magic")
    end = buf.find(b"\n", len(GIMG_MAGIC))
    if end < 0:
        raise HeaderError("unterminated GIMG1 dimension line")
    try:
        h, w = (int(t) for t in buf[len(GIMG_MAGIC) : end].split())
    except ValueError:
        raise HeaderError("GIMG1 dimension line must be '<height> <width>'") from None
    if h < 1 or w < 1:
        raise HeaderError(f"invalid GIMG1 dimensions {h}x{w}")
    payload = buf[end + 1 :]
    need = 8 * h * w
    if len(payload) < need:
        raise TruncatedError(f"GIMG1 payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise HeaderError(f"GIMG1 payload has {len(payload) - need} trailing bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(h, w).astype(np.float64)


def _pnm_header(buf: bytes, count: int) -> tuple[list[int], int]:
    pos = 2
    values = []
    for _ in range(count):
        m = _PNM_TOKEN.match(buf, pos)
        if m is None:
            raise HeaderError("incomplete PNM header")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise HeaderError(f"non-numeric PNM header token {m.group(1)!r}") from None
        pos = m.end()
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise HeaderError("PNM header must end with a single whitespace byte")
    return values, pos + 1


def decode_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise UnsupportedFormatError(f"unsupported PNM magic {magic!r}")
    (w, h, maxval), start = _pnm_header(buf, 3)
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise HeaderError(f"invalid PNM header: {w}x{h}, maxval {maxval}")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = w * h * channels * dtype.itemsize
    payload = buf[start : start + need]
    if len(payload) < need:
        raise TruncatedError(f"PNM payload has {len(payload)} bytes, expected {need}")
    pix = np.frombuffer(payload, dtype=dtype).reshape((h, w, channels) if channels > 1 else (h, w))
    return to_grayscale(pix, maxval)


def encode_pgm(image, bits: int = 8) -> bytes:
    if bits not in (8, 16):
        raise ValueError("PGM depth must be 8 or 16 bits")
    image = as_gray(image)
    maxval = 255 if bits == 8 else 65535
    q = np.clip(np.rint(image * maxval), 0, maxval)
    h, w = image.shape
    dtype = "u1" if bits == 8 else ">u2"
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.astype(dtype).tobytes()


def load_image(path) -> np.ndarray:
    """Load a gray image from ``path``; format is sniffed from the content."""
    path = Path(path)
    buf = path.read_bytes()
    if buf.startswith(b"GIMG"):
        return decode_gimg(buf)
    if buf[:2] in (b"P5", b"P6"):
        return decode_pnm(buf)
    if buf[:1] == b"P" and buf[1:2].isdigit():
        raise UnsupportedFormatError(f"{path}: only binary PGM/PPM are supported")
    return _load_with_pillow(path)


def _load_with_pillow(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                return to_grayscale(np.asarray(im), 65535)
            if im.mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGB")
            return to_grayscale(np.asarray(im), 255)
    except UnidentifiedImageError:
        raise UnsupportedFormatError(f"{path}: unrecognised image format") from None
    except (OSError, SyntaxError) as exc:
        raise TruncatedError(f"{path}: {exc}") from None


def save_image(image, path, fmt: str | None = None) -> Path:
    """Write ``image``; ``fmt`` is 'gimg', 'pgm8' or 'pgm16' (default from suffix).

    ``.pgm`` defaults to 8 bits; anything else defaults to the native format.
    """
    path = Path(path)
    if fmt is None:
        fmt = "pgm8" if path.suffix.lower() == ".pgm" else "gimg"
    if fmt == "gimg":
        data = encode_gimg(image)
    elif fmt in ("pgm8", "pgm16"):
        data = encode_pgm(image, 8 if fmt == "pgm8" else 16)
    else:
        raise UnsupportedFormatError(f"unknown output format {fmt!r}")
    path.write_bytes(data)
    return path
