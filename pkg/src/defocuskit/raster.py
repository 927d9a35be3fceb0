"""Image, depth map, and blur map containers plus their file formats.

Images travel as float32 in [0, 1], one or three channels.  Depth and blur
maps are float32 grids where NaN marks a pixel with no data.  On disk:

  * images: 8-bit PNG, or binary PGM (P5) / PPM (P6) with maxval 255
  * float maps: PFM, grayscale ``Pf`` variant, negative scale = little
    endian, rows stored bottom-up per the format's convention
  * blur maps: PFM with a ``# blurmap px`` comment so files self-describe

The PNM/PFM codecs are local because the error contract (parse failures
report a byte offset) and byte-exact round trips are load-bearing for the
rest of the toolkit; PNG goes through Pillow.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage
from PIL import UnidentifiedImageError

from .errors import DomainError, ParseError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

_RANGE_SLACK = 1e-6


@dataclass(frozen=True)
class Image:
    """Float image, (H, W) or (H, W, 3), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise DomainError("Image data must be (H, W) or (H, W, 3)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError("Image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise DomainError("Image data must be finite")
        if arr.min() < -_RANGE_SLACK or arr.max() > 1.0 + _RANGE_SLACK:
            raise DomainError("Image data must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else self.data.shape[2]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel scene depth in meters; NaN marks invalid pixels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError("DepthMap data must be a non-empty (H, W) grid")
        valid = ~np.isnan(arr)
        if np.any(~np.isfinite(arr[valid])) or np.any(arr[valid] <= 0.0):
            raise DomainError("DepthMap valid entries must be positive and finite")
        object.__setattr__(self, "data", arr)

    @property
    def mask(self):
        """Boolean grid, True where depth is usable."""
        return ~np.isnan(self.data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class BlurMap:
    """Per-pixel total blur sigma in output pixels; NaN marks invalid pixels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError("BlurMap data must be a non-empty (H, W) grid")
        valid = ~np.isnan(arr)
        if np.any(~np.isfinite(arr[valid])) or np.any(arr[valid] < 0.0):
            raise DomainError("BlurMap valid entries must be non-negative and finite")
        object.__setattr__(self, "data", arr)

    @property
    def mask(self):
        return ~np.isnan(self.data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def rgb_to_gray(img: Image) -> Image:
    """ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B.  Gray input passes through."""
    if img.channels == 1:
        return img
    w = np.asarray(GRAY_WEIGHTS, dtype=np.float32)
    gray = img.data @ w
    return Image(np.clip(gray, 0.0, 1.0))


# ---------------------------------------------------------------------------
# PNM / PFM header tokenizer

class _Tokens:
    """Whitespace-delimited header tokens with '#' comments and byte offsets."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def next(self, what: str) -> bytes:
        blob, n = self.blob, len(self.blob)
        while self.pos < n:
            byte = blob[self.pos : self.pos + 1]
            if byte == b"#":
                # comment runs to end of line
                end = blob.find(b"\n", self.pos)
                self.pos = n if end < 0 else end + 1
            elif byte.isspace():
                self.pos += 1
            else:
                break
        if self.pos >= n:
            raise ParseError("unexpected end of header, wanted %s" % what, offset=self.pos)
        start = self.pos
        while self.pos < n and not blob[self.pos : self.pos + 1].isspace():
            self.pos += 1
        return blob[start : self.pos]

    def next_int(self, what: str) -> int:
        start = self.pos
        tok = self.next(what)
        try:
            val = int(tok)
        except ValueError:
            raise ParseError("bad %s %r" % (what, tok), offset=start) from None
        return val

    def next_float(self, what: str) -> float:
        start = self.pos
        tok = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise ParseError("bad %s %r" % (what, tok), offset=start) from None

    def skip_one_whitespace(self):
        # exactly one whitespace byte separates the header from the payload
        if self.pos < len(self.blob) and self.blob[self.pos : self.pos + 1].isspace():
            self.pos += 1


def _payload(blob: bytes, pos: int, count: int, dtype) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    need = count * itemsize
    if len(blob) - pos < need:
        raise ParseError(
            "payload truncated: need %d bytes, have %d" % (need, len(blob) - pos),
            offset=len(blob),
        )
    if len(blob) - pos > need:
        raise ParseError("trailing bytes after payload", offset=pos + need)
    return np.frombuffer(blob, dtype=dtype, count=count, offset=pos)


# ---------------------------------------------------------------------------
# 8-bit images

def _decode_pnm(blob: bytes) -> Image:
    toks = _Tokens(blob)
    magic = toks.next("magic")
    channels = {b"P5": 1, b"P6": 3}[magic]
    width = toks.next_int("width")
    height = toks.next_int("height")
    if width < 1 or height < 1:
        raise ParseError("bad dimensions %dx%d" % (width, height), offset=0)
    maxval_at = toks.pos
    maxval = toks.next_int("maxval")
    if maxval != 255:
        raise ParseError("unsupported maxval %d, only 8-bit supported" % maxval, offset=maxval_at)
    toks.skip_one_whitespace()
    raw = _payload(blob, toks.pos, width * height * channels, np.uint8)
    arr = raw.reshape((height, width) if channels == 1 else (height, width, 3))
    return Image(arr.astype(np.float32) / 255.0)


def _decode_png(blob: bytes) -> Image:
    try:
        pil = _PILImage.open(io.BytesIO(blob))
        pil.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ParseError("broken PNG: %s" % exc) from exc
    if pil.mode == "L":
        arr = np.asarray(pil, dtype=np.uint8)
    elif pil.mode == "RGB":
        arr = np.asarray(pil, dtype=np.uint8)
    else:
        raise ParseError("unsupported PNG mode %r, need 8-bit L or RGB" % pil.mode)
    return Image(arr.astype(np.float32) / 255.0)


def load_image(path) -> Image:
    """Load a PNG / PGM / PPM file; format is sniffed from the magic bytes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob.startswith(b"\x89PNG"):
        return _decode_png(blob)
    if blob.startswith(b"P5") or blob.startswith(b"P6"):
        return _decode_pnm(blob)
    raise ParseError("unrecognized image magic %r" % blob[:2], offset=0)


def _quantize(img: Image) -> np.ndarray:
    return np.round(img.data * 255.0).astype(np.uint8)


def save_image(img: Image, path) -> None:
    """Write PNG (.png), PGM (.pgm, gray only) or PPM (.ppm, color only).

    A bare array is accepted and run through Image's validation; ndarray has
    a .data attribute of its own, so without the coercion a raw array would
    fail deep inside quantization with a useless message.
    """
    if not isinstance(img, Image):
        img = Image(img)
    name = str(path).lower()
    u8 = _quantize(img)
    if name.endswith(".png"):
        pil = _PILImage.fromarray(u8, mode="L" if img.channels == 1 else "RGB")
        pil.save(path, format="PNG")
        return
    if name.endswith(".pgm"):
        if img.channels != 1:
            raise DomainError("PGM stores a single channel; convert with rgb_to_gray first")
        header = b"P5\n%d %d\n255\n" % (img.width, img.height)
    elif name.endswith(".ppm"):
        if img.channels != 3:
            raise DomainError("PPM stores three channels")
        header = b"P6\n%d %d\n255\n" % (img.width, img.height)
    else:
        raise DomainError("unsupported image extension for %r" % str(path))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(u8.tobytes())


# ---------------------------------------------------------------------------
# Float maps (PFM)

def _decode_pfm(blob: bytes) -> np.ndarray:
    toks = _Tokens(blob)
    at = toks.pos
    magic = toks.next("magic")
    if magic == b"PF":
        raise ParseError("color PFM not supported, maps are single channel", offset=at)
    if magic != b"Pf":
        raise ParseError("bad PFM magic %r" % magic, offset=at)
    width = toks.next_int("width")
    height = toks.next_int("height")
    if width < 1 or height < 1:
        raise ParseError("bad dimensions %dx%d" % (width, height), offset=0)
    scale = toks.next_float("scale")
    if scale == 0.0:
        raise ParseError("PFM scale must be non-zero", offset=toks.pos)
    toks.skip_one_whitespace()
    dtype = "<f4" if scale < 0.0 else ">f4"
    raw = _payload(blob, toks.pos, width * height, dtype)
    arr = raw.reshape((height, width)).astype("<f4")
    # PFM scanlines run bottom to top
    arr = np.flipud(arr)
    factor = abs(scale)
    if factor != 1.0:
        arr = arr * np.float32(factor)
    return np.ascontiguousarray(arr)


def _encode_pfm(data: np.ndarray, comment: str | None = None) -> bytes:
    height, width = data.shape
    lines = [b"Pf\n"]
    if comment:
        lines.append(b"# " + comment.encode("ascii") + b"\n")
    lines.append(b"%d %d\n" % (width, height))
    lines.append(b"-1.0\n")
    payload = np.flipud(np.asarray(data, dtype="<f4")).tobytes()
    return b"".join(lines) + payload


def load_depth(path) -> DepthMap:
    with open(path, "rb") as fh:
        return DepthMap(_decode_pfm(fh.read()))


def save_depth(dm: DepthMap, path) -> None:
    if not isinstance(dm, DepthMap):
        dm = DepthMap(dm)
    with open(path, "wb") as fh:
        fh.write(_encode_pfm(dm.data))


def load_blur(path) -> BlurMap:
    with open(path, "rb") as fh:
        return BlurMap(_decode_pfm(fh.read()))


def save_blur(bm: BlurMap, path) -> None:
    if not isinstance(bm, BlurMap):
        bm = BlurMap(bm)
    with open(path, "wb") as fh:
        fh.write(_encode_pfm(bm.data, comment="blurmap px"))
