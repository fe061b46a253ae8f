"""Byteplot conversion: raw bytes to fixed-width gray or RGB rasters."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._parallel import ordered_map
from .errors import EmptyInput, FormatError, ShapeError

KB = 1024

# (exclusive upper bound in bytes, width); bands are half-open [lo, hi)
WIDTH_RULE = (
    (10 * KB, 32),
    (30 * KB, 64),
    (60 * KB, 128),
    (100 * KB, 256),
    (200 * KB, 384),
    (500 * KB, 512),
    (1000 * KB, 768),
    (None, 1024),
)

HEIGHT_MULTIPLE = 32
DEFAULT_SIDE = 256

RAW_MAGIC = b"MLIM"
_RAW_HEADER = struct.Struct("<4sHHB7x")


@dataclass(frozen=True, eq=False)
class ByteImage:
    """An unsigned 8-bit raster.

    ``pixels`` has shape ``(height, width)`` for gray images and
    ``(height, width, 3)`` for RGB; ``pixels.tobytes()`` is the row-major,
    channel-interleaved sample stream.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ShapeError(f"pixels must be uint8, got {px.dtype}")
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 3):
            raise ShapeError(f"pixels must be (h, w) or (h, w, 3), got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ShapeError("image has a zero-length side")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return 1 if self.pixels.ndim == 2 else 3

    def __eq__(self, other):
        if not isinstance(other, ByteImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


def width_for_size(file_size):
    """Image width for a file of ``file_size`` bytes (Malimg width table)."""
    if file_size <= 0:
        raise EmptyInput("cannot pick a width for an empty file")
    for bound, width in WIDTH_RULE:
        if bound is None or file_size < bound:
            return width
    raise AssertionError("unreachable")


def _as_buffer(data):
    if isinstance(data, np.ndarray):
        return np.ascontiguousarray(data, dtype=np.uint8).ravel()
    return np.frombuffer(bytes(data), dtype=np.uint8)


def _padded_height(n_rows):
    return -(-n_rows // HEIGHT_MULTIPLE) * HEIGHT_MULTIPLE


def to_gray_image(data):
    buf = _as_buffer(data)
    n = buf.size
    if n == 0:
        raise EmptyInput("empty input")
    width = width_for_size(n)
    height = _padded_height(-(-n // width))
    out = np.zeros(height * width, dtype=np.uint8)
    out[:n] = buf
    return ByteImage(out.reshape(height, width))


def to_rgb_image(data):
    """Three consecutive bytes form one RGB pixel; the tail is zero-padded."""
    buf = _as_buffer(data)
    n = buf.size
    if n == 0:
        raise EmptyInput("empty input")
    width = width_for_size(n)
    n_pixels = -(-n // 3)
    height = _padded_height(-(-n_pixels // width))
    out = np.zeros(height * width * 3, dtype=np.uint8)
    out[:n] = buf
    return ByteImage(out.reshape(height, width, 3))


def resize_square(img, side=DEFAULT_SIDE):
    """Nearest-neighbour resample to ``side`` x ``side``.

    Output pixel (y, x) takes source pixel (y*H // side, x*W // side).
    """
    if side <= 0:
        raise ShapeError("side must be positive")
    if img.height == side and img.width == side:
        return img
    rows = (np.arange(side) * img.height) // side
    cols = (np.arange(side) * img.width) // side
    return ByteImage(img.pixels[rows[:, None], cols[None, :]])


def load_bytes(path):
    return Path(path).read_bytes()


def convert_file(path, rgb=False, side=DEFAULT_SIDE):
    """Read a file and return its resized byteplot (``side=None`` skips resizing)."""
    data = load_bytes(path)
    img = to_rgb_image(data) if rgb else to_gray_image(data)
    return img if side is None else resize_square(img, side)


# -- serialization -----------------------------------------------------------


def dump_raw(img):
    """16-byte ``MLIM`` header followed by the row-major samples."""
    if img.width > 0xFFFF or img.height > 0xFFFF:
        raise ShapeError("image too large for the raw dump header")
    head = _RAW_HEADER.pack(RAW_MAGIC, img.width, img.height, img.channels)
    return head + img.pixels.tobytes()


def load_raw(blob):
    if len(blob) < _RAW_HEADER.size:
        raise FormatError("truncated raw image header")
    magic, width, height, channels = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if channels not in (1, 3):
        raise FormatError(f"unsupported channel count {channels}")
    body = blob[_RAW_HEADER.size:]
    if len(body) != width * height * channels:
        raise FormatError("raw image payload length does not match header")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return ByteImage(np.frombuffer(body, dtype=np.uint8).reshape(shape).copy())


def save_png(img, path):
    from PIL import Image

    mode = "L" if img.channels == 1 else "RGB"
    Image.fromarray(np.asarray(img.pixels), mode=mode).save(path, format="PNG")


# -- estimator ---------------------------------------------------------------


class ByteplotTransformer(TransformerMixin, BaseEstimator):
    """Turn raw binaries into a stack of square byteplot images.

    ``transform`` accepts an iterable whose items are ``bytes``-like objects,
    file paths, or already-built :class:`ByteImage` instances, and returns a
    ``uint8`` array of shape ``(n, side, side)`` (gray) or
    ``(n, side, side, 3)`` (RGB).
    """

    def __init__(self, rgb=False, side=DEFAULT_SIDE):
        self.rgb = rgb
        self.side = side

    def fit(self, X, y=None):
        return self

    def _one(self, item):
        if isinstance(item, ByteImage):
            img = item
        else:
            if isinstance(item, (str, Path)):
                item = load_bytes(item)
            img = to_rgb_image(item) if self.rgb else to_gray_image(item)
        return resize_square(img, self.side).pixels

    def transform(self, X):
        X = list(X)
        if not X:
            raise EmptyInput("no inputs to convert")
        return np.stack(ordered_map(self._one, X))
