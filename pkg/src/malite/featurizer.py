"""Patch-histogram features: the front end of the histogram + forest model."""

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .byteplot import ByteImage
from .errors import FormatError, InvalidPatchSpec, ShapeError

FEATURE_MAGIC = b"MLFV"
_FV_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class PatchSpec:
    ph: int = 32
    pw: int = 256
    overlap: float = 0.5

    def __post_init__(self):
        for name, v in (("ph", self.ph), ("pw", self.pw)):
            if v <= 0 or v % 8:
                raise InvalidPatchSpec(f"{name}={v} must be a positive multiple of 8")
        if not 0.0 <= self.overlap < 1.0:
            raise InvalidPatchSpec(f"overlap={self.overlap} outside [0, 1)")
        self.stride_for(self.ph)
        self.stride_for(self.pw)

    @staticmethod
    def _stride(extent, overlap):
        raw = extent * (1.0 - overlap)
        stride = int(round(raw))
        if stride <= 0 or abs(raw - stride) > 1e-9:
            raise InvalidPatchSpec(
                f"window {extent} with overlap {overlap} gives non-integer stride {raw}"
            )
        return stride

    def stride_for(self, extent):
        return self._stride(extent, self.overlap)

    @property
    def label(self):
        return f"{self.ph}-{self.pw}"


def window_offsets(length, extent, stride):
    """Start offsets of the windows along one axis.

    A window as long as the axis gives a single window. Otherwise there are
    ``ceil(length / stride)`` windows and the tail is read from zero padding.
    """
    if extent > length:
        raise InvalidPatchSpec(f"window {extent} larger than image side {length}")
    if extent == length:
        return [0]
    return [i * stride for i in range(math.ceil(length / stride))]


def _grid(shape, spec):
    h, w = shape[:2]
    rows = window_offsets(h, spec.ph, spec.stride_for(spec.ph))
    cols = window_offsets(w, spec.pw, spec.stride_for(spec.pw))
    return rows, cols


def n_patches(shape, spec):
    rows, cols = _grid(shape, spec)
    return len(rows) * len(cols)


def _pixels(img):
    px = img.pixels if isinstance(img, ByteImage) else np.asarray(img)
    if px.dtype != np.uint8:
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ShapeError("image samples must lie in [0, 255]")
        px = px.astype(np.uint8)
    if px.ndim not in (2, 3):
        raise ShapeError(f"expected (h, w) or (h, w, c) image, got {px.shape}")
    return px


def _padded(px, rows, cols, spec):
    need_h = rows[-1] + spec.ph
    need_w = cols[-1] + spec.pw
    pad_h = max(need_h - px.shape[0], 0)
    pad_w = max(need_w - px.shape[1], 0)
    if pad_h or pad_w:
        widths = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (px.ndim - 2)
        px = np.pad(px, widths)
    return px


def extract_patches(img, spec=PatchSpec()):
    """Windows in top-to-bottom, left-to-right order, each ``ph`` x ``pw``."""
    px = _pixels(img)
    rows, cols = _grid(px.shape, spec)
    px = _padded(px, rows, cols, spec)
    return [px[y:y + spec.ph, x:x + spec.pw] for y in rows for x in cols]


def check_bins(bins):
    if bins <= 0 or 256 % bins:
        raise InvalidPatchSpec(f"bins={bins} must divide 256")


def histogram(patch, bins=64):
    check_bins(bins)
    values = np.asarray(patch, dtype=np.uint8).ravel()
    return np.bincount(values // (256 // bins), minlength=bins).astype(np.int64)


def featurize(img, spec=PatchSpec(), bins=64):
    check_bins(bins)
    px = _pixels(img)
    rows, cols = _grid(px.shape, spec)
    binned = _padded(px, rows, cols, spec) // np.uint8(256 // bins)
    out = np.empty((len(rows) * len(cols), bins), dtype=np.int64)
    i = 0
    for y in rows:
        for x in cols:
            window = binned[y:y + spec.ph, x:x + spec.pw]
            out[i] = np.bincount(window.ravel(), minlength=bins)
            i += 1
    return out.ravel()


class PatchHistogramFeaturizer(TransformerMixin, BaseEstimator):
    """Concatenated per-patch intensity histograms.

    With the defaults a 256x256 image maps to 16 overlapping 32x256 windows
    of 64 bins each, i.e. a 1024-long count vector.

    Parameters
    ----------
    bins : int
        Histogram bins; must divide 256.
    patch_height, patch_width : int
        Window size in pixels (multiples of 8).
    overlap : float
        Fraction of a window shared with its neighbour.
    """

    def __init__(self, bins=64, patch_height=32, patch_width=256, overlap=0.5):
        self.bins = bins
        self.patch_height = patch_height
        self.patch_width = patch_width
        self.overlap = overlap

    @property
    def patch_spec(self):
        return PatchSpec(self.patch_height, self.patch_width, self.overlap)

    def _images(self, X):
        if isinstance(X, ByteImage):
            X = [X]
        if isinstance(X, np.ndarray) and X.ndim in (3, 4):
            return X
        imgs = [_pixels(x) for x in X]
        if not imgs:
            raise ShapeError("no images given")
        return imgs

    def fit(self, X, y=None):
        check_bins(self.bins)
        imgs = self._images(X)
        spec = self.patch_spec
        self.image_shape_ = tuple(imgs[0].shape)
        self.n_patches_ = n_patches(self.image_shape_, spec)
        self.n_features_out_ = self.n_patches_ * self.bins
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        spec = self.patch_spec
        feats = [featurize(img, spec, self.bins) for img in self._images(X)]
        for f in feats:
            if f.size != self.n_features_out_:
                raise ShapeError(
                    f"image produced {f.size} features, expected {self.n_features_out_}"
                )
        return np.stack(feats)


# -- export ------------------------------------------------------------------


def write_features_csv(path, paths, labels, features):
    features = np.asarray(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"] + [f"f{i}" for i in range(features.shape[1])])
        for p, lab, row in zip(paths, labels, features):
            w.writerow([p, lab] + [int(v) for v in row])


def read_features_csv(path):
    """Return ``(paths, labels, features)`` from a CSV written by :func:`write_features_csv`."""
    paths, labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["path", "label"]:
            raise FormatError(f"{path}: missing 'path,label,...' header")
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(header):
                raise FormatError(f"{path}: ragged row for {rec[0]!r}")
            paths.append(rec[0])
            labels.append(rec[1])
            rows.append([int(v) for v in rec[2:]])
    feats = np.asarray(rows, dtype=np.int64).reshape(len(rows), len(header) - 2)
    return paths, labels, feats


def pack_features(features):
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError("feature matrix must be 2-D")
    if features.size and (features.min() < 0 or features.max() > 0xFFFFFFFF):
        raise ShapeError("feature counts do not fit in u32")
    rows, cols = features.shape
    return _FV_HEADER.pack(FEATURE_MAGIC, rows, cols) + features.astype("<u4").tobytes()


def unpack_features(blob):
    if len(blob) < _FV_HEADER.size:
        raise FormatError("truncated feature header")
    magic, rows, cols = _FV_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    body = blob[_FV_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise FormatError("feature payload length does not match header")
    return np.frombuffer(body, dtype="<u4").reshape(rows, cols).astype(np.int64)
