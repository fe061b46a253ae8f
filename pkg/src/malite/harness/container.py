"""``MLTE`` model container.

Layout (little-endian)::

    b"MLTE" | u8 version | u8 kind | u32 meta_len | meta (UTF-8 JSON)
           | u32 payload_len | payload | u32 CRC32 of everything before it

kind 0 holds a histogram + forest model (payload: packed forest), kind 1 a
network (payload: u32 tensor count, then per tensor u16 name length, name,
u8 ndim, u32 dims, float32 data).
"""

import json
import struct
import zlib

import numpy as np

from ..errors import FormatError
from ..forest import RandomForestClassifier, pack_forest, unpack_forest
from ..hrf import MaliteHRFClassifier
from ..net import MaliteMNClassifier, NetConfig, build_malite_mn

MAGIC = b"MLTE"
VERSION = 1
KIND_HRF = 0
KIND_MN = 1

_HEAD = struct.Struct("<4sBBI")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _meta_bytes(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":"),
                      default=_json_default).encode("utf-8")


def _classes(est):
    return [c.item() if isinstance(c, np.generic) else c for c in est.classes_]


def pack_tensors(named):
    parts = [struct.pack("<I", len(named))]
    for name, arr in named.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def unpack_tensors(blob):
    try:
        (count,) = struct.unpack_from("<I", blob, 0)
        pos = 4
        named = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if pos + size > len(blob):
                raise FormatError(f"truncated tensor {name!r}")
            named[name] = np.frombuffer(blob[pos:pos + size], dtype="<f4").reshape(dims)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt tensor payload: {exc}") from None
    if pos != len(blob):
        raise FormatError("trailing bytes after tensor payload")
    return named


def save_model(est):
    if isinstance(est, RandomForestClassifier):
        raise TypeError("wrap a bare forest in MaliteHRFClassifier before saving")
    if isinstance(est, MaliteHRFClassifier):
        kind = KIND_HRF
        forest = est.forest_
        meta = {
            "classes": _classes(est),
            "params": est.get_params(),
            "image_shape": list(est.featurizer_.image_shape_),
        }
        payload = pack_forest(forest.trees_, forest.n_classes_, forest.n_features_in_)
    elif isinstance(est, MaliteMNClassifier):
        kind = KIND_MN
        model = est.model_
        params = est.get_params()
        params["config"] = None
        meta = {
            "classes": _classes(est),
            "params": params,
            "net_config": model.config.to_dict(),
        }
        if hasattr(est, "input_shape_"):
            meta["input_shape"] = list(est.input_shape_)
        payload = pack_tensors(model.named_tensors())
    else:
        raise TypeError(f"cannot save {type(est).__name__}")
    meta_b = _meta_bytes(meta)
    body = (
        _HEAD.pack(MAGIC, VERSION, kind, len(meta_b))
        + meta_b
        + struct.pack("<I", len(payload))
        + payload
    )
    return body + struct.pack("<I", zlib.crc32(body))


def read_container(blob):
    """Validate framing and checksum; return ``(kind, meta, payload)``."""
    blob = bytes(blob)
    if len(blob) < _HEAD.size + 8:
        raise FormatError("truncated model container")
    magic, version, kind, meta_len = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise FormatError("checksum mismatch")
    pos = _HEAD.size
    if pos + meta_len + 4 > len(blob) - 4:
        raise FormatError("truncated metadata")
    try:
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata: {exc}") from None
    pos += meta_len
    (payload_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if pos + payload_len != len(blob) - 4:
        raise FormatError("payload length does not match container size")
    return kind, meta, blob[pos:pos + payload_len]


def load_model(blob):
    kind, meta, payload = read_container(blob)
    classes = np.asarray(meta["classes"])
    if kind == KIND_HRF:
        est = MaliteHRFClassifier(**meta["params"])
        trees, n_classes, n_features = unpack_forest(payload)
        if n_classes != len(classes):
            raise FormatError("class count in payload disagrees with metadata")
        est.featurizer_ = est.featurizer_for(tuple(meta["image_shape"]))
        forest = est._forest()
        forest.trees_ = trees
        forest.classes_ = classes
        forest.n_features_in_ = n_features
        est.forest_ = forest
        est.classes_ = classes
        est.n_features_in_ = n_features
        return est
    if kind == KIND_MN:
        cfg = NetConfig.from_dict(meta["net_config"])
        params = dict(meta["params"], config=cfg)
        est = MaliteMNClassifier(**params)
        model = build_malite_mn(cfg)
        model.load_tensors(unpack_tensors(payload))
        est.model_ = model
        est.classes_ = classes
        if "input_shape" in meta:
            est.input_shape_ = tuple(meta["input_shape"])
        return est
    raise FormatError(f"unknown model kind {kind}")


def save_model_file(est, path):
    blob = save_model(est)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_model_file(path):
    with open(path, "rb") as fh:
        return load_model(fh.read())
