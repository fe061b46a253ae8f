"""``malite`` command line.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric error. Failures print one
JSON object ``{"error": ..., "message": ...}`` on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import costmodel
from ..byteplot import ByteplotTransformer, dump_raw, load_bytes, resize_square, save_png
from ..byteplot import to_gray_image, to_rgb_image
from ..data import SplitSpec, load_manifest, stratified_split
from ..errors import FormatError, MaliteError
from ..featurizer import (
    PatchHistogramFeaturizer,
    pack_features,
    read_features_csv,
    write_features_csv,
)
from ..hrf import MaliteHRFClassifier
from ..net import MaliteMNClassifier, NetConfig
from .container import MAGIC, load_model_file, save_model_file
from .metrics import compute_metrics, format_metrics
from .sweep import SweepGrid, sweep_csv, sweep_hrf

log = logging.getLogger("malite")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def load_images(manifest, side=256, rgb=False):
    return ByteplotTransformer(rgb=rgb, side=side).transform(manifest.paths)


def _sidecar(path):
    return Path(str(path) + ".json")


# -- commands ----------------------------------------------------------------


def cmd_convert(args):
    data = load_bytes(args.input)
    img = to_rgb_image(data) if args.rgb else to_gray_image(data)
    if args.side is not None:
        img = resize_square(img, args.side)
    if args.png:
        save_png(img, args.output)
    else:
        Path(args.output).write_bytes(dump_raw(img))
    print(_dump_json({"input_bytes": len(data), "width": img.width, "height": img.height,
                      "channels": img.channels, "output": str(args.output)}))


def cmd_featurize(args):
    manifest = load_manifest(args.source)
    images = load_images(manifest, args.side, args.rgb)
    feat = PatchHistogramFeaturizer(args.bins, args.ph, args.pw, args.overlap)
    F = feat.fit(images).transform(images)
    out = Path(args.output)
    if out.suffix == ".mlfv":
        out.write_bytes(pack_features(F))
    else:
        write_features_csv(out, manifest.paths, manifest.labels, F)
    config = {"bins": args.bins, "patch_height": args.ph, "patch_width": args.pw,
              "overlap": args.overlap, "image_side": args.side, "rgb": args.rgb}
    _sidecar(out).write_text(_dump_json(config) + "\n", encoding="utf-8")
    print(_dump_json({"rows": int(F.shape[0]), "cols": int(F.shape[1]), "output": str(out)}))


def _feature_config(path):
    side = _sidecar(path)
    if side.exists():
        return json.loads(side.read_text(encoding="utf-8"))
    return {}


def cmd_train_hrf(args):
    _, labels, F = read_features_csv(args.features)
    cfg = _feature_config(args.features)
    rgb = cfg.pop("rgb", False)
    est = MaliteHRFClassifier(
        n_estimators=args.estimators, max_depth=args.depth, random_state=args.seed,
        **{k: cfg[k] for k in ("bins", "patch_height", "patch_width", "overlap",
                               "image_side") if k in cfg},
    )
    est.fit_features(F, np.asarray(labels))
    side = est.image_side
    shape = (side, side, 3) if rgb else (side, side)
    est.featurizer_ = est.featurizer_for(shape)
    if est.featurizer_.n_features_out_ != F.shape[1]:
        raise FormatError(
            f"feature file has {F.shape[1]} columns but the featurizer config "
            f"produces {est.featurizer_.n_features_out_}"
        )
    size = save_model_file(est, args.model)
    print(_dump_json({"model": str(args.model), "bytes": size, **est.forest_.tree_stats()}))


def cmd_train_mn(args):
    manifest = load_manifest(args.manifest)
    config = NetConfig()
    if args.config:
        config = NetConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    images = load_images(manifest, args.side, args.rgb)
    est = MaliteMNClassifier(config=config, epochs=args.epochs, batch_size=args.batch_size,
                             lr_start=args.lr_start, lr_end=args.lr_end,
                             warmup_steps=args.warmup, random_state=args.seed,
                             verbose=args.verbose)
    est.fit(images, np.asarray(manifest.labels))
    size = save_model_file(est, args.model)
    print(_dump_json({"model": str(args.model), "bytes": size,
                      "final_loss": est.loss_curve_[-1]}))


def _is_feature_csv(path):
    p = Path(path)
    if not p.is_file() or p.suffix != ".csv":
        return False
    with open(p, encoding="utf-8") as fh:
        return fh.readline().startswith("path,label,f0")


def _model_input_shape(est):
    if isinstance(est, MaliteHRFClassifier):
        return tuple(est.featurizer_.image_shape_)
    return tuple(est.input_shape_)


def cmd_eval(args):
    est = load_model_file(args.model)
    classes = [str(c) for c in est.classes_]
    index = {c: i for i, c in enumerate(classes)}
    if _is_feature_csv(args.data):
        if not isinstance(est, MaliteHRFClassifier):
            raise FormatError("feature files can only be scored by a histogram model")
        _, labels, F = read_features_csv(args.data)
        source = "features"
        scores = est.forest_.predict_proba(F)
    else:
        manifest = load_manifest(args.data)
        labels = manifest.labels
        shape = _model_input_shape(est)
        images = load_images(manifest, shape[0], len(shape) == 3 and shape[-1] == 3)
        source = "manifest"
        scores = est.predict_proba(images)
    unknown = sorted({lab for lab in labels if lab not in index})
    if unknown:
        raise FormatError(f"labels not known to the model: {unknown[:5]}")
    y = np.array([index[lab] for lab in labels], dtype=np.int64)
    pred = np.argmax(scores, axis=1)
    m = compute_metrics(pred, y, len(classes))
    report = {
        "model": Path(args.model).name,
        "kind": "hrf" if isinstance(est, MaliteHRFClassifier) else "mn",
        "source": source,
        "protocol": "holdout: scored on every sample of the given data",
        "n_samples": int(y.size),
        "classes": classes,
        "metrics": m.to_dict(),
    }
    text = _dump_json(report) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    print(format_metrics(m, classes))


def cmd_sweep(args):
    manifest = load_manifest(args.manifest)
    train, held = stratified_split(manifest, SplitSpec(args.train_fraction, args.seed))
    images_tr = load_images(train, args.side, args.rgb)
    images_ev = load_images(held, args.side, args.rgb)
    ids = manifest.class_index
    y_tr = np.array([ids[lab] for lab in train.labels])
    y_ev = np.array([ids[lab] for lab in held.labels])
    grid = SweepGrid(bins=_ints(args.bins), heights=_ints(args.heights),
                     estimators=_ints(args.estimators), overlap=args.overlap)
    rows = sweep_hrf(images_tr, y_tr, images_ev, y_ev, grid, seed=args.seed,
                     max_depth=args.depth)
    Path(args.output).write_text(sweep_csv(rows), encoding="utf-8")
    best = rows[0] if rows and rows[0]["status"] == "ok" else None
    print(_dump_json({"rows": len(rows), "best": best, "output": str(args.output)}))


def _hrf_default_report(side):
    feat = PatchHistogramFeaturizer().fit(np.zeros((1, side, side), dtype=np.uint8))
    est = MaliteHRFClassifier()
    rep = costmodel.CostReport()
    spec = feat.patch_spec
    rep.add("histogram", 0, costmodel.hist_cost(feat.n_patches_, spec.ph, spec.pw))
    rep.add("forest", 0, costmodel.forest_cost(est.n_estimators, est.max_depth))
    rep.notes = {"untrained": True, "n_patches": feat.n_patches_}
    return rep


def cmd_cost(args):
    target = args.target
    path = Path(target)
    if target == "mn-default":
        rep = costmodel.report(NetConfig(), side=args.side)
    elif target == "hrf-default":
        rep = _hrf_default_report(args.side)
    elif path.is_file() and path.read_bytes()[:4] == MAGIC:
        rep = costmodel.report(load_model_file(path), side=args.side)
    elif path.is_file():
        cfg = NetConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
        rep = costmodel.report(cfg, side=args.side)
    else:
        raise UsageError(f"{target!r} is not a model, a config file, mn-default or hrf-default")
    print(rep.table(), file=sys.stderr)
    print(rep.to_json())


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="malite", description="Byteplot malware classification toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="binary -> byteplot (MLIM raw dump or PNG)")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--rgb", action="store_true")
    c.add_argument("--side", type=int, default=None,
                   help="resize to side x side (default: keep native width/height)")
    c.add_argument("--png", action="store_true")
    c.set_defaults(func=cmd_convert)

    f = sub.add_parser("featurize", help="manifest or class directory -> feature file")
    f.add_argument("source")
    f.add_argument("output")
    f.add_argument("--bins", type=int, default=64)
    f.add_argument("--ph", type=int, default=32)
    f.add_argument("--pw", type=int, default=256)
    f.add_argument("--overlap", type=float, default=0.5)
    f.add_argument("--side", type=int, default=256)
    f.add_argument("--rgb", action="store_true")
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train-hrf", help="fit the histogram + forest model on a feature CSV")
    t.add_argument("features")
    t.add_argument("model")
    t.add_argument("--estimators", type=int, default=51)
    t.add_argument("--depth", type=int, default=15)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train_hrf)

    n = sub.add_parser("train-mn", help="train the bottleneck CNN on a manifest")
    n.add_argument("manifest")
    n.add_argument("model")
    n.add_argument("--config")
    n.add_argument("--epochs", type=int, default=20)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--side", type=int, default=256)
    n.add_argument("--rgb", action="store_true")
    n.add_argument("--batch-size", type=int, default=16)
    n.add_argument("--lr-start", type=float, default=1e-4)
    n.add_argument("--lr-end", type=float, default=5e-5)
    n.add_argument("--warmup", type=int, default=100)
    n.set_defaults(func=cmd_train_mn)

    e = sub.add_parser("eval", help="score a model on a manifest or feature CSV")
    e.add_argument("model")
    e.add_argument("data")
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="bin/patch/estimator grid search (80/20 split)")
    s.add_argument("manifest")
    s.add_argument("output")
    s.add_argument("--bins", default="16,32,64,128,256")
    s.add_argument("--heights", default="8,16,32,64,128,256")
    s.add_argument("--estimators", default="11,31,51,101")
    s.add_argument("--overlap", type=float, default=0.5)
    s.add_argument("--depth", type=int, default=15)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--side", type=int, default=256)
    s.add_argument("--rgb", action="store_true")
    s.set_defaults(func=cmd_sweep)

    k = sub.add_parser("cost", help="parameter / Mult-Add / size report")
    k.add_argument("target", help="model file, NetConfig JSON, mn-default or hrf-default")
    k.add_argument("--side", type=int, default=256)
    k.set_defaults(func=cmd_cost)
    return p


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except MaliteError as exc:
        return _fail(type(exc).__name__, str(exc), exc.exit_code)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
