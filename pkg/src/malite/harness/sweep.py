"""Grid search over histogram bins, patch geometry and forest size."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .._parallel import ordered_map
from ..errors import InvalidPatchSpec
from ..featurizer import PatchHistogramFeaturizer
from ..forest import RandomForestClassifier
from .metrics import compute_metrics

SWEEP_COLUMNS = [
    "label", "bins", "ph", "pw", "estimators", "status", "accuracy",
    "macro_precision", "micro_precision", "macro_recall", "macro_f1",
]


@dataclass(frozen=True)
class SweepGrid:
    bins: tuple = (16, 32, 64, 128, 256)
    heights: tuple = (8, 16, 32, 64, 128, 256)
    estimators: tuple = (11, 31, 51, 101)
    widths: tuple = None  # None: pw in {ph, 256}
    overlap: float = 0.5

    def patch_shapes(self):
        shapes = []
        for ph in self.heights:
            widths = self.widths if self.widths is not None else (ph, 256)
            for pw in sorted(set(widths)):
                if ph <= pw:
                    shapes.append((ph, pw))
        return shapes

    def points(self):
        """``(bins, ph, pw, estimators)`` in a fixed order."""
        return [(b, ph, pw, e) for b in self.bins for ph, pw in self.patch_shapes()
                for e in self.estimators]


def point_seed(seed, index):
    """Forest seed for grid point ``index`` of a sweep seeded with ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sweep_hrf(X_train, y_train, X_eval, y_eval, grid=SweepGrid(), seed=0, max_depth=15):
    """Fit and score one histogram + forest model per grid point.

    Images are uint8 arrays. Labels are dense integer ids. Rows come back
    sorted by macro F1 (best first); points whose patch does not fit the
    image are kept with ``status="skipped"`` at the end.
    """
    X_train = np.asarray(X_train)
    X_eval = np.asarray(X_eval)
    y_train = np.asarray(y_train)
    y_eval = np.asarray(y_eval)
    n_classes = int(max(y_train.max(), y_eval.max())) + 1
    points = grid.points()

    features = {}
    for b, ph, pw, _ in points:
        key = (b, ph, pw)
        if key in features:
            continue
        try:
            feat = PatchHistogramFeaturizer(b, ph, pw, grid.overlap).fit(X_train)
            features[key] = (feat.transform(X_train), feat.transform(X_eval))
        except InvalidPatchSpec:
            features[key] = None

    def run(i):
        b, ph, pw, e = points[i]
        row = {"label": f"{b}-{ph}-{pw}", "bins": b, "ph": ph, "pw": pw, "estimators": e}
        fv = features[(b, ph, pw)]
        if fv is None:
            row["status"] = "skipped"
            return row
        forest = RandomForestClassifier(n_estimators=e, max_depth=max_depth,
                                        random_state=point_seed(seed, i))
        forest.fit(fv[0], y_train)
        m = compute_metrics(forest.predict(fv[1]), y_eval, n_classes)
        row.update(status="ok", accuracy=m.accuracy, macro_precision=m.macro_precision,
                   micro_precision=m.micro_precision, macro_recall=m.macro_recall,
                   macro_f1=m.macro_f1)
        return row

    rows = ordered_map(run, range(len(points)))
    ok = [r for r in rows if r["status"] == "ok"]
    skipped = [r for r in rows if r["status"] != "ok"]
    ok.sort(key=lambda r: -r["macro_f1"])
    return ok + skipped


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        out = {}
        for k in SWEEP_COLUMNS:
            v = r.get(k, "")
            out[k] = f"{v:.6f}" if isinstance(v, float) else v
        w.writerow(out)
    return buf.getvalue()
