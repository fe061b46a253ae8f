from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInput, ShapeError


@dataclass
class Metrics:
    accuracy: float
    precision: list
    recall: list
    f1: list
    support: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    confusion: list
    macro_classes: list

    def to_dict(self):
        return dict(self.__dict__)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(predictions, labels, n_classes):
    """Accuracy, per-class and macro precision/recall/F1, confusion matrix.

    Rows of the confusion matrix are true classes, columns predictions.
    Classes that never occur in either ``labels`` or ``predictions`` are left
    out of the macro means.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"{pred.shape} predictions vs {true.shape} labels")
    if pred.size == 0:
        raise EmptyInput("no predictions to score")
    if pred.min() < 0 or true.min() < 0 or max(pred.max(), true.max()) >= n_classes:
        raise ShapeError(f"class ids must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    present = (predicted + support) > 0
    accuracy = float(tp.sum() / cm.sum())
    return Metrics(
        accuracy=accuracy,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        macro_precision=float(precision[present].mean()),
        macro_recall=float(recall[present].mean()),
        macro_f1=float(f1[present].mean()),
        # single-label: pooled TP / pooled predictions
        micro_precision=accuracy,
        confusion=cm.tolist(),
        macro_classes=np.flatnonzero(present).tolist(),
    )


def format_metrics(m, class_names=None):
    names = class_names or [str(i) for i in range(len(m.precision))]
    width = max(len(str(n)) for n in names + ["class"])
    lines = [f"accuracy {m.accuracy:.4f}  macro P {m.macro_precision:.4f}  "
             f"macro R {m.macro_recall:.4f}  macro F1 {m.macro_f1:.4f}",
             f"{'class':<{width}}  {'prec':>6}  {'recall':>6}  {'f1':>6}  {'n':>5}"]
    for name, p, r, f, s in zip(names, m.precision, m.recall, m.f1, m.support):
        lines.append(f"{str(name):<{width}}  {p:>6.4f}  {r:>6.4f}  {f:>6.4f}  {s:>5}")
    return "\n".join(lines)
