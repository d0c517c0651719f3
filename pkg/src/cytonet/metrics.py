"""Classification and segmentation scoring.

Confusion matrices index rows by true class and columns by predicted class.
Ratios with zero denominators are reported as 0.0 and flagged rather than
raising, so sparse evaluation sets still produce a full report.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError


def confusion_matrix(preds, truths, num_classes):
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ShapeError(
            f"preds and truths must be equal-length 1-d, got {preds.shape} and {truths.shape}"
        )
    if num_classes < 1:
        raise ValidationError(f"num_classes must be >= 1, got {num_classes}")
    if preds.size:
        if not np.issubdtype(preds.dtype, np.integer) or not np.issubdtype(truths.dtype, np.integer):
            raise ValidationError("class ids must be integers")
        for name, arr in (("preds", preds), ("truths", truths)):
            if arr.min() < 0 or arr.max() >= num_classes:
                raise ValidationError(f"{name} must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


@dataclass
class ClassificationReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    undefined: list  # (class_id, metric name) pairs where a denominator was 0
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float


def _safe_ratio(num, den, cls, name, undefined):
    if den == 0:
        undefined.append((cls, name))
        return 0.0
    return num / den


def classification_report(preds, truths, num_classes, class_names=None):
    """Per-class and averaged precision/recall/F1 from raw predictions."""
    cm = confusion_matrix(preds, truths, num_classes)
    return report_from_confusion(cm, class_names)


def report_from_confusion(cm, class_names=None):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    c = cm.shape[0]
    if class_names is not None and len(class_names) != c:
        raise ValidationError(
            f"got {len(class_names)} class names for a {c}-class matrix"
        )
    total = int(cm.sum())
    if total == 0:
        raise ValidationError("confusion matrix holds no observations")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    undefined = []
    precision = np.zeros(c)
    recall = np.zeros(c)
    f1 = np.zeros(c)
    for k in range(c):
        precision[k] = _safe_ratio(tp[k], pred_count[k], k, "precision", undefined)
        recall[k] = _safe_ratio(tp[k], support[k], k, "recall", undefined)
        denom = precision[k] + recall[k]
        if denom == 0:
            undefined.append((k, "f1"))
            f1[k] = 0.0
        else:
            f1[k] = 2.0 * precision[k] * recall[k] / denom
    weights = support / total
    return ClassificationReport(
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        undefined=undefined,
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float((precision * weights).sum()),
        weighted_recall=float((recall * weights).sum()),
        weighted_f1=float((f1 * weights).sum()),
    )


def _as_bool_mask(mask):
    # accepts a raw boolean array or anything exposing .bits
    arr = getattr(mask, "bits", mask)
    arr = np.asarray(arr)
    if arr.dtype != np.bool_:
        raise ValidationError("masks must be boolean")
    if arr.ndim != 2:
        raise ShapeError(f"masks must be 2-d, got shape {arr.shape}")
    return arr


def _overlap_counts(pred, truth):
    p = _as_bool_mask(pred)
    t = _as_bool_mask(truth)
    if p.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    return tp, fp, fn, tn


def iou(pred, truth):
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    tp, fp, fn, _ = _overlap_counts(pred, truth)
    denom = tp + fp + fn
    if denom == 0:
        return 1.0
    return tp / denom


def dice(pred, truth):
    """Dice overlap, 2TP / (2TP + FP + FN); both empty gives 1.0."""
    tp, fp, fn, _ = _overlap_counts(pred, truth)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2 * tp / denom


@dataclass
class SegmentationScore:
    iou: float
    dice: float
    tp: int
    fp: int
    fn: int
    tn: int


def segmentation_score(pred, truth):
    tp, fp, fn, tn = _overlap_counts(pred, truth)
    denom_i = tp + fp + fn
    return SegmentationScore(
        iou=1.0 if denom_i == 0 else tp / denom_i,
        dice=1.0 if denom_i == 0 else 2 * tp / (2 * tp + fp + fn),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def report_to_dict(report, class_names=None):
    """JSON-ready view of a ClassificationReport."""
    c = report.confusion.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
    per_class = {}
    for k in range(c):
        per_class[names[k]] = {
            "precision": float(report.precision[k]),
            "recall": float(report.recall[k]),
            "f1": float(report.f1[k]),
            "support": int(report.support[k]),
        }
    return {
        "accuracy": report.accuracy,
        "per_class": per_class,
        "macro": {
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "f1": report.macro_f1,
        },
        "weighted": {
            "precision": report.weighted_precision,
            "recall": report.weighted_recall,
            "f1": report.weighted_f1,
        },
        "undefined": [[int(k), name] for k, name in report.undefined],
        "confusion": report.confusion.tolist(),
    }


def format_report(report, class_names=None):
    """Fixed-width text table, one row per class plus the averages."""
    c = report.confusion.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
    width = max(len(n) for n in names + ["weighted avg"])
    lines = [
        f"{'class':<{width}}  precision  recall  f1      support"
    ]
    for k in range(c):
        lines.append(
            f"{names[k]:<{width}}  {report.precision[k]:9.4f}  {report.recall[k]:6.4f}"
            f"  {report.f1[k]:6.4f}  {int(report.support[k]):7d}"
        )
    lines.append(
        f"{'macro avg':<{width}}  {report.macro_precision:9.4f}  {report.macro_recall:6.4f}"
        f"  {report.macro_f1:6.4f}  {int(report.support.sum()):7d}"
    )
    lines.append(
        f"{'weighted avg':<{width}}  {report.weighted_precision:9.4f}  {report.weighted_recall:6.4f}"
        f"  {report.weighted_f1:6.4f}  {int(report.support.sum()):7d}"
    )
    lines.append(f"accuracy: {report.accuracy:.4f}")
    if report.undefined:
        flagged = ", ".join(f"{names[k]}/{m}" for k, m in report.undefined)
        lines.append(f"zero-denominator metrics reported as 0: {flagged}")
    return "\n".join(lines)


def confusion_to_csv(cm, class_names=None):
    """CSV with a header row of predicted-class names."""
    cm = np.asarray(cm)
    c = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
    lines = ["true\\pred," + ",".join(names)]
    for k in range(c):
        lines.append(names[k] + "," + ",".join(str(int(v)) for v in cm[k]))
    return "\n".join(lines) + "\n"
