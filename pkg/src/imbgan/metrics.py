"""Confusion-matrix evaluation metrics for imbalanced classification.

Five scores are reported: average class-specific accuracy (mean per-class
recall), macro F1, geometric mean of per-class recalls, precision of the
majority class, and recall of the minority class. Majority and minority
identity comes from the TRAINING class counts carried in `class_order`,
not from the test distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows = true class, cols = predicted
    class_order: np.ndarray  # (C,) training counts, fixes majority/minority

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.class_order = np.asarray(self.class_order, dtype=np.int64)
        c = self.counts.shape[0]
        if self.counts.shape != (c, c) or c < 1:
            raise ValueError(f"counts must be square and nonempty, got {self.counts.shape}")
        if self.counts.min() < 0:
            raise ValueError("confusion counts must be nonnegative")
        if self.class_order.shape != (c,):
            raise ValueError(
                f"class_order length {self.class_order.shape} does not match C={c}"
            )

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def majority_class(self) -> int:
        return int(np.argmax(self.class_order))

    @property
    def minority_class(self) -> int:
        return int(np.argmin(self.class_order))


@dataclass
class MetricsReport:
    acsa: float
    f_macro: float
    g_macro: float
    p_maj: float
    r_min: float

    def as_dict(self) -> dict:
        return {
            "acsa": self.acsa,
            "f_macro": self.f_macro,
            "g_macro": self.g_macro,
            "r_min": self.r_min,
            "p_maj": self.p_maj,
        }


def confusion(y_true, y_pred, num_classes: int, class_order=None) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a C x C matrix.

    `class_order` should be the training per-class counts; when omitted, the
    matrix row sums (test counts) stand in, which only affects which class
    p_maj and r_min single out.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(
            f"label arrays must be equal-length vectors, got {y_true.shape} and {y_pred.shape}"
        )
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(
                f"{name} contains labels outside [0, {num_classes})"
            )
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    if class_order is None:
        class_order = counts.sum(axis=1)
    return ConfusionMatrix(counts=counts, class_order=class_order)


def _recalls(cm: ConfusionMatrix, require_support: bool = True) -> np.ndarray:
    row = cm.counts.sum(axis=1)
    if require_support and np.any(row == 0):
        missing = int(np.flatnonzero(row == 0)[0])
        raise UndefinedMetricError(
            f"recall undefined: class {missing} has no true samples"
        )
    diag = np.diag(cm.counts).astype(np.float64)
    out = np.zeros(cm.num_classes, dtype=np.float64)
    np.divide(diag, row, out=out, where=row > 0)
    return out


def acsa(cm: ConfusionMatrix) -> float:
    """Mean per-class recall."""
    return float(_recalls(cm).mean())


def r_min(cm: ConfusionMatrix) -> float:
    """Recall of the smallest-training-count class."""
    c = cm.minority_class
    row = cm.counts[c].sum()
    if row == 0:
        raise UndefinedMetricError(
            f"recall undefined: class {c} has no true samples"
        )
    return float(cm.counts[c, c] / row)


def p_maj(cm: ConfusionMatrix) -> float:
    """Precision of the largest-training-count class; 0 when never predicted."""
    m = cm.majority_class
    col = cm.counts[:, m].sum()
    if col == 0:
        return 0.0
    return float(cm.counts[m, m] / col)


def f_macro(cm: ConfusionMatrix) -> float:
    """Mean per-class F1, with 0 for classes whose precision + recall is 0."""
    diag = np.diag(cm.counts).astype(np.float64)
    row = cm.counts.sum(axis=1)
    col = cm.counts.sum(axis=0)
    prec = np.zeros(cm.num_classes)
    rec = np.zeros(cm.num_classes)
    np.divide(diag, col, out=prec, where=col > 0)
    np.divide(diag, row, out=rec, where=row > 0)
    denom = prec + rec
    f1 = np.zeros(cm.num_classes)
    np.divide(2.0 * prec * rec, denom, out=f1, where=denom > 0)
    return float(f1.mean())


def g_macro(cm: ConfusionMatrix) -> float:
    """Geometric mean of per-class recalls; 0 if any recall is 0."""
    rec = _recalls(cm, require_support=False)
    if np.any(rec == 0.0):
        return 0.0
    return float(np.prod(rec) ** (1.0 / cm.num_classes))


def compute_all(cm: ConfusionMatrix) -> MetricsReport:
    return MetricsReport(
        acsa=acsa(cm),
        f_macro=f_macro(cm),
        g_macro=g_macro(cm),
        p_maj=p_maj(cm),
        r_min=r_min(cm),
    )


def format_table(report: MetricsReport) -> str:
    """Render the five scores as an aligned two-row text table."""
    names = ["ACSA", "F_macro", "G_macro", "R_min", "P_maj"]
    vals = [report.acsa, report.f_macro, report.g_macro, report.r_min, report.p_maj]
    head = "  ".join(f"{n:>8s}" for n in names)
    body = "  ".join(f"{v:8.4f}" for v in vals)
    return head + "\n" + body
