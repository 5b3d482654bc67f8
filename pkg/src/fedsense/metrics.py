"""Confusion-matrix scores and loss averages for detection runs.

Class 1 (legitimate) is the positive class of the confusion matrix.
Precision, recall and F1 are support-weighted averages over both classes.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from fedsense.errors import DomainError

REPORT_COLUMNS = (
    "precision",
    "recall",
    "f1",
    "g_mean",
    "accuracy",
    "avg_expected_loss",
    "avg_realized_loss",
)


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    g_mean: float
    accuracy: float
    avg_expected_loss: float = 0.0
    avg_realized_loss: float = 0.0
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def confusion(self):
        return self.tp, self.fp, self.tn, self.fn

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]

    def to_dict(self):
        return asdict(self)


def _ratio(num, den):
    return num / den if den else 0.0


def _class_recall(y, p, c):
    """Recall of class ``c``; an absent class counts 1 if never predicted, else 0."""
    support = int((y == c).sum())
    if support == 0:
        return 1.0 if not (p == c).any() else 0.0
    return int(((y == c) & (p == c)).sum()) / support


def score(predictions, labels):
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise DomainError("predictions and labels must be equal-length 1-d sequences")
    if p.size == 0:
        raise DomainError("cannot score an empty prediction list")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise DomainError("predictions and labels must be 0 or 1")

    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    n = p.size

    precision = recall = f1 = 0.0
    for c in (0, 1):
        support = int((y == c).sum())
        if support == 0:
            continue
        hit = int(((p == c) & (y == c)).sum())
        prec = _ratio(hit, int((p == c).sum()))
        rec = hit / support
        f = _ratio(2 * prec * rec, prec + rec)
        wgt = support / n
        precision += wgt * prec
        recall += wgt * rec
        f1 += wgt * f

    g_mean = math.sqrt(_class_recall(y, p, 1) * _class_recall(y, p, 0))
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        g_mean=g_mean,
        accuracy=(tp + tn) / n,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def score_with_loss(outcomes, labels, k):
    """Metrics of final decisions plus loss averages.

    avg_expected_loss is the chosen-action risk summed over tasks divided by
    ``N * k``; avg_realized_loss is the utility loss actually incurred
    against ground truth, per task.
    """
    if len(outcomes) != len(labels):
        raise DomainError(f"{len(outcomes)} outcomes but {len(labels)} labels")
    if k < 1:
        raise DomainError("k must be >= 1")
    base = score([o.fd for o in outcomes], labels)
    n = len(outcomes)
    expected = math.fsum(o.chosen_risk for o in outcomes) / (n * k)
    realized = math.fsum(o.realized_loss for o in outcomes) / n
    return MetricsReport(
        **{**base.to_dict(), "avg_expected_loss": expected, "avg_realized_loss": realized}
    )
