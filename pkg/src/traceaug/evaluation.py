"""Closed-world accuracy and open-world thresholded precision/recall.

Open-world scoring follows the probability-thresholding rule: a trace is
flagged positive when the maximum output probability falls on a monitored
class and exceeds the threshold (strictly). A true positive is a
monitored trace flagged positive; matching the predicted class to the
true monitored label is optional and off by default. Precision is defined
as 0 when nothing is flagged positive.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OpenWorldOutcome:
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) else 0.0


def closed_world_accuracy(preds: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax (ties to the lowest index) equals the label."""
    preds = np.atleast_2d(preds)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape[0] == 0:
        raise ValueError("accuracy undefined for an empty batch")
    if preds.shape[0] != len(labels):
        raise ValueError("predictions and labels must align")
    return float(np.mean(np.argmax(preds, axis=1) == labels))


def open_world_eval(
    preds: np.ndarray,
    is_monitored,
    labels,
    threshold: float,
    n_monitored_classes: int | None = None,
    class_correct: bool = False,
) -> OpenWorldOutcome:
    """Confusion counts under probability thresholding.

    ``preds`` rows span the classifier's classes; the first
    ``n_monitored_classes`` columns (all of them by default) are the
    monitored sites, any remaining column is a background class.
    ``labels`` holds the true class for monitored traces and is ignored
    (any value) for unmonitored ones. With ``class_correct`` a monitored
    trace only counts as a true positive when the predicted class is its
    own.
    """
    preds = np.atleast_2d(preds)
    is_monitored = np.asarray(is_monitored, dtype=bool)
    labels = np.asarray(labels, dtype=np.int64)
    if not (len(preds) == len(is_monitored) == len(labels)):
        raise ValueError("predictions, flags and labels must align")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    n_mon = preds.shape[1] if n_monitored_classes is None else n_monitored_classes

    top = np.argmax(preds, axis=1)
    flagged = (top < n_mon) & (preds.max(axis=1) > threshold)
    hit = flagged & ((top == labels) if class_correct else True)

    tp = int(np.sum(is_monitored & hit))
    fn = int(np.sum(is_monitored)) - tp
    fp = int(np.sum(~is_monitored & flagged))
    tn = int(np.sum(~is_monitored)) - fp
    return OpenWorldOutcome(tp=tp, fp=fp, fn=fn, tn=tn, threshold=threshold)


def pr_curve(
    preds: np.ndarray,
    is_monitored,
    labels,
    thresholds,
    n_monitored_classes: int | None = None,
    class_correct: bool = False,
) -> list[OpenWorldOutcome]:
    """One outcome per threshold; thresholds must be sorted ascending."""
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    return [
        open_world_eval(preds, is_monitored, labels, t, n_monitored_classes, class_correct)
        for t in thresholds
    ]


def format_pr_records(outcomes: list[OpenWorldOutcome]) -> str:
    """Line-delimited `threshold precision recall f1` records for plotting."""
    return "".join(
        f"{o.threshold!r} {o.precision!r} {o.recall!r} {o.f1!r}\n" for o in outcomes
    )
