"""Multi-label prediction metrics and representation-quality metrics.

Zero-division convention for Macro-F1: a label with no true positives, no
false positives, and no false negatives contributes F1 = 0, not 1. This is
the strict convention; it keeps the macro average sensitive to tail labels
that are never predicted. Conventions differ across libraries, so callers
comparing against other tooling should check this first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numerics import as_matrix, row_normalize


def _check_binary_pair(pred, truth):
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 2:
        raise DomainError(f"pred shape {p.shape} and truth shape {t.shape} must match and be 2-D")
    if not np.isin(p, (0, 1)).all() or not np.isin(t, (0, 1)).all():
        raise DomainError("pred and truth must be binary")
    return p.astype(np.int64), t.astype(np.int64)


def micro_f1(pred, truth) -> float:
    """F1 pooled over every (instance, label) cell: 2TP / (2TP + FP + FN),
    0 when the denominator is 0."""
    p, t = _check_binary_pair(pred, truth)
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def macro_f1(pred, truth) -> float:
    """Per-label F1 averaged uniformly over all labels; empty labels (no
    positives in truth or prediction) contribute 0 under the strict
    convention documented in the module docstring."""
    p, t = _check_binary_pair(pred, truth)
    big_l = p.shape[1]
    scores = np.zeros(big_l)
    for j in range(big_l):
        tp = int(np.sum((p[:, j] == 1) & (t[:, j] == 1)))
        fp = int(np.sum((p[:, j] == 1) & (t[:, j] == 0)))
        fn = int(np.sum((p[:, j] == 0) & (t[:, j] == 1)))
        denom = 2 * tp + fp + fn
        scores[j] = 2.0 * tp / denom if denom else 0.0
    return float(scores.mean())


def hamming(pred, truth) -> float:
    """Fraction of mismatched cells. Multiply by 1000 for table-style
    reporting (see MetricsReport.hamming_x1000)."""
    p, t = _check_binary_pair(pred, truth)
    return float(np.mean(p != t))


def mean_average_precision(scores, truth) -> float | None:
    """Label-wise average precision over instance rankings, averaged over
    labels with at least one positive; None when no label has positives.

    For each label, instances are ranked by descending score (ties broken by
    ascending instance index) and AP is the mean of precision-at-hit over the
    label's positives. Any strictly monotone transform of the scores leaves
    the result unchanged.
    """
    s = as_matrix(scores, "scores")
    t = np.asarray(truth)
    if t.shape != s.shape:
        raise DomainError(f"truth shape {t.shape} != scores shape {s.shape}")
    n, big_l = s.shape
    aps = []
    for j in range(big_l):
        pos = t[:, j] == 1
        n_pos = int(pos.sum())
        if n_pos == 0:
            continue
        order = np.argsort(-s[:, j], kind="stable")
        hits = pos[order]
        ranks = np.nonzero(hits)[0] + 1
        precisions = np.arange(1, n_pos + 1) / ranks
        aps.append(float(precisions.mean()))
    if not aps:
        return None
    return float(np.mean(aps))


def alignment(features, labels) -> float | None:
    """Mean squared distance between unit-normalized features of instances
    with exactly matching label sets; None when no exact-match pair exists."""
    f = row_normalize(as_matrix(features, "features"), "features")
    y = np.asarray(labels)
    if y.shape[0] != f.shape[0]:
        raise DomainError("features and labels must agree on instance count")
    n = f.shape[0]
    same = (y[:, None, :] == y[None, :, :]).all(axis=2)
    iu = np.triu_indices(n, k=1)
    pair_mask = same[iu]
    if not pair_mask.any():
        return None
    diffs = f[iu[0][pair_mask]] - f[iu[1][pair_mask]]
    return float(np.mean(np.sum(diffs * diffs, axis=1)))


def uniformity(features) -> float | None:
    """Log of the mean Gaussian-kernel value exp(-2 d^2) over all distinct
    pairs of unit-normalized features; None for fewer than two instances.
    Bounded in [-8, 0] on the unit sphere. The summand is symmetric, so
    ordered and unordered pair conventions give the same value; distinct
    unordered pairs are used."""
    f = as_matrix(features, "features")
    if f.shape[0] < 2:
        return None
    f = row_normalize(f, "features")
    iu = np.triu_indices(f.shape[0], k=1)
    diffs = f[iu[0]] - f[iu[1]]
    sq = np.sum(diffs * diffs, axis=1)
    # stabilized log-mean-exp; exponents lie in [-8, 0] so this is gentle
    return float(np.log(np.mean(np.exp(-2.0 * sq))))


@dataclass
class MetricsReport:
    """Bundle of prediction and representation metrics.

    hamming_x1000 is the raw Hamming fraction scaled by 1000 (table
    convention); prr, map, align, and uniform are omitted from the JSON when
    undefined.
    """

    micro_f1: float
    macro_f1: float
    hamming: float
    map: float | None = None
    align: float | None = None
    uniform: float | None = None
    prr: float | None = None

    @property
    def hamming_x1000(self) -> float:
        return 1000.0 * self.hamming

    def to_dict(self) -> dict:
        d = {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "hamming_x1000": self.hamming_x1000,
        }
        for key, val in (
            ("map", self.map),
            ("align", self.align),
            ("uniform", self.uniform),
            ("prr", self.prr),
        ):
            if val is not None:
                d[key] = val
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def compute_report(
    pred,
    truth,
    scores=None,
    features=None,
    labels=None,
    prr_value: float | None = None,
) -> MetricsReport:
    """Assemble a MetricsReport from predictions plus optional ranking scores
    and representation features."""
    report = MetricsReport(
        micro_f1=micro_f1(pred, truth),
        macro_f1=macro_f1(pred, truth),
        hamming=hamming(pred, truth),
    )
    if scores is not None:
        report.map = mean_average_precision(scores, truth)
    if features is not None and labels is not None:
        report.align = alignment(features, labels)
        report.uniform = uniformity(features)
    report.prr = prr_value
    return report
