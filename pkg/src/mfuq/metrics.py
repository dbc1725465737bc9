"""In-domain and OOD evaluation metrics.

Threshold-free OOD metrics treat in-domain as positive with larger scores
meaning "more in-domain" (max-probability scores).
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from mfuq.errors import EmptyInput, LengthMismatch

REPORT_SCHEMA = "eval-report/1"
PROB_FLOOR = 1e-12


def _vec(x, name):
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput(f"{name} is empty")
    return x


def ece(confidences, correct, n_bins=10):
    """Expected calibration error (as a fraction) over equal-width bins.

    Bin s covers ((s-1)/B, s/B]; a confidence of exactly 0 goes to the first bin.
    """
    conf = _vec(confidences, "confidences")
    corr = np.asarray(correct, dtype=float).ravel()
    if corr.shape != conf.shape:
        raise LengthMismatch("confidences and correctness differ in length")
    upper = np.arange(1, n_bins + 1) / n_bins
    bins = np.minimum(np.searchsorted(upper, conf, side="left"), n_bins - 1)
    total = 0.0
    for s in range(n_bins):
        mask = bins == s
        if mask.any():
            total += mask.sum() / conf.size * abs(conf[mask].mean() - corr[mask].mean())
    return float(total)


def auroc(scores_in, scores_out):
    """Mann-Whitney P(in > out) + 0.5 P(tie), via midranks."""
    s_in = _vec(scores_in, "scores_in")
    s_out = _vec(scores_out, "scores_out")
    ranks = rankdata(np.concatenate([s_in, s_out]))
    n1, n0 = s_in.size, s_out.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def aupr(scores_pos, scores_neg):
    """Average precision with tied scores sharing one threshold.

    AP = sum over distinct thresholds (descending) of delta-recall * precision.
    """
    pos = _vec(scores_pos, "scores_pos")
    neg = _vec(scores_neg, "scores_neg")
    s = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # last index of every block of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = tp[ends]
    precision = tp / (ends + 1.0)
    recall = tp / pos.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def detection_accuracy(scores_in, scores_out):
    """Best accuracy over thresholds t, predicting in-domain when score > t.

    Candidate thresholds are midpoints between adjacent distinct scores plus +/-inf.
    """
    s_in = np.sort(_vec(scores_in, "scores_in"))
    s_out = np.sort(_vec(scores_out, "scores_out"))
    u = np.unique(np.concatenate([s_in, s_out]))
    t = np.r_[-np.inf, 0.5 * (u[:-1] + u[1:]), np.inf]
    in_correct = s_in.size - np.searchsorted(s_in, t, side="right")
    out_correct = np.searchsorted(s_out, t, side="right")
    return float(np.max(in_correct + out_correct) / (s_in.size + s_out.size))


@dataclass
class EvalReport:
    error_rate: float | None = None
    nll: float | None = None
    ece: float | None = None
    n_bins: int = 10
    auroc: float | None = None
    aupr_in: float | None = None
    aupr_out: float | None = None
    detection_accuracy: float | None = None
    metadata: dict = field(default_factory=dict)

    FIELDS = ("error_rate", "nll", "ece", "n_bins", "auroc", "aupr_in", "aupr_out", "detection_accuracy")

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, **asdict(self)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv_row(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(("schema",) + self.FIELDS + ("metadata",))
        vals = ["" if getattr(self, f) is None else repr(getattr(self, f)) for f in self.FIELDS]
        w.writerow([REPORT_SCHEMA] + vals + [json.dumps(self.metadata, sort_keys=True)])
        return buf.getvalue()


def evaluate_in_domain(probs, labels, n_bins=10, metadata=None):
    """Error rate (%), mean NLL (nats) and ECE (%) from an (n, K) probability array."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"{probs.shape[0] if probs.ndim else 0} predictions vs {labels.shape[0]} labels")
    if labels.size == 0:
        raise EmptyInput("no predictions to evaluate")
    pred = np.argmax(probs, axis=1)
    correct = pred == labels
    conf = probs[np.arange(labels.size), pred]
    p_true = np.maximum(probs[np.arange(labels.size), labels], PROB_FLOOR)
    return EvalReport(
        error_rate=float(100.0 * np.mean(~correct)),
        nll=float(-np.mean(np.log(p_true))),
        ece=float(100.0 * ece(conf, correct, n_bins)),
        n_bins=n_bins,
        metadata=dict(metadata or {}),
    )


def evaluate_ood(scores_in, scores_out, metadata=None):
    """AUROC, AUPR in/out and detection accuracy, all in percent.

    AUPR-out treats OOD as positive and ranks by negated scores.
    """
    s_in = _vec(scores_in, "scores_in")
    s_out = _vec(scores_out, "scores_out")
    meta = {"ood_score": "max_probability", "aupr_out_orientation": "negated scores, OOD positive"}
    meta.update(metadata or {})
    return EvalReport(
        auroc=100.0 * auroc(s_in, s_out),
        aupr_in=100.0 * aupr(s_in, s_out),
        aupr_out=100.0 * aupr(-s_out, -s_in),
        detection_accuracy=100.0 * detection_accuracy(s_in, s_out),
        metadata=meta,
    )
