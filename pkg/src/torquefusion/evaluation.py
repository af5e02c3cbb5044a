"""Retrieval, classification and captioning metrics plus significance tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import betainc


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


@dataclass
class DistanceMatrix:
    """Probe x gallery distances with labels and an optional ignore mask."""

    distances: np.ndarray
    probe_labels: np.ndarray
    gallery_labels: np.ndarray
    mask: Optional[np.ndarray] = None  # True = ignore this gallery item for this probe

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=float)
        self.probe_labels = np.asarray(self.probe_labels)
        self.gallery_labels = np.asarray(self.gallery_labels)
        P, G = self.distances.shape
        if self.probe_labels.shape != (P,) or self.gallery_labels.shape != (G,):
            raise EvaluationError("label lengths must match the distance matrix")
        if not np.all(np.isfinite(self.distances)):
            raise EvaluationError("distances must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (P, G):
                raise EvaluationError("mask must have the same shape as the distances")


def distance_matrix(probes, gallery, probe_labels, gallery_labels, metric="euclidean", mask=None):
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=float))
    if probes.shape[1] != gallery.shape[1]:
        raise EvaluationError(f"width mismatch: {probes.shape[1]} vs {gallery.shape[1]}")
    if metric == "euclidean":
        diff = probes[:, None, :] - gallery[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=-1))
    elif metric == "cosine":
        num = probes @ gallery.T
        den = np.linalg.norm(probes, axis=1)[:, None] * np.linalg.norm(gallery, axis=1)[None, :]
        if np.any(den == 0):
            raise EvaluationError("cosine distance is undefined for zero vectors")
        d = np.clip(1.0 - num / den, 0.0, 2.0)
    else:
        raise EvaluationError(f"unknown metric {metric!r}")
    return DistanceMatrix(d, probe_labels, gallery_labels, mask)


def _ranked_matches(D):
    """Per valid probe, a boolean array of label matches in ranked order.

    Ranking is by ascending distance with ties kept in gallery-index order;
    masked items are dropped. Probes without any valid positive are skipped.
    Returns (list of match arrays, number of skipped probes).
    """
    out, skipped = [], 0
    for i in range(D.distances.shape[0]):
        order = np.argsort(D.distances[i], kind="stable")
        if D.mask is not None:
            order = order[~D.mask[i, order]]
        matches = D.gallery_labels[order] == D.probe_labels[i]
        if not matches.any():
            skipped += 1
            continue
        out.append(matches)
    return out, skipped


def _mean_over_probes(values, skipped, what):
    if skipped:
        warnings.warn(f"{what}: {skipped} probe(s) without a valid positive were excluded", stacklevel=3)
    if not values:
        raise EvaluationError("no probe has a valid positive in the gallery")
    return float(np.mean(values))


def cmc_rank_k(D, k):
    """Fraction of probes with a same-label item among their top-k gallery hits."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    ranked, skipped = _ranked_matches(D)
    return _mean_over_probes([float(m[:k].any()) for m in ranked], skipped, "cmc")


def _average_precision(matches):
    hits = np.flatnonzero(matches) + 1
    return float(np.mean(np.arange(1, hits.size + 1) / hits))


def mean_average_precision(D):
    ranked, skipped = _ranked_matches(D)
    return _mean_over_probes([_average_precision(m) for m in ranked], skipped, "mAP")


def mean_inp(D):
    """Mean inverse negative penalty: #positives / rank of the hardest positive."""
    ranked, skipped = _ranked_matches(D)
    vals = [m.sum() / (np.flatnonzero(m)[-1] + 1) for m in ranked]
    return _mean_over_probes(vals, skipped, "mINP")


def retrieval_metrics(D, ks=(1, 5, 10)):
    """Rank-k for each k, mAP and mINP in one pass, plus the excluded-probe count."""
    ranked, skipped = _ranked_matches(D)
    if not ranked:
        raise EvaluationError("no probe has a valid positive in the gallery")
    out = {f"rank{k}": float(np.mean([m[:k].any() for m in ranked])) for k in ks}
    out["mAP"] = float(np.mean([_average_precision(m) for m in ranked]))
    out["mINP"] = float(np.mean([m.sum() / (np.flatnonzero(m)[-1] + 1) for m in ranked]))
    out["excluded_probes"] = skipped
    return out


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


@dataclass
class ClassificationReport:
    overall: float
    per_class: dict
    compare_overall: Optional[float] = None
    compare_per_class: Optional[dict] = None
    deltas: Optional[dict] = None


def _accuracies(predictions, labels, class_names):
    overall = 100.0 * float(np.mean(predictions == labels))
    per = {}
    for k, name in enumerate(class_names):
        sel = labels == k
        per[name] = 100.0 * float(np.mean(predictions[sel] == k)) if sel.any() else float("nan")
    return overall, per


def per_class_accuracy(predictions, labels, class_names, compare=None):
    """Top-1 accuracy (%) overall and per class.

    ``compare`` is an optional second prediction set (e.g. the +force model);
    deltas are ``compare - predictions`` per class and overall.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise EvaluationError("predictions and labels must be equal-length vectors")
    n_cls = len(class_names)
    for arr in (predictions, labels) + (() if compare is None else (np.asarray(compare),)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_cls):
            raise EvaluationError("unknown class id")
    overall, per = _accuracies(predictions, labels, class_names)
    report = ClassificationReport(overall, per)
    if compare is not None:
        compare = np.asarray(compare)
        if compare.shape != labels.shape:
            raise EvaluationError("comparison predictions must match labels in length")
        c_overall, c_per = _accuracies(compare, labels, class_names)
        report.compare_overall, report.compare_per_class = c_overall, c_per
        report.deltas = {name: c_per[name] - per[name] for name in class_names}
        report.deltas["overall"] = c_overall - overall
    return report


# ---------------------------------------------------------------------------
# captioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f: float


def tokenize(text):
    return text.lower().split()


def lcs_length(a, b):
    """Longest common subsequence length, O(len(a) * len(b)) with one row of memory."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    """ROUGE-L precision, recall and F1 (beta = 1) on case-folded tokens."""
    cand = tokenize(candidate) if isinstance(candidate, str) else [t.lower() for t in candidate]
    ref = tokenize(reference) if isinstance(reference, str) else [t.lower() for t in reference]
    if not cand and not ref:
        return RougeScore(1.0, 1.0, 1.0)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p, r = lcs / len(cand), lcs / len(ref)
    return RougeScore(p, r, 2.0 * p * r / (p + r))


# ---------------------------------------------------------------------------
# significance testing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSummary:
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class TTestSummary:
    a: SampleSummary
    b: SampleSummary
    t: float
    df: float
    p: float
    alpha: float
    significant: bool
    df_mode: str


def student_t_two_sided_p(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise EvaluationError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return float(betainc(0.5 * df, 0.5, df / (df + t * t)))


def t_test(a, b, alpha=0.05, df_mode="pooled"):
    """Two-sample t-test from summary statistics.

    The statistic is ``(mean_a - mean_b) / sqrt(s_a^2/n_a + s_b^2/n_b)``.
    ``df_mode="pooled"`` uses ``n_a + n_b - 2`` degrees of freedom;
    ``"welch"`` uses the Welch-Satterthwaite approximation.
    """
    a = a if isinstance(a, SampleSummary) else SampleSummary(*a)
    b = b if isinstance(b, SampleSummary) else SampleSummary(*b)
    for s in (a, b):
        if s.n < 2:
            raise EvaluationError("each sample needs n >= 2")
        if s.std < 0:
            raise EvaluationError("standard deviations must be non-negative")
    if df_mode not in ("pooled", "welch"):
        raise EvaluationError(f"unknown df mode {df_mode!r}")
    va, vb = a.std**2 / a.n, b.std**2 / b.n
    se2 = va + vb
    diff = a.mean - b.mean
    if se2 == 0:
        t = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(se2)
    if df_mode == "pooled" or se2 == 0:
        df = float(a.n + b.n - 2)
    else:
        df = se2**2 / (va**2 / (a.n - 1) + vb**2 / (b.n - 1))
    p = student_t_two_sided_p(t, df)
    return TTestSummary(a, b, t, df, p, alpha, p < alpha, df_mode)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("task", "dataset", "metric", "baseline", "+force", "delta")


@dataclass
class EvalReport:
    """Metric values for one run, keyed by metric name."""

    task: str
    dataset: str
    metrics: dict


@dataclass(frozen=True)
class DeltaRow:
    task: str
    dataset: str
    metric: str
    baseline: float
    augmented: float
    delta: float


def _fmt(x):
    return f"{x:.10g}"


@dataclass
class DeltaReport:
    rows: list
    notes: list = field(default_factory=list)

    def delta(self, metric):
        for r in self.rows:
            if r.metric == metric:
                return r.delta
        raise KeyError(metric)

    def format_table(self):
        cells = [list(REPORT_COLUMNS)]
        for r in self.rows:
            cells.append([r.task, r.dataset, r.metric, _fmt(r.baseline), _fmt(r.augmented), f"{r.delta:+.10g}"])
        widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
        lines += [f"# {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def to_records(self):
        """Machine-readable ``key=value`` lines, one row per metric."""
        lines = []
        for r in self.rows:
            lines.append(
                f"task={r.task} dataset={r.dataset} metric={r.metric} baseline={r.baseline!r} "
                f"augmented={r.augmented!r} delta={r.delta!r}"
            )
        return "\n".join(lines) + "\n"


def delta_report(baseline, augmented):
    """Row-wise ``augmented - baseline`` for matching metric keys."""
    if set(baseline.metrics) != set(augmented.metrics):
        raise EvaluationError(
            f"key mismatch: {sorted(baseline.metrics)} vs {sorted(augmented.metrics)}"
        )
    rows = [
        DeltaRow(baseline.task, baseline.dataset, k, baseline.metrics[k], augmented.metrics[k],
                 augmented.metrics[k] - baseline.metrics[k])
        for k in baseline.metrics
    ]
    return DeltaReport(rows)
