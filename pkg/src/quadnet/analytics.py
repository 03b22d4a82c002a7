"""Embedding-space statistics: distance distributions and quantile-threshold error rates.

For a class c and a point x, the statistic T(x) is the mean Euclidean distance
from x to the members of c (x itself excluded when it is a member). A point is
accepted as belonging to c when T(x) < q. Two thresholds are reported:

* q from the (1 - alpha) quantile of member statistics: the type I rate is
  about alpha by construction, the type II rate is measured on non-members.
* q from the beta quantile of non-member statistics: the type II rate is
  about beta, the type I rate is measured on members.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import DomainError

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
MIN_GROUP = 20


@dataclass
class DistanceSummary:
    class_label: int
    kind: str
    q025: float
    q25: float
    median: float
    q75: float
    q975: float
    sample_count: int


@dataclass
class ErrorEstimate:
    class_label: int
    type1_at_alpha: float
    type2_at_alpha: float
    type1_at_beta: float
    type2_at_beta: float
    alpha: float
    beta: float
    threshold_alpha: float
    threshold_beta: float


@dataclass
class AnalysisReport:
    intra: list[DistanceSummary] = field(default_factory=list)
    inter: list[DistanceSummary] = field(default_factory=list)
    errors: list[ErrorEstimate] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    alpha: float = 0.025
    beta: float = 0.025

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "intra": [asdict(s) for s in self.intra],
            "inter": [asdict(s) for s in self.inter],
            "errors": [asdict(e) for e in self.errors],
            "skipped": list(self.skipped),
        }


def pairwise_distances(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise DomainError(f"expected a non-empty N x d matrix, got shape {x.shape}")
    n = len(x)
    out = np.zeros((n, n))
    iu, ju = np.triu_indices(n, 1)
    # one evaluation per unordered pair, mirrored, so symmetry is exact
    d = np.sqrt(((x[iu] - x[ju]) ** 2).sum(axis=1))
    out[iu, ju] = d
    out[ju, iu] = d
    return out


def _cross_distances(a: np.ndarray, b: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), chunk):
        blk = a[s : s + chunk]
        out[s : s + len(blk)] = np.sqrt(((blk[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return out


def class_distances(embeddings, labels, class_label: int, kind: str) -> np.ndarray:
    """Within-class pair distances (``intra``) or member-to-everyone-else distances (``inter``)."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    inside = labels == class_label
    members = x[inside]
    if kind == "intra":
        if len(members) < 2:
            raise DomainError(f"class {class_label} has {len(members)} members; intra distances need 2")
        iu, ju = np.triu_indices(len(members), 1)
        return np.sqrt(((members[iu] - members[ju]) ** 2).sum(axis=1))
    if kind == "inter":
        others = x[~inside]
        if len(members) < 1 or len(others) < 1:
            raise DomainError(f"class {class_label} needs at least one member and one non-member for inter distances")
        return _cross_distances(members, others).ravel()
    raise DomainError(f"kind must be 'intra' or 'inter', got {kind!r}")


def quantile(values, p: float) -> float:
    """Linear interpolation between order statistics at position (n - 1) * p."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), p, method="linear"))


def box_stats(values, class_label: int = 0, kind: str = "intra") -> DistanceSummary:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("box statistics of an empty sample")
    qs = np.quantile(v, QUANTILES, method="linear")
    # interpolation can leave adjacent quantiles 1 ulp out of order
    qs = np.maximum.accumulate(qs)
    return DistanceSummary(class_label, kind, *(float(q) for q in qs), int(v.size))


def _mean_distance_to(x: np.ndarray, members: np.ndarray) -> np.ndarray:
    return _cross_distances(x, members).mean(axis=1)


def mean_distance_statistic(x_index: int, embeddings, labels, class_label: int) -> float:
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.flatnonzero(labels == class_label)
    idx = idx[idx != x_index]
    if len(idx) == 0:
        raise DomainError(f"class {class_label} has no members besides the query")
    return float(np.sqrt(((x[idx] - x[x_index]) ** 2).sum(axis=1)).mean())


def class_statistics(embeddings, labels, class_label: int) -> tuple[np.ndarray, np.ndarray]:
    """T values for every member (self excluded) and every non-member."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    inside = labels == class_label
    members = x[inside]
    n = len(members)
    if n < 2:
        raise DomainError(f"class {class_label} needs at least 2 members")
    # self-distance is zero, so summing all n and dividing by n - 1 excludes it
    member_t = _cross_distances(members, members).sum(axis=1) / (n - 1)
    other_t = _mean_distance_to(x[~inside], members)
    return member_t, other_t


def error_rates(member_t, other_t, alpha: float, beta: float) -> dict[str, float]:
    member_t = np.asarray(member_t, dtype=np.float64)
    other_t = np.asarray(other_t, dtype=np.float64)
    q_alpha = quantile(member_t, 1.0 - alpha)
    q_beta = quantile(other_t, beta)
    return {
        "type1_at_alpha": float(np.mean(member_t >= q_alpha)),
        "type2_at_alpha": float(np.mean(other_t < q_alpha)),
        "type1_at_beta": float(np.mean(member_t >= q_beta)),
        "type2_at_beta": float(np.mean(other_t < q_beta)),
        "threshold_alpha": q_alpha,
        "threshold_beta": q_beta,
    }


def quantile_error_estimates(embeddings, labels, class_label: int, alpha: float = 0.025, beta: float = 0.025) -> ErrorEstimate:
    labels = np.asarray(labels, dtype=np.int64)
    n_in = int((labels == class_label).sum())
    n_out = len(labels) - n_in
    if n_in < MIN_GROUP or n_out < MIN_GROUP:
        raise DomainError(
            f"class {class_label}: {n_in} members and {n_out} non-members; at least {MIN_GROUP} of each required"
        )
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise DomainError("alpha and beta must lie in (0, 1)")
    member_t, other_t = class_statistics(embeddings, labels, class_label)
    return ErrorEstimate(class_label=class_label, alpha=alpha, beta=beta, **error_rates(member_t, other_t, alpha, beta))


def analyze(embeddings, labels, alpha: float = 0.025, beta: float = 0.025) -> AnalysisReport:
    """Distance summaries for every label and error estimates for labelled classes."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    present = np.unique(labels)
    if len(present) < 2:
        raise DomainError("analysis needs at least two labels")
    # canonical row order makes the report independent of input order
    order = np.lexsort((*x.T[::-1], labels))
    x, labels = x[order], labels[order]
    report = AnalysisReport(alpha=alpha, beta=beta)
    for c in present.tolist():
        for kind, bucket in (("intra", report.intra), ("inter", report.inter)):
            try:
                bucket.append(box_stats(class_distances(x, labels, c, kind), c, kind))
            except DomainError as exc:
                report.skipped.append({"class": c, "table": kind, "reason": str(exc)})
        if c == -1:
            continue
        try:
            report.errors.append(quantile_error_estimates(x, labels, c, alpha, beta))
        except DomainError as exc:
            report.skipped.append({"class": c, "table": "errors", "reason": str(exc)})
    return report


def write_report_json(report: AnalysisReport, path, **extra) -> None:
    Path(path).write_text(json.dumps({**report.to_dict(), **extra}, indent=2, sort_keys=True) + "\n")


ERROR_COLUMNS = ("class", "type1_at_alpha", "type2_at_alpha", "type1_at_beta", "type2_at_beta")


def write_errors_csv(report: AnalysisReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERROR_COLUMNS)
        for e in report.errors:
            w.writerow([e.class_label, *(f"{getattr(e, c):.6f}" for c in ERROR_COLUMNS[1:])])


def write_summaries_csv(summaries: list[DistanceSummary], path) -> None:
    cols = ("class", "kind", "q025", "q25", "median", "q75", "q975", "sample_count")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in summaries:
            w.writerow([s.class_label, s.kind, s.q025, s.q25, s.median, s.q75, s.q975, s.sample_count])


def write_embeddings_csv(ids, labels, embeddings, path) -> None:
    """Export for external projection tools: id, label, e0..e{d-1}."""
    emb = np.asarray(embeddings, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", *[f"e{j}" for j in range(emb.shape[1])]])
        for i, lab, row in zip(ids, labels, emb):
            w.writerow([i, int(lab), *[repr(float(v)) for v in row]])


# ---------------------------------------------------------------- SVG


def render_boxplots(summaries: list[DistanceSummary], title: str = "Distances") -> str:
    """Horizontal box-and-whisker chart, one row per summary, as an SVG 1.1 document."""
    if not summaries:
        raise DomainError("nothing to plot")
    row_h, left, right, top, bottom = 28, 70, 30, 40, 50
    width = 640
    height = top + bottom + row_h * len(summaries)
    lo = min(s.q025 for s in summaries)
    hi = max(s.q975 for s in summaries)
    if hi - lo <= 0:
        lo, hi = lo - 0.5, hi + 0.5
    span = width - left - right

    def px(v: float) -> float:
        return left + (v - lo) / (hi - lo) * span

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    axis_y = top + row_h * len(summaries)
    parts.append(f'<line x1="{left}" y1="{axis_y}" x2="{width - right}" y2="{axis_y}" stroke="black"/>')
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        x = px(v)
        parts.append(f'<line x1="{x:.2f}" y1="{axis_y}" x2="{x:.2f}" y2="{axis_y + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{axis_y + 18}" text-anchor="middle">{v:.3g}</text>')
    parts.append(
        f'<text x="{left + span / 2:.1f}" y="{height - 8}" text-anchor="middle">Euclidean distance</text>'
    )
    parts.append(
        f'<text x="14" y="{top + row_h * len(summaries) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + row_h * len(summaries) / 2:.1f})">Class</text>'
    )
    for i, s in enumerate(summaries):
        cy = top + row_h * i + row_h / 2
        y0, h = cy - row_h * 0.3, row_h * 0.6
        parts.append(f'<g class="box" data-class="{s.class_label}" data-kind="{escape(s.kind)}">')
        parts.append(f'<text x="{left - 8}" y="{cy + 4:.1f}" text-anchor="end">{s.class_label}</text>')
        parts.append(f'<line x1="{px(s.q025):.2f}" y1="{cy:.1f}" x2="{px(s.q25):.2f}" y2="{cy:.1f}" stroke="black"/>')
        parts.append(f'<line x1="{px(s.q75):.2f}" y1="{cy:.1f}" x2="{px(s.q975):.2f}" y2="{cy:.1f}" stroke="black"/>')
        for v in (s.q025, s.q975):
            parts.append(f'<line x1="{px(v):.2f}" y1="{y0:.1f}" x2="{px(v):.2f}" y2="{y0 + h:.1f}" stroke="black"/>')
        parts.append(
            f'<rect x="{px(s.q25):.2f}" y="{y0:.1f}" width="{px(s.q75) - px(s.q25):.2f}" height="{h:.1f}" '
            'fill="#9ecae1" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{px(s.median):.2f}" y1="{y0:.1f}" x2="{px(s.median):.2f}" y2="{y0 + h:.1f}" '
            'stroke="#e6550d" stroke-width="2"/>'
        )
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
