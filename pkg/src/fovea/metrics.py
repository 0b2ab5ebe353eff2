"""Evaluation metrics: mean radial error, detection rates, observer spread.

All distances are Euclidean in pixels, converted to millimeters through the
dataset's px_per_mm. Standard deviations use the population denominator.
Detection thresholds count errors less than or equal to the bound.
"""

from __future__ import annotations

import json

import numpy as np

SDR_THRESHOLDS_MM = (2.0, 2.5, 3.0, 4.0)


class MetricsError(ValueError):
    """Invalid metric input (empty lists, mismatched lengths)."""


def radial_errors(preds, gts, px_per_mm: float):
    """Per-pair Euclidean distance in millimeters."""
    p = np.asarray(preds, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 2:
        raise MetricsError(f"radial_errors: need matching [n,2] arrays, got {p.shape} vs {g.shape}")
    if not px_per_mm > 0:
        raise MetricsError(f"radial_errors: px_per_mm must be positive, got {px_per_mm}")
    return np.hypot(p[:, 0] - g[:, 0], p[:, 1] - g[:, 1]) / px_per_mm


def mre(errors):
    """(mean, population std) of an error list in millimeters."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise MetricsError("mre: empty error list")
    return float(e.mean()), float(e.std())


def sdr(errors, thresholds=SDR_THRESHOLDS_MM):
    """Percentage of errors at or below each threshold."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise MetricsError("sdr: empty error list")
    t = list(thresholds)
    if t != sorted(t):
        raise MetricsError(f"sdr: thresholds must be ascending, got {thresholds}")
    return [100.0 * float(np.count_nonzero(e <= tau)) / e.size for tau in t]


def iov(labels_a, labels_b, px_per_mm: float):
    """Mean distance from each annotator's point to the pair's mean, in mm.

    Both distances equal half the annotator separation, so this is
    mean(|a - b|) / 2 / px_per_mm.
    """
    a = np.asarray(labels_a, dtype=np.float64)
    b = np.asarray(labels_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 2:
        raise MetricsError(f"iov: need matching [n,2] arrays, got {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise MetricsError("iov: empty label lists")
    return float(np.mean(np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])) / 2.0 / px_per_mm)


class EvalReport:
    """Per-landmark and averaged MRE/SDR (plus IOV when two annotators are
    available), emitted as JSON or a plain-text table."""

    def __init__(self, thresholds=SDR_THRESHOLDS_MM):
        self.thresholds = tuple(thresholds)
        self.rows = []  # dicts: name, count, mre, std, iov (or None), sdr list

    def add_landmark(self, name: str, errors_mm, iov_mm: float | None = None):
        mean, std = mre(errors_mm)
        self.rows.append({
            "name": name,
            "count": int(np.asarray(errors_mm).size),
            "mre": mean,
            "std": std,
            "iov": None if iov_mm is None else float(iov_mm),
            "sdr": sdr(errors_mm, self.thresholds),
        })

    @property
    def average(self):
        """Flat average over all errors pooled across landmarks is not
        recoverable from row summaries; rows are weighted by count."""
        if not self.rows:
            raise MetricsError("EvalReport: no landmarks added")
        total = sum(r["count"] for r in self.rows)
        avg = {
            "name": "Average",
            "count": total,
            "mre": sum(r["mre"] * r["count"] for r in self.rows) / total,
            "std": None,
            "iov": None,
            "sdr": [sum(r["sdr"][i] * r["count"] for r in self.rows) / total
                    for i in range(len(self.thresholds))],
        }
        iovs = [r["iov"] for r in self.rows if r["iov"] is not None]
        if len(iovs) == len(self.rows):
            avg["iov"] = sum(r["iov"] * r["count"] for r in self.rows) / total
        return avg

    def to_json(self) -> str:
        return json.dumps({
            "thresholds_mm": list(self.thresholds),
            "landmarks": self.rows,
            "average": self.average,
        }, indent=2)

    def to_text(self) -> str:
        """Landmark rows with MRE (mm), IOV (mm), and SDR (%) columns."""
        headers = ["Landmark", "n", "MRE (mm)", "IOV (mm)"]
        headers += [f"SDR {t:g}mm" for t in self.thresholds]
        lines = []
        body = self.rows + [self.average]
        widths = [max(len(h), 9) for h in headers]
        widths[0] = max(widths[0], 22)
        widths[2] = 13  # room for "x.xx ± y.yy"
        lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for r in body:
            mre_txt = f"{r['mre']:.2f}" + (f" ± {r['std']:.2f}" if r["std"] is not None else "")
            iov_txt = "-" if r["iov"] is None else f"{r['iov']:.2f}"
            cells = [r["name"], str(r["count"]), mre_txt, iov_txt]
            cells += [f"{v:.2f}" for v in r["sdr"]]
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"
