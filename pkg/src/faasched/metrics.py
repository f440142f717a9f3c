"""Latency and counter statistics used across experiments."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .workload import InvalidParameter

# quartiles interpolate linearly at fractional rank q*(n-1), numpy's default method
QUARTILE_METHOD = "linear"


def _arr(samples, min_len: int, what: str) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < min_len:
        raise InvalidParameter(f"{what} needs at least {min_len} samples, got {x.size}")
    return x


def quantile(samples, q: float) -> float:
    x = _arr(samples, 1, "quantile")
    return float(np.quantile(x, q, method=QUARTILE_METHOD))


def iqr(samples) -> float:
    x = _arr(samples, 2, "iqr")
    q1, q3 = np.quantile(x, [0.25, 0.75], method=QUARTILE_METHOD)
    return float(max(q3 - q1, 0.0))


def mean(samples) -> float:
    return float(np.mean(_arr(samples, 1, "mean")))


def variance(samples) -> float:
    """Population variance."""
    return float(np.var(_arr(samples, 2, "variance")))


def mean_variance(samples) -> tuple[float, float]:
    return mean(samples), variance(samples)


def coefficient_of_variation(samples) -> float:
    x = _arr(samples, 1, "coefficient_of_variation")
    m = float(np.mean(x))
    if m == 0:
        raise InvalidParameter("coefficient of variation undefined for zero mean")
    return float(np.std(x)) / m


def pearson(x, y) -> float:
    a = _arr(x, 2, "pearson")
    b = _arr(y, 2, "pearson")
    if a.size != b.size:
        raise InvalidParameter("pearson needs equal-length inputs")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise InvalidParameter("pearson undefined for a constant input")
    r = float(np.corrcoef(a, b)[0, 1])
    return min(1.0, max(-1.0, r))


def normalize_to_isolated(colocated: float, isolated: float) -> float:
    if not isolated > 0:
        raise InvalidParameter(f"isolated baseline must be positive, got {isolated}")
    return colocated / isolated


SUMMARY_COLUMNS = ["app", "kind", "mean", "variance", "iqr", "cov", "n",
                   "normalized_mean", "normalized_variance", "normalized_iqr"]


@dataclass
class LatencySummary:
    app: str
    kind: str  # "execution" or "response"
    mean: float
    variance: float
    iqr: float
    cov: float
    n: int
    normalized_mean: float = float("nan")
    normalized_variance: float = float("nan")
    normalized_iqr: float = float("nan")

    def row(self) -> list:
        return [self.app, self.kind, *(repr(float(v)) for v in
                (self.mean, self.variance, self.iqr, self.cov)), self.n,
                *(repr(float(v)) for v in (self.normalized_mean, self.normalized_variance, self.normalized_iqr))]


def _safe(fn, x):
    try:
        return fn(x)
    except InvalidParameter:
        return float("nan")


def _norm(a, b):
    if b is None or not b > 0 or not np.isfinite(a):
        return float("nan")
    return a / b


def summarize(records: Iterable, isolated: dict | None = None, kinds=("execution", "response"),
              since: float = 0.0) -> list[LatencySummary]:
    """Per-app, per-kind statistics of request records arriving at or after `since`.

    `isolated` maps app -> kind -> {"mean", "variance", "iqr"} from solo runs.
    """
    by_app: dict[str, dict[str, list[float]]] = {}
    for r in records:
        if r.arrival < since:
            continue
        d = by_app.setdefault(r.app, {"execution": [], "response": []})
        d["execution"].append(r.execution_latency)
        d["response"].append(r.response_latency)
    out = []
    for app in sorted(by_app):
        for kind in kinds:
            xs = by_app[app][kind]
            s = LatencySummary(app, kind, _safe(mean, xs), _safe(variance, xs), _safe(iqr, xs),
                               _safe(coefficient_of_variation, xs), len(xs))
            base = (isolated or {}).get(app, {}).get(kind)
            if base:
                s.normalized_mean = _norm(s.mean, base.get("mean"))
                s.normalized_variance = _norm(s.variance, base.get("variance"))
                s.normalized_iqr = _norm(s.iqr, base.get("iqr"))
            out.append(s)
    return out


def write_summary(summaries: Sequence[LatencySummary], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow(s.row())
