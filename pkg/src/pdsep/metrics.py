"""Separation quality metrics, aggregated per source over a test set."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PSNR_CAP = 99.0


class UndefinedCorrelationError(ValueError):
    """Correlation with a constant signal has a zero denominator."""


def _pair(m, h) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(m, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if m.shape != h.shape:
        raise ValueError(f"shapes {m.shape} and {h.shape} differ")
    if m.size == 0:
        raise ValueError("empty input")
    return m, h


def mse(m, h) -> float:
    m, h = _pair(m, h)
    return float(np.mean((m - h) ** 2))


def psnr(m, h, max_value: float = 1.0) -> float:
    """10*log10(max_value**2 / MSE) in dB; returns PSNR_CAP when MSE is 0."""
    if not max_value > 0:
        raise ValueError(f"max_value must be positive, got {max_value}")
    err = mse(m, h)
    if err == 0:
        return PSNR_CAP
    return 10.0 * math.log10(max_value**2 / err)


def correlation(x, y) -> float:
    """Pearson r, computed in float64 and clamped to [-1, 1] against rounding."""
    x, y = _pair(np.ravel(x), np.ravel(y))
    if x.size < 2:
        raise ValueError("correlation needs at least two samples")
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant signal")
    return float(np.clip(np.dot(dx, dy) / denom, -1.0, 1.0))


def unit_range(x) -> np.ndarray:
    """Map [-1, 1] affinely onto [0, 1]."""
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


@dataclass
class MetricsReport:
    """Scores indexed [record, source]."""

    psnr_db: np.ndarray
    corr: np.ndarray
    baseline_corr: np.ndarray
    permutations: list | None = None

    @property
    def records(self) -> int:
        return self.psnr_db.shape[0]

    @property
    def n(self) -> int:
        return self.psnr_db.shape[1]

    @property
    def sentinel_count(self) -> int:
        return int(np.sum(self.psnr_db == PSNR_CAP))

    def mean_psnr(self) -> np.ndarray:
        """Per-source mean PSNR over non-sentinel entries (the cap if all are capped)."""
        out = np.full(self.n, PSNR_CAP)
        for i in range(self.n):
            col = self.psnr_db[:, i]
            col = col[col != PSNR_CAP]
            if col.size:
                out[i] = col.mean()
        return out

    def mean_corr(self) -> np.ndarray:
        return self.corr.mean(axis=0)

    def mean_baseline(self) -> np.ndarray:
        return self.baseline_corr.mean(axis=0)

    def grand_psnr(self) -> float:
        values = self.psnr_db[self.psnr_db != PSNR_CAP]
        return float(values.mean()) if values.size else PSNR_CAP

    def grand_corr(self) -> float:
        return float(self.corr.mean())

    def grand_baseline(self) -> float:
        return float(self.baseline_corr.mean())


def _score(estimate, truth) -> tuple[float, float]:
    return psnr(unit_range(estimate), unit_range(truth), 1.0), correlation(estimate, truth)


def evaluate(estimates: Sequence[Sequence[np.ndarray]], dataset, permute: bool = False) -> MetricsReport:
    """Score ``estimates[r][i]`` against source ``i`` of record ``r``.

    Pairing is by index. ``permute`` instead picks, per record, the source
    assignment with the highest mean correlation; it is a diagnostic only.
    """
    records = list(dataset)
    if len(estimates) != len(records):
        raise ValueError(f"{len(estimates)} estimate sets for {len(records)} records")
    n = len(records[0].sources) if records else 0
    p = np.zeros((len(records), n))
    r = np.zeros((len(records), n))
    b = np.zeros((len(records), n))
    perms = [] if permute else None
    for k, (est, rec) in enumerate(zip(estimates, records)):
        if len(est) != len(rec.sources):
            raise ValueError(f"record {k}: {len(est)} estimates for {len(rec.sources)} sources")
        order = tuple(range(n))
        if permute:
            order = max(itertools.permutations(range(n)),
                        key=lambda o: sum(correlation(est[j], rec.sources[i]) for i, j in enumerate(o)))
            perms.append(order)
        for i, j in enumerate(order):
            p[k, i], r[k, i] = _score(est[j], rec.sources[i])
            b[k, i] = correlation(rec.mixture, rec.sources[i])
    return MetricsReport(p, r, b, perms)


HEADER = ["record", "source", "psnr_db", "corr", "baseline_corr"]


def _fmt(x: float) -> str:
    return "%.9g" % x


def report_text(report: MetricsReport) -> str:
    """CSV text: one row per (record, source), then per-source and overall means.

    Mean rows carry ``mean`` in the record column and the source index or
    ``all``; mean PSNR excludes capped entries.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for k in range(report.records):
        for i in range(report.n):
            w.writerow([k, i, _fmt(report.psnr_db[k, i]), _fmt(report.corr[k, i]), _fmt(report.baseline_corr[k, i])])
    mp, mr, mb = report.mean_psnr(), report.mean_corr(), report.mean_baseline()
    for i in range(report.n):
        w.writerow(["mean", i, _fmt(mp[i]), _fmt(mr[i]), _fmt(mb[i])])
    w.writerow(["mean", "all", _fmt(report.grand_psnr()), _fmt(report.grand_corr()), _fmt(report.grand_baseline())])
    return buf.getvalue()


def report_csv(report: MetricsReport, path) -> None:
    Path(path).write_text(report_text(report))


def read_report_csv(path) -> tuple[list[dict], list[dict]]:
    """Parse a metrics CSV into (data rows, mean rows) with float values."""
    rows, means = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {k: float(row[k]) for k in ("psnr_db", "corr", "baseline_corr")}
            parsed["source"] = row["source"]
            if row["record"] == "mean":
                means.append(parsed)
            else:
                parsed["record"] = int(row["record"])
                rows.append(parsed)
    return rows, means
