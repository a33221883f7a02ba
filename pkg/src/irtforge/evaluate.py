"""Agreement metrics between calibrations and proficiency distribution summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibrate import ItemParams, anchor_shift


def _pair(x, y, min_len=3):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"vectors must be 1-D and equally long, got {x.shape} and {y.shape}")
    if x.shape[0] < min_len:
        raise ValueError(f"need at least {min_len} values, got {x.shape[0]}")
    return x, y


def pearson(x, y) -> float:
    """Sample Pearson correlation."""
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.shape[0])
    sx = x[order]
    start = 0
    for end in range(1, x.shape[0] + 1):
        if end == x.shape[0] or sx[end] != sx[start]:
            ranks[order[start:end]] = 0.5 * (start + end + 1)
            start = end
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def rmse(estimate, truth) -> float:
    e, t = _pair(estimate, truth, min_len=1)
    return math.sqrt(float(np.mean((t - e) ** 2)))


@dataclass(frozen=True)
class DistStats:
    label: str
    mean: float
    sd: float
    kurtosis: float | None
    n: int

    def to_dict(self):
        return {"label": self.label, "mean": self.mean, "sd": self.sd,
                "kurtosis": self.kurtosis, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        k = d.get("kurtosis")
        return cls(d["label"], float(d["mean"]), float(d["sd"]),
                   None if k is None else float(k), int(d["n"]))


def dist_stats(thetas, label: str) -> DistStats:
    """Mean, sample SD (n - 1) and raw kurtosis m4 / m2**2 (population moments).

    Kurtosis is left as None when n < 4.
    """
    t = np.asarray(thetas, dtype=float)
    n = t.shape[0]
    if n < 2:
        raise ValueError("dist_stats needs at least 2 values")
    mean = float(t.mean())
    sd = float(t.std(ddof=1))
    kurt = None
    if n >= 4:
        c = t - mean
        m2 = float(np.mean(c**2))
        if m2 == 0:
            raise ValueError("kurtosis undefined for zero spread")
        kurt = float(np.mean(c**4)) / m2**2
    return DistStats(label, mean, sd, kurt, n)


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    pearson: float
    spearman: float
    rmse_raw: float
    rmse_anchored: float
    n_items: int

    def to_dict(self):
        return {"label": self.label, "pearson": self.pearson, "spearman": self.spearman,
                "rmse_raw": self.rmse_raw, "rmse_anchored": self.rmse_anchored,
                "n_items": self.n_items}

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], float(d["pearson"]), float(d["spearman"]),
                   float(d["rmse_raw"]), float(d["rmse_anchored"]), int(d["n_items"]))


@dataclass(frozen=True)
class ComparisonReport:
    """Rows in input order; ``anchored`` selects which RMSE is the headline one."""

    rows: tuple[ComparisonRow, ...]
    anchored: bool

    def rmse(self, row: ComparisonRow) -> float:
        return row.rmse_anchored if self.anchored else row.rmse_raw

    def to_dict(self):
        return {"anchored": self.anchored, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(ComparisonRow.from_dict(r) for r in d["rows"]), bool(d["anchored"]))


def compare_calibrations(benchmark: ItemParams, others: Sequence[tuple[str, ItemParams]],
                         anchor: bool = False) -> ComparisonReport:
    """Correlations and RMSE of each calibration against ``benchmark``.

    Metrics use the items that are ok in both. Correlations are taken on
    unanchored difficulties; both raw and mean-anchored RMSE are kept.
    """
    ref = benchmark.ok_betas()
    rows = []
    for label, params in others:
        ours = params.ok_betas()
        shared = [i for i in benchmark.item_ids if i in ref and i in ours]
        if len(shared) < 3:
            raise ValueError(f"{label}: only {len(shared)} shared ok items with the benchmark")
        b = np.array([ref[i] for i in shared])
        e = np.array([ours[i] for i in shared])
        c = anchor_shift(params, benchmark)
        rows.append(ComparisonRow(label, pearson(e, b), spearman(e, b), rmse(e, b),
                                  rmse(e + c, b), len(shared)))
    return ComparisonReport(tuple(rows), anchor)
