"""Error metrics, GER tables, the community-mean baseline and plot-data export."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import HouseRecord, TransactionEvent

GER_THRESHOLDS = (0.05, 0.10, 0.15, 0.20)
BIN_WIDTH = 0.01


def ger(predicted, actual):
    """General error rate (predicted - actual) / actual, in raw price space."""
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("actual price must be positive")
    out = (p - a) / a
    return float(out) if out.ndim == 0 else out


def cumulative_ger_table(gers, thresholds: Sequence[float] = GER_THRESHOLDS) -> np.ndarray:
    """Percentage of houses whose |GER| is strictly below each threshold."""
    g = np.abs(np.asarray(gers, dtype=np.float64))
    if g.size == 0:
        raise ValueError("no GER values to tabulate")
    return np.array([100.0 * np.count_nonzero(g < t) / g.size for t in thresholds])


def ger_histogram(gers, bin_width: float = BIN_WIDTH) -> tuple[np.ndarray, np.ndarray]:
    """Signed histogram; returns (left bin edges, counts), empty bins included.

    Bin ``k`` covers ``[k * w, (k + 1) * w)``; assignments are rounded first
    so values like 0.07 land in the bin a reader expects.
    """
    g = np.asarray(gers, dtype=np.float64)
    if g.size == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    k = np.floor(np.round(g / bin_width, 9)).astype(np.int64)
    lo = k.min()
    counts = np.bincount(k - lo)
    return (np.arange(lo, lo + len(counts)) * bin_width), counts


def rmse(pred, actual) -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(actual, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def mae(pred, actual) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(actual, dtype=np.float64))))


@dataclass
class EvaluationReport:
    method: str
    months: list[int]
    rmse: list[float]                 # normalized label space
    mae: list[float]
    n_houses: list[int]
    gers: np.ndarray                  # every scored transaction, month order
    train_loss: list[float] = field(default_factory=list)
    thresholds: tuple[float, ...] = GER_THRESHOLDS
    bin_width: float = BIN_WIDTH

    @property
    def cumulative(self) -> np.ndarray:
        return cumulative_ger_table(self.gers, self.thresholds)

    @property
    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        return ger_histogram(self.gers, self.bin_width)

    @property
    def total_houses(self) -> int:
        return int(sum(self.n_houses))

    def summary(self) -> dict:
        return {
            "method": self.method,
            "months": len(self.months),
            "houses": self.total_houses,
            "mean_rmse": float(np.mean(self.rmse)) if self.rmse else math.nan,
            "mean_mae": float(np.mean(self.mae)) if self.mae else math.nan,
            "cumulative_ger": dict(zip([f"{int(round(t * 100))}%" for t in self.thresholds],
                                       self.cumulative.round(4).tolist())),
        }


def build_report(method: str, months: Sequence[int], pred_norm: Sequence[np.ndarray],
                 actual_norm: Sequence[np.ndarray], scaler, train_loss: Sequence[float] = ()) -> EvaluationReport:
    """Assemble a report from per-month normalized predictions and labels."""
    r, m, n, g = [], [], [], []
    for p, y in zip(pred_norm, actual_norm):
        r.append(rmse(p, y))
        m.append(mae(p, y))
        n.append(len(y))
        g.append(ger(scaler.inverse(p), scaler.inverse(y)))
    gers = np.concatenate(g) if g else np.zeros(0)
    return EvaluationReport(method, list(months), r, m, n, gers, list(train_loss))


def naive_baseline(transactions: Sequence[TransactionEvent], houses: Sequence[HouseRecord],
                   month: int) -> np.ndarray:
    """Price every house at the mean of its community's latest sales before ``month``.

    Communities without earlier sales get the mean of all earlier sales.
    """
    past = [e for e in transactions if e.month_index < month]
    if not past:
        raise ValueError(f"no transactions before month {month}")
    comm = {h.house_id: (h.municipality, h.community) for h in houses}
    latest: dict[tuple[str, str], int] = {}
    for e in past:
        c = comm[e.house_id]
        latest[c] = max(latest.get(c, 0), e.month_index)
    sums: dict[tuple[str, str], list[float]] = defaultdict(list)
    for e in past:
        c = comm[e.house_id]
        if e.month_index == latest[c]:
            sums[c].append(e.price)
    fallback = float(np.mean([e.price for e in past]))
    means = {c: float(np.mean(v)) for c, v in sums.items()}
    return np.array([means.get((h.municipality, h.community), fallback) for h in houses])


def report_meta_weights(names: Sequence[str], logits, k: int = 15) -> list[tuple[str, float]]:
    """Softmax the meta-structure logits and return the ``k`` largest, descending."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (len(names),):
        raise ValueError(f"{len(names)} names but logits of shape {z.shape}")
    e = np.exp(z - z.max())
    w = e / e.sum()
    order = sorted(range(len(names)), key=lambda i: (-w[i], names[i]))
    return [(names[i], float(w[i])) for i in order[:k]]


def _write_csv(path: Path, header: str, rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def emit_plot_data(report: EvaluationReport, directory: str | Path,
                   meta_weights: Sequence[tuple[str, float]] | None = None) -> list[Path]:
    """Write the CSV series behind the error-distribution, loss and weight plots."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create plot-data directory {d}: {exc.strerror}") from None
    edges, counts = report.histogram
    out = [
        _write_csv(d / "ger_histogram.csv", "bin_left,bin_right,count",
                   [(round(a, 10), round(a + report.bin_width, 10), c) for a, c in zip(edges, counts)]),
        _write_csv(d / "ger_cumulative.csv", "threshold,percent",
                   zip(report.thresholds, report.cumulative)),
        _write_csv(d / "loss_curve.csv", "month,train_loss,test_loss",
                   zip(report.months,
                       report.train_loss if report.train_loss else [math.nan] * len(report.months),
                       report.rmse)),
        _write_csv(d / "monthly_metrics.csv", "month,rmse,mae,houses",
                   zip(report.months, report.rmse, report.mae, report.n_houses)),
    ]
    if meta_weights is not None:
        out.append(_write_csv(d / "meta_weights.csv", "rank,name,weight",
                              [(k + 1, n, w) for k, (n, w) in enumerate(meta_weights)]))
    return out
