"""Forecast metrics, the Historical Average baseline and the sparse/dense benchmark."""
from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

import numpy as np

from .data import diffusion_series, make_dataset
from .errors import ConfigError, DataError, ShapeError
from .forecast import WaveletOperator
from .graph import row_normalize
from .mmf import FactorizeConfig, factorize
from .wavelets import eigenbasis_density, extract_basis, sparsity_report

MAPE_MIN_TARGET = 1e-8


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    mape: float  # percent
    horizon: int
    n_samples: int


def metrics(pred, truth) -> MetricReport:
    """MAE, RMSE and MAPE (percent, over targets with ``|y| >= 1e-8``).

    Arrays are ``(samples, horizon, nodes)``, ``(horizon, nodes)`` or anything
    of matching shape; ``horizon`` is read from axis 1 when present.
    """
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} differs from target shape {y.shape}")
    if p.size == 0:
        raise DataError("no samples to score")
    err = p - y
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    valid = np.abs(y) >= MAPE_MIN_TARGET
    if not valid.any():
        raise DataError(f"every target is below the MAPE threshold {MAPE_MIN_TARGET}")
    mape = float(np.mean(np.abs(err[valid]) / np.abs(y[valid])) * 100.0)
    horizon = p.shape[1] if p.ndim >= 3 else (p.shape[0] if p.ndim == 2 else 1)
    n_samples = p.shape[0] if p.ndim >= 3 else 1
    # power-mean inequality, up to rounding
    assert rmse >= mae * (1 - 1e-12), (rmse, mae)
    return MetricReport(mae, rmse, mape, horizon, n_samples)


def metrics_or_nan(pred, truth) -> MetricReport:
    """Like :func:`metrics` but MAPE is NaN when no target qualifies."""
    try:
        return metrics(pred, truth)
    except DataError:
        p = np.asarray(pred, dtype=np.float64)
        y = np.asarray(truth, dtype=np.float64)
        if p.size == 0:
            return MetricReport(float("nan"), float("nan"), float("nan"), 0, 0)
        e = p - y
        return MetricReport(float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e * e))), float("nan"),
                            p.shape[1] if p.ndim >= 3 else 1, p.shape[0] if p.ndim >= 3 else 1)


def seasonal_means(train_series, period: int) -> np.ndarray:
    """``(period, nodes)`` uniform mean of training rows at each phase ``t mod period``."""
    x = np.asarray(train_series, dtype=np.float64)
    if period < 1:
        raise ConfigError("period must be >= 1")
    if period > len(x):
        raise ConfigError(f"period {period} is longer than the training span {len(x)}")
    phase = np.arange(len(x)) % period
    return np.stack([x[phase == k].mean(axis=0) for k in range(period)])


def historical_average(dataset, period: int, split: str = "test") -> np.ndarray:
    """HA forecasts for every window of ``split``, shaped like its raw targets."""
    lo, hi = dataset.split_range("train")
    means = seasonal_means(dataset.series[lo:hi], period)
    starts = dataset.window_starts(split)
    t = starts[:, None] + np.arange(dataset.horizon)[None, :]
    return means[t % period]


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchResult:
    label: str
    median_seconds_per_epoch: float
    runs: int
    nnz_density: float  # percent of stored entries in the basis used
    losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.runs < 5:
            raise ConfigError("a benchmark needs at least 5 runs")


@dataclass
class BenchReport:
    sparse: BenchResult
    dense: BenchResult
    eigenbasis_density: float  # percent, dense Laplacian eigenvectors
    sparsity: dict


def bench_sparsity_and_speed(n: int, graph_gen, levels: int, order_k: int = 2, runs: int = 5, *,
                             hidden: int = 8, layers: int = 1, history: int = 4, horizon: int = 2,
                             steps: int = 48, batch: int = 8, seed: int = 0) -> BenchReport:
    """Train identical models through the sparse basis and its densified copy.

    ``graph_gen(n, seed)`` returns a symmetric graph Laplacian. Each of the
    ``runs`` epochs is one timing sample.
    """
    # train imports this module for its metrics
    from .train import TrainConfig, build_model, train

    if runs < 5:
        raise ConfigError("runs must be >= 5")
    lap = np.asarray(graph_gen(n, seed), dtype=np.float64)
    f = factorize(lap, FactorizeConfig(levels=levels, order=order_k, seed=seed))
    basis = extract_basis(f)
    report = sparsity_report(basis)
    adj = -lap.copy()
    np.fill_diagonal(adj, 0.0)
    series = diffusion_series(row_normalize(np.abs(adj)), steps, seed=seed)
    ds = make_dataset(series, history, horizon)
    cfg = TrainConfig(epochs=runs, hidden=hidden, layers=layers, batch=batch, seed=seed)

    results = []
    for label, sparse in (("sparse", True), ("dense", False)):
        model = build_model(WaveletOperator(basis, sparse=sparse), cfg)
        _, recs = train(model, ds, cfg, validate=False)
        secs = [r.seconds for r in recs]
        results.append(BenchResult(label, statistics.median(secs), runs,
                                   report["density_percent"] if sparse else 100.0,
                                   [r.loss for r in recs], secs))
    return BenchReport(results[0], results[1], eigenbasis_density(lap), report)


BENCH_COLUMNS = ("label", "median_seconds_per_epoch", "runs", "nnz_density")


def format_bench_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in results:
        w.writerow([r.label, f"{r.median_seconds_per_epoch:.6f}", r.runs, f"{r.nnz_density:.4f}"])
    return buf.getvalue()


def format_bench_table(report: BenchReport) -> str:
    rows = [("path", "median s/epoch", "runs", "density %")]
    for r in (report.sparse, report.dense):
        rows.append((r.label, f"{r.median_seconds_per_epoch:.4f}", str(r.runs), f"{r.nnz_density:.2f}"))
    rows.append(("eigenbasis", "-", "-", f"{report.eigenbasis_density:.2f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    speed = report.dense.median_seconds_per_epoch / report.sparse.median_seconds_per_epoch
    lines.append(f"speedup {speed:.2f}x")
    return "\n".join(lines) + "\n"
