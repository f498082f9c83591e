"""Time-series datasets: CSV ingestion, chronological splits, z-scoring, windows.

CSV layout: a header row of node ids, then one row per timestep. If the first
column is not numeric it is read as a timestamp column and kept as strings.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .graph import knn_adjacency, knn_points, row_normalize
from .sparse import atomic_write_text

SPLITS = ("train", "val", "test")


def split_bounds(t_len: int, ratios=(0.7, 0.2, 0.1)) -> tuple[tuple[int, int], ...]:
    """Contiguous ``[lo, hi)`` ranges; boundaries at ``floor(cumulative ratio * T)``."""
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    # small slack so 0.7 * 100 lands on 70, not 69.99999
    b1 = int(np.floor(r[0] * t_len + 1e-9))
    b2 = int(np.floor((r[0] + r[1]) * t_len + 1e-9))
    return ((0, b1), (b1, b2), (b2, t_len))


@dataclass
class ForecastDataset:
    series: np.ndarray  # T x N raw values
    history_len: int
    horizon: int
    splits: tuple[tuple[int, int], ...]
    mean: np.ndarray
    std: np.ndarray
    node_ids: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None

    @property
    def n_nodes(self) -> int:
        return self.series.shape[1]

    @property
    def normalized(self) -> np.ndarray:
        return (self.series - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean

    def split_range(self, split: str) -> tuple[int, int]:
        try:
            return self.splits[SPLITS.index(split)]
        except ValueError:
            raise ConfigError(f"unknown split {split!r}") from None

    def window_starts(self, split: str) -> np.ndarray:
        """First target index of every window whose targets lie inside ``split``.

        The history may reach back into earlier splits.
        """
        lo, hi = self.split_range(split)
        first = max(lo, self.history_len)
        last = hi - self.horizon
        return np.arange(first, last + 1) if last >= first else np.arange(0)

    def windows(self, split: str, normalized: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """``(inputs B x history x N, targets B x horizon x N)``."""
        data = self.normalized if normalized else self.series
        starts = self.window_starts(split)
        h, p = self.history_len, self.horizon
        x = np.stack([data[s - h:s] for s in starts]) if len(starts) else np.zeros((0, h, self.n_nodes))
        y = np.stack([data[s:s + p] for s in starts]) if len(starts) else np.zeros((0, p, self.n_nodes))
        return x, y


def make_dataset(series, history_len: int, horizon: int, ratios=(0.7, 0.2, 0.1),
                 node_ids=None, timestamps=None) -> ForecastDataset:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"series must be T x N, got shape {x.shape}")
    if history_len < 1 or horizon < 1:
        raise ConfigError("history_len and horizon must be >= 1")
    t_len, n = x.shape
    if t_len <= history_len + horizon:
        raise DataError(f"series of length {t_len} is too short for history {history_len} + horizon {horizon}")
    if not np.all(np.isfinite(x)):
        raise DataError("series has non-finite values")
    splits = split_bounds(t_len, ratios)
    lo, hi = splits[0]
    if hi - lo < 1:
        raise DataError("empty training split")
    mean = x[lo:hi].mean(axis=0)
    std = x[lo:hi].std(axis=0)
    const = np.flatnonzero(std == 0)
    ids = list(node_ids) if node_ids is not None else [str(i) for i in range(n)]
    if len(const):
        raise DataError(f"constant node(s) in training split: {[ids[i] for i in const]}")
    return ForecastDataset(x, history_len, horizon, splits, mean, std, ids, timestamps)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_series_csv(path) -> tuple[np.ndarray, list[str], list[str] | None]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise FormatError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    has_time = not _is_number(body[0][0])
    ids = header[1:] if has_time else header
    stamps = [r[0] for r in body] if has_time else None
    width = len(header)
    values = []
    for k, r in enumerate(body, start=2):
        if len(r) != width:
            raise FormatError(f"{path}:{k}: expected {width} fields, got {len(r)}")
        try:
            values.append([float(c) for c in (r[1:] if has_time else r)])
        except ValueError:
            raise FormatError(f"{path}:{k}: non-numeric value") from None
    return np.array(values, dtype=np.float64).reshape(len(body), len(ids)), [s.strip() for s in ids], stamps


def write_series_csv(path, series, node_ids=None) -> None:
    x = np.asarray(series, dtype=np.float64)
    ids = node_ids or [f"n{i}" for i in range(x.shape[1])]
    lines = [",".join(ids)] + [",".join(repr(float(v)) for v in row) for row in x]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_series(path, history_len: int, horizon: int, ratios=(0.7, 0.2, 0.1)) -> ForecastDataset:
    x, ids, stamps = read_series_csv(Path(path))
    return make_dataset(x, history_len, horizon, ratios, ids, stamps)


def diffusion_series(a_tilde, steps: int, noise: float = 0.1, seed: int = 0, x0=None) -> np.ndarray:
    """Simulate ``X(k) = A_tilde X(k-1) + noise`` for ``steps`` rows."""
    a = np.asarray(a_tilde, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = a.shape[0]
    x = np.empty((steps, n))
    cur = rng.normal(size=n) if x0 is None else np.asarray(x0, dtype=np.float64)
    for k in range(steps):
        cur = a @ cur + noise * rng.normal(size=n)
        x[k] = cur
    return x


def synthetic_graph(n: int, neighbors: int = 4, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric k-NN weight matrix on random points and its right-stochastic version."""
    adj = knn_adjacency(knn_points(n, seed), neighbors)
    return adj, row_normalize(adj)
