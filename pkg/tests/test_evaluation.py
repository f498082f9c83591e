import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmfw.data import make_dataset
from mmfw.errors import ConfigError, DataError, ShapeError
from mmfw.evaluation import (
    BenchResult,
    bench_sparsity_and_speed,
    format_bench_csv,
    format_bench_table,
    historical_average,
    metrics,
    metrics_or_nan,
    seasonal_means,
)
from mmfw.graph import knn_laplacian


def periodic(period=4, cycles=30, n=2, seed=0):
    base = np.random.default_rng(seed).normal(size=(period, n)) + 5
    return np.tile(base, (cycles, 1))


class TestMetrics:
    def test_perfect(self):
        y = np.random.default_rng(0).normal(size=(5, 2, 3))
        m = metrics(y, y)
        assert (m.mae, m.rmse, m.mape) == (0.0, 0.0, 0.0)
        assert (m.horizon, m.n_samples) == (2, 5)

    def test_scalar_example(self):
        m = metrics([2.0], [1.0])
        assert (m.mae, m.rmse, m.mape) == (1.0, 1.0, 100.0)

    def test_mape_excludes_zero_targets(self):
        m = metrics([[1.0, 3.0]], [[0.0, 2.0]])
        assert m.mape == 50.0 and m.mae == 1.0

    def test_errors(self):
        with pytest.raises(ShapeError):
            metrics(np.zeros(3), np.zeros(4))
        with pytest.raises(DataError):
            metrics(np.ones(3), np.zeros(3))
        assert np.isnan(metrics_or_nan(np.ones(3), np.zeros(3)).mape)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (6, 2, 3), elements=st.floats(-100, 100)),
           arrays(np.float64, (6, 2, 3), elements=st.floats(1, 100)))
    def test_properties(self, p, y):
        m = metrics(p, y)
        assert m.mae >= 0 and m.rmse >= m.mae * (1 - 1e-12) and m.mape >= 0
        perm = np.random.default_rng(0).permutation(6)
        m2 = metrics(p[perm], y[perm])
        assert m2.mae == pytest.approx(m.mae, rel=1e-12)
        assert m2.rmse == pytest.approx(m.rmse, rel=1e-12)


class TestHistoricalAverage:
    def test_two_periods(self):
        assert np.array_equal(seasonal_means(np.array([[1.0], [3.0], [3.0], [5.0]]), 2), [[2.0], [4.0]])

    def test_periodic_is_exact(self):
        ds = make_dataset(periodic(), 3, 2)
        _, y = ds.windows("test", normalized=False)
        assert np.max(np.abs(historical_average(ds, 4) - y)) <= 1e-12

    def test_constant(self):
        assert np.array_equal(seasonal_means(np.full((10, 2), 3.0), 4), np.full((4, 2), 3.0))

    def test_period_too_long(self):
        ds = make_dataset(periodic(), 3, 2)
        with pytest.raises(ConfigError):
            historical_average(ds, 200)


class TestBench:
    def test_n64_paths_agree(self):
        rep = bench_sparsity_and_speed(64, lambda n, s: knn_laplacian(n, 4, seed=s), 32, steps=24)
        assert len(rep.sparse.losses) == len(rep.dense.losses) == 5
        assert np.max(np.abs(np.subtract(rep.sparse.losses, rep.dense.losses))) <= 1e-8
        assert rep.sparse.nnz_density < rep.dense.nnz_density == 100.0
        assert rep.sparsity["n"] == 64
        table = format_bench_table(rep)
        assert table.splitlines()[0].startswith("path") and "speedup" in table
        csv = format_bench_csv([rep.sparse, rep.dense]).splitlines()
        assert csv[0] == "label,median_seconds_per_epoch,runs,nnz_density"
        assert csv[1].startswith("sparse,")

    def test_runs_minimum(self):
        with pytest.raises(ConfigError):
            BenchResult("x", 1.0, 4, 1.0)
        with pytest.raises(ConfigError):
            bench_sparsity_and_speed(16, lambda n, s: knn_laplacian(n, 3, seed=s), 8, runs=3)
