"""Graph construction: Gaussian-kernel and LLE adjacency, symmetrization,
row normalization, and a random k-NN Laplacian generator."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError

log = logging.getLogger(__name__)

KINDS = ("gaussian", "lle", "custom")


@dataclass
class Adjacency:
    values: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ShapeError(f"adjacency must be square, got {self.values.shape}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown adjacency kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("adjacency has non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _values(a) -> np.ndarray:
    return a.values if isinstance(a, Adjacency) else np.asarray(a, dtype=np.float64)


def kernel_sigma(dist) -> float:
    """Population standard deviation of the finite off-diagonal distances."""
    d = np.asarray(dist, dtype=np.float64)
    off = ~np.eye(d.shape[0], dtype=bool)
    vals = d[off]
    vals = vals[np.isfinite(vals)]
    return float(np.std(vals)) if vals.size else 0.0


def gaussian_adjacency(dist, threshold_k: float = 0.01) -> Adjacency:
    """``A_ij = exp(-dist_ij / sigma^2)`` where ``dist_ij <= threshold_k``, else 0.

    ``inf`` marks an unreachable pair. ``sigma`` is computed before
    thresholding (see :func:`kernel_sigma`). The distance is not squared.
    """
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeError(f"distance table must be square, got {d.shape}")
    if not threshold_k > 0:
        raise ConfigError("threshold_k must be positive")
    if np.any(np.isnan(d)) or np.any(d < 0):
        raise DataError("distances must be non-negative (inf marks unreachable)")
    if np.any(np.diag(d) != 0):
        raise DataError("distance table needs a zero diagonal")
    sigma = kernel_sigma(d)
    if sigma == 0.0:
        raise DataError("all distances are identical, kernel width sigma is 0")
    keep = d <= threshold_k
    a = np.zeros_like(d)
    # scalar libm exp: vectorized np.exp may differ from it in the last bit
    s2 = sigma**2
    a[keep] = [math.exp(-v / s2) for v in d[keep].tolist()]
    return Adjacency(a, "gaussian")


def symmetrize(a) -> np.ndarray:
    """``(A + A^T) / 2``; exactly symmetric because ``+`` commutes in IEEE arithmetic."""
    v = _values(a)
    return 0.5 * (v + v.T)


def row_normalize(a) -> np.ndarray:
    """Right-stochastic ``D^{-1} A``; all-zero rows become self-loops."""
    v = _values(a)
    if np.any(v < 0):
        raise DataError("row_normalize needs non-negative weights")
    out = v.copy()
    sums = out.sum(axis=1)
    zero = sums == 0
    out[zero] = 0.0
    out[zero, np.flatnonzero(zero)] = 1.0
    sums[zero] = 1.0
    return out / sums[:, None]


def laplacian(a) -> np.ndarray:
    """Combinatorial Laplacian ``D - A`` of a symmetric weight matrix."""
    v = _values(a)
    lap = -v.copy()
    np.fill_diagonal(lap, 0.0)
    np.fill_diagonal(lap, -lap.sum(axis=1))
    return lap


def knn_points(n: int, seed: int = 0, dim: int = 2) -> np.ndarray:
    return np.random.default_rng(seed).random((n, dim))


def knn_adjacency(points, neighbors: int = 8) -> np.ndarray:
    """Binary symmetric adjacency joining each point to its nearest neighbours."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= neighbors < n:
        raise ConfigError(f"need 1 <= neighbors < n, got {neighbors} for n={n}")
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :neighbors]
    a = np.zeros((n, n))
    a[np.repeat(np.arange(n), neighbors), nn.ravel()] = 1.0
    return np.maximum(a, a.T)


def knn_laplacian(n: int, neighbors: int = 8, seed: int = 0) -> np.ndarray:
    """Laplacian of a k-NN graph on ``n`` uniform random points in the unit square."""
    return laplacian(knn_adjacency(knn_points(n, seed), neighbors))


# ---------------------------------------------------------------------------
# LLE adjacency


@dataclass
class LleConfig:
    lambda_a: float = 1e-5
    max_iters: int = 1000
    tol: float = 1e-10
    # accepted for interface compatibility; the proximal solver has no penalty term
    penalty_rho: float = 1.0
    power_iters: int = 20

    def validate(self):
        if self.lambda_a < 0:
            raise ConfigError("lambda_a must be non-negative")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.tol > 0 or not self.penalty_rho > 0:
            raise ConfigError("tol and penalty_rho must be positive")


@dataclass
class LleResult:
    adjacency: Adjacency
    objective: list[float] = field(default_factory=list)
    violation: list[float] = field(default_factory=list)
    iterations: int = 0


def prox_affine_l1(v, tau: float) -> np.ndarray:
    """argmin_a 0.5||a - v||^2 + tau ||a||_1  subject to  sum(a) = 1.

    Solution is ``soft(v - mu, tau)`` for the scalar ``mu`` that makes the
    sum equal 1; the sum is piecewise linear and non-increasing in ``mu``, so
    ``mu`` is found exactly between two breakpoints.
    """
    v = np.asarray(v, dtype=np.float64)
    m = v.size
    if m == 1:
        return np.ones(1)

    def total(mu):
        z = v - mu
        return np.sum(np.sign(z) * np.maximum(np.abs(z) - tau, 0.0))

    bps = np.unique(np.concatenate([v - tau, v + tau]))
    g = np.array([total(b) for b in bps])
    if g[0] <= 1.0:
        # left of every breakpoint all coordinates are active with slope -m
        mu = bps[0] - (1.0 - g[0]) / m
    elif g[-1] >= 1.0:
        mu = bps[-1] + (g[-1] - 1.0) / m
    else:
        j = int(np.flatnonzero(g >= 1.0)[-1])
        g0, g1 = g[j], g[j + 1]
        mu = bps[j] if g0 == g1 else bps[j] + (g0 - 1.0) * (bps[j + 1] - bps[j]) / (g0 - g1)
    z = v - mu
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def _power_norm(c: np.ndarray, iters: int) -> float:
    x = np.ones(c.shape[0]) / np.sqrt(c.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = c @ x
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            break
        x = y / lam
    return lam


def lle_objective(x, a, lambda_a: float) -> float:
    r = x - x @ a.T
    return float(np.sum(r * r) + lambda_a * np.sum(np.abs(a)))


def lle_violation(a) -> float:
    """Largest deviation from unit row sums and zero diagonal."""
    return float(max(np.max(np.abs(a.sum(axis=1) - 1.0)), np.max(np.abs(np.diag(a)))))


def lle_adjacency(x, cfg: LleConfig | None = None, *, return_history: bool = False):
    """Sparse affine self-representation ``X ~ X A^T``.

    Row ``i`` of ``A`` writes node ``i`` as an affine combination of the other
    nodes: unit row sums, zero diagonal, ``l1`` penalty ``lambda_a``. Solved
    by proximal gradient on each row with the exact prox of the penalty plus
    the constraint set; the step halves whenever the composite objective
    would not decrease, so every iterate is feasible and the objective is
    non-increasing. Weights may be negative.
    """
    cfg = cfg or LleConfig()
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"series must be T x N, got {x.shape}")
    t_len, n = x.shape
    if n < 2 or t_len < 2:
        raise DataError(f"need T >= 2 and N >= 2, got T={t_len}, N={n}")
    if not np.all(np.isfinite(x)):
        raise DataError("series has non-finite values")

    c = x.T @ x
    lip = 2.0 * _power_norm(c, cfg.power_iters)
    step = 1.0 / lip if lip > 0 else 1.0
    a = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(a, 0.0)
    off = ~np.eye(n, dtype=bool)

    def smooth(m):
        r = x - x @ m.T
        return float(np.sum(r * r))

    f = smooth(a)
    obj = [f + cfg.lambda_a * np.sum(np.abs(a))]
    viol = [lle_violation(a)]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad = 2.0 * (a @ c - c)
        while True:
            v = a - step * grad
            new = np.zeros_like(a)
            for i in range(n):
                new[i, off[i]] = prox_affine_l1(v[i, off[i]], step * cfg.lambda_a)
            d = new - a
            f_new = smooth(new)
            # sufficient decrease of the quadratic upper bound
            if f_new <= f + np.sum(grad * d) + np.sum(d * d) / (2.0 * step) + 1e-15 * abs(f):
                break
            step *= 0.5
        g_new = f_new + cfg.lambda_a * np.sum(np.abs(new))
        if g_new > obj[-1]:
            # rounding-level increase near the optimum: keep the previous iterate
            break
        a, f = new, f_new
        obj.append(g_new)
        viol.append(lle_violation(a))
        if np.max(np.abs(d)) < cfg.tol:
            break
    log.debug("lle: %d iterations, objective %.6e", it, obj[-1])
    adj = Adjacency(a, "lle")
    if return_history:
        return LleResult(adj, obj, viol, it)
    return adj
