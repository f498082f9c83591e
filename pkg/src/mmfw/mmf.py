"""Multiresolution Matrix Factorization.

``A ~= U_1^T ... U_L^T H U_L ... U_1`` where every ``U_l`` is a k-point
rotation acting on coordinates that are still active at level ``l`` and ``H``
is core-diagonal. Levels are built greedily: pick ``k`` similar rows, optimize
the rotation core on SO(k) by Cayley-retracted steepest descent, conjugate,
and retire the coordinate whose rotated row is closest to diagonal.

Factorization file grammar::

    MMF <n> <k> <L>
    RESIDUAL <float>
    LEVEL <l> <retired index>        (repeated L times, l = 1..L)
    <k indices>
    <k*k core values, row-major>
    <H in the matrix text format>
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .sparse import (
    atomic_write_text,
    check_symmetric,
    coo_from_dense,
    format_matrix,
    parse_matrix,
    rotate_inplace,
)

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_BACKTRACKS = 40
# stop once an accepted step gains less than this fraction of the start value
REL_DECREASE_TOL = 1e-14


@dataclass
class GivensRotation:
    """k-point rotation ``I_{n-k} (+)_{index_set} core``."""

    level: int
    index_set: tuple[int, ...]
    core: np.ndarray

    @property
    def k(self) -> int:
        return len(self.index_set)

    def orthogonality_error(self) -> float:
        o = self.core
        return float(np.max(np.abs(o.T @ o - np.eye(self.k))))

    def to_dense(self, n: int) -> np.ndarray:
        u = np.eye(n)
        idx = np.asarray(self.index_set)
        u[np.ix_(idx, idx)] = self.core
        return u


@dataclass
class CoreDiagonal:
    """Matrix that is zero outside ``core_indices x core_indices`` and the diagonal."""

    n: int
    core_indices: tuple[int, ...]
    core_block: np.ndarray
    diagonal: np.ndarray

    @classmethod
    def from_dense(cls, h, core_indices) -> "CoreDiagonal":
        h = np.asarray(h, dtype=np.float64)
        core = tuple(sorted(int(i) for i in core_indices))
        return cls(h.shape[0], core, h[np.ix_(core, core)].copy(), np.diag(h).copy())

    def to_dense(self) -> np.ndarray:
        h = np.diag(self.diagonal)
        core = np.asarray(self.core_indices, dtype=np.int64)
        h[np.ix_(core, core)] = self.core_block
        return h

    @property
    def wavelet_frequencies(self) -> np.ndarray:
        """Diagonal entries outside the core, indexed by coordinate."""
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.core_indices)] = False
        return self.diagonal[mask]


@dataclass
class FactorizeConfig:
    levels: int
    order: int = 2
    descent_iters: int = 100
    step_size: float = 0.1
    step_shrink: float = 0.5
    # the algorithm is deterministic; kept so every command takes the same --seed
    seed: int = 0
    similarity: str = "cosine"

    def validate(self, n: int) -> None:
        if self.similarity != "cosine":
            raise ConfigError(f"unknown similarity {self.similarity!r}")
        if self.order < 2:
            raise ConfigError("rotation order must be >= 2")
        if self.levels < 0:
            raise ConfigError("levels must be >= 0")
        if n > 1 and self.order > n:
            raise ConfigError(f"rotation order {self.order} exceeds dimension {n}")
        if self.levels > max(n - self.order + 1, 0):
            raise ConfigError(
                f"{self.levels} levels need {self.levels + self.order - 1} coordinates, have {n}")
        if self.descent_iters < 0 or self.step_size <= 0 or not 0 < self.step_shrink < 1:
            raise ConfigError("descent_iters >= 0, step_size > 0 and 0 < step_shrink < 1 required")


@dataclass
class MmfFactorization:
    n: int
    order_k: int
    rotations: list[GivensRotation]
    index_sets: list[tuple[int, ...]]  # S_0 ⊇ S_1 ⊇ ... ⊇ S_L
    retired: list[int]  # coordinate retired at level l is retired[l - 1]
    h: CoreDiagonal
    residual: float
    # full single-level objective after every accepted descent step, per level
    objective_trace: list[list[float]] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.rotations)

    @property
    def core_indices(self) -> tuple[int, ...]:
        return self.index_sets[-1]


# ---------------------------------------------------------------------------
# objective pieces

def residual_norm(h_like, core_indices) -> float:
    """sqrt of the squared mass off the diagonal and outside ``core x core``."""
    h = np.asarray(h_like, dtype=np.float64)
    n = h.shape[0]
    in_core = np.zeros(n, dtype=bool)
    in_core[list(core_indices)] = True
    mask = ~np.outer(in_core, in_core)
    np.fill_diagonal(mask, False)
    return float(np.sqrt(np.sum(h[mask] ** 2)))


class _LevelObjective:
    """O-dependent part of ``residual_norm(U A U^T, core)**2`` for one rotation.

    Only rows/columns in ``idx`` move with the core. Columns outside both
    ``idx`` and ``core_indices`` add the constant ``||A[idx, j]||^2`` (the
    rotation preserves column norms) and are dropped, so values differ from
    :func:`rotation_objective` by a constant. Cost is O(k n) per evaluation.
    """

    def __init__(self, a: np.ndarray, idx, core_indices):
        n = a.shape[0]
        self.idx = np.asarray(idx, dtype=np.int64)
        in_core = np.zeros(n, dtype=bool)
        in_core[list(core_indices)] = True
        keep = in_core.copy()
        keep[self.idx] = False
        self.b = a[np.ix_(self.idx, np.flatnonzero(keep))]
        self.a_ii = a[np.ix_(self.idx, self.idx)]
        self.mask_b = (~in_core[self.idx]).astype(float)[:, None]
        mask_ii = ~np.outer(in_core[self.idx], in_core[self.idx])
        np.fill_diagonal(mask_ii, False)
        self.mask_ii = mask_ii.astype(float)

    def value(self, o: np.ndarray) -> float:
        p = o @ self.b
        q = o @ self.a_ii @ o.T
        return float(2.0 * (self.mask_b * p * p).sum() + (self.mask_ii * q * q).sum())

    def euclidean_gradient(self, o: np.ndarray) -> np.ndarray:
        p = o @ self.b
        q = o @ self.a_ii @ o.T
        return 4.0 * (self.mask_b * p) @ self.b.T + 4.0 * (self.mask_ii * q) @ o @ self.a_ii


def rotation_objective(a_current, rot_indices, core, core_indices_final) -> float:
    """Squared residual norm of ``U A U^T`` for the rotation ``(rot_indices, core)``."""
    a = np.array(a_current, dtype=np.float64)
    rotate_inplace(a, rot_indices, np.asarray(core, dtype=np.float64))
    return residual_norm(a, core_indices_final) ** 2


def project_tangent(core: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space of O(k) at ``core``."""
    m = core.T @ g
    return g - core @ (0.5 * (m + m.T))


def stiefel_gradient(a_current, rot_indices, core, core_indices_final) -> np.ndarray:
    """Riemannian gradient of :func:`rotation_objective` at ``core``."""
    a = np.asarray(a_current, dtype=np.float64)
    core = np.asarray(core, dtype=np.float64)
    if core.shape != (len(rot_indices), len(rot_indices)):
        raise ShapeError(f"core shape {core.shape} does not match {len(rot_indices)} indices")
    obj = _LevelObjective(a, rot_indices, core_indices_final)
    return project_tangent(core, obj.euclidean_gradient(core))


def stiefel_descent_step(core, grad, step: float) -> np.ndarray:
    """Move from ``core`` against the tangent vector ``grad`` by a Cayley retraction.

    With ``S = grad core^T`` (skew for tangent ``grad``) the new point is
    ``(I + step/2 S)^{-1} (I - step/2 S) core``, which stays in SO(k) when
    ``core`` does.
    """
    core = np.asarray(core, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    k = core.shape[0]
    s = grad @ core.T
    s = 0.5 * (s - s.T)
    eye = np.eye(k)
    half = 0.5 * step * s
    return np.linalg.solve(eye + half, (eye - half) @ core)


def _initial_cores(a_ii: np.ndarray) -> list[np.ndarray]:
    """Identity plus the eigenbasis of the rotated block, forced into SO(k).

    The identity alone is a stationary point whenever the block has equal
    diagonal entries, so descent from it never moves.
    """
    _, vecs = np.linalg.eigh(a_ii)
    o = vecs.T.copy()
    if np.linalg.det(o) < 0:
        o[-1] *= -1.0
    return [np.eye(a_ii.shape[0]), o]


def _descend(obj: _LevelObjective, cfg: FactorizeConfig, o: np.ndarray) -> tuple[np.ndarray, list[float]]:
    """Backtracking steepest descent from ``o``; returns the core and accepted values."""
    f = obj.value(o)
    trace = [f]
    floor = REL_DECREASE_TOL * f
    t = cfg.step_size
    for _ in range(cfg.descent_iters):
        d = project_tangent(o, obj.euclidean_gradient(o))
        gn2 = float(np.sum(d * d))
        if gn2 == 0.0:
            break
        for _ in range(MAX_BACKTRACKS):
            o_new = stiefel_descent_step(o, d, t)
            f_new = obj.value(o_new)
            if f_new <= f - ARMIJO * t * gn2:
                break
            t *= cfg.step_shrink
        else:
            break
        gain = f - f_new
        o, f = o_new, f_new
        trace.append(f)
        if gain <= floor:
            break
        t /= cfg.step_shrink
    return o, trace


# ---------------------------------------------------------------------------
# index selection

def _pick(cos: np.ndarray, active: np.ndarray, k: int) -> list[int]:
    cos = cos.copy()
    np.fill_diagonal(cos, -np.inf)
    best = cos.max(axis=1) if len(active) > 1 else np.zeros(1)
    first = int(np.argmax(best))
    order = [j for j in np.argsort(-cos[first], kind="stable") if j != first]
    return [int(active[first])] + [int(active[j]) for j in order[: k - 1]]


def _cosine_from_gram(gram: np.ndarray) -> np.ndarray:
    gram = 0.5 * (gram + gram.T)
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    denom = np.outer(norms, norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(denom > 0, np.abs(gram) / denom, 0.0)
    return cos


def select_indices(a_current, active, k: int, seed: int = 0) -> list[int]:
    """Choose ``k`` active coordinates to rotate together.

    The first index is the active row with the largest absolute cosine
    similarity to some other active row (rows restricted to active columns);
    the rest are the rows most similar to it. Ties go to the lowest index.
    ``seed`` is accepted for interface symmetry; selection is deterministic.
    """
    a = np.asarray(a_current, dtype=np.float64)
    act = np.asarray(sorted(int(i) for i in active), dtype=np.int64)
    if len(act) < k:
        raise ConfigError(f"need {k} active indices, have {len(act)}")
    rows = a[np.ix_(act, act)]
    return _pick(_cosine_from_gram(rows @ rows.T), act, k)


# ---------------------------------------------------------------------------
# factorization

def _row_energy(a: np.ndarray, i: int, active: np.ndarray) -> float:
    row = a[i, active]
    return float(np.sum(row * row) - a[i, i] ** 2)


def factorize(a, cfg: FactorizeConfig) -> MmfFactorization:
    a = check_symmetric(a)
    n = a.shape[0]
    cfg.validate(n)
    work = a.copy()
    active = list(range(n))
    index_sets = [tuple(active)]
    rotations, retired, traces = [], [], []

    # Gram matrix of rows restricted to active columns, updated incrementally
    gram = work @ work.T
    for level in range(1, cfg.levels + 1):
        act = np.asarray(active, dtype=np.int64)
        sub = gram[np.ix_(act, act)]
        idx = _pick(_cosine_from_gram(sub), act, cfg.order)

        best = None
        for p in range(len(idx)):
            core_after = [i for i in active if i != idx[p]]
            obj = _LevelObjective(work, idx, core_after)
            for start in _initial_cores(obj.a_ii):
                o, trace = _descend(obj, cfg, start)
                if best is None or trace[-1] < best[2][-1]:
                    best = (obj, o, trace, core_after)
        obj, core, trace, core_after = best
        # constant part of the level objective, so the trace holds true values
        offset = residual_norm(work, core_after) ** 2 - obj.value(np.eye(len(idx)))
        traces.append([offset + v for v in trace])

        rotate_inplace(work, idx, core)
        ix = np.asarray(idx)
        gram[ix, :] = core @ gram[ix, :]
        gram[:, ix] = gram[:, ix] @ core.T

        energies = [_row_energy(work, i, act) for i in idx]
        r = min(i for i, e in zip(idx, energies) if e == min(energies))
        active.remove(r)
        act = np.asarray(active, dtype=np.int64)
        col = work[act, r]
        gram[np.ix_(act, act)] -= np.outer(col, col)

        rotations.append(GivensRotation(level, tuple(idx), core))
        retired.append(r)
        index_sets.append(tuple(active))
        log.debug("level %d: rotated %s, retired %d, objective %.3e", level, idx, r, traces[-1][-1])

    h = CoreDiagonal.from_dense(work, active)
    res = residual_norm(work, active)
    return MmfFactorization(n, cfg.order, rotations, index_sets, retired, h, res, traces)


def reconstruct(f: MmfFactorization) -> np.ndarray:
    """Dense ``U_1^T ... U_L^T H U_L ... U_1``."""
    out = f.h.to_dense()
    for rot in reversed(f.rotations):
        rotate_inplace(out, rot.index_set, rot.core.T)
    return out


def rotation_product(f: MmfFactorization) -> np.ndarray:
    """Dense cumulative product ``U_L ... U_1``."""
    p = np.eye(f.n)
    for rot in f.rotations:
        idx = np.asarray(rot.index_set)
        p[idx, :] = rot.core @ p[idx, :]
    return p


# ---------------------------------------------------------------------------
# serialization

def format_factorization(f: MmfFactorization) -> str:
    lines = [f"MMF {f.n} {f.order_k} {f.levels}", f"RESIDUAL {f.residual!r}"]
    for rot, r in zip(f.rotations, f.retired):
        lines.append(f"LEVEL {rot.level} {r}")
        lines.append(" ".join(str(i) for i in rot.index_set))
        lines.append(" ".join(repr(float(v)) for v in rot.core.ravel()))
    return "\n".join(lines) + "\n" + format_matrix(coo_from_dense(f.h.to_dense()))


def parse_factorization(text: str) -> MmfFactorization:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        tag, n, k, levels = lines[0].split()
        if tag != "MMF":
            raise ValueError
        n, k, levels = int(n), int(k), int(levels)
        tag, residual = lines[1].split()
        if tag != "RESIDUAL":
            raise ValueError
        residual = float(residual)
    except (ValueError, IndexError):
        raise FormatError("factorization must start with 'MMF n k L' and 'RESIDUAL r'") from None
    rotations, retired = [], []
    active = list(range(n))
    index_sets = [tuple(active)]
    pos = 2
    for level in range(1, levels + 1):
        try:
            tag, lv, r = lines[pos].split()
            if tag != "LEVEL" or int(lv) != level:
                raise ValueError
            idx = tuple(int(t) for t in lines[pos + 1].split())
            core = np.array([float(t) for t in lines[pos + 2].split()])
        except (ValueError, IndexError):
            raise FormatError(f"bad LEVEL block for level {level}") from None
        r = int(r)
        if len(idx) != k or core.size != k * k or r not in idx or r not in active:
            raise FormatError(f"inconsistent LEVEL block for level {level}")
        rotations.append(GivensRotation(level, idx, core.reshape(k, k)))
        retired.append(r)
        active.remove(r)
        index_sets.append(tuple(active))
        pos += 3
    h_coo, _ = parse_matrix("\n".join(lines[pos:]))
    if h_coo.shape != (n, n):
        raise FormatError(f"H has shape {h_coo.shape}, expected ({n}, {n})")
    h = CoreDiagonal.from_dense(h_coo.to_dense(), active)
    return MmfFactorization(n, k, rotations, index_sets, retired, h, residual)


def write_factorization(path, f: MmfFactorization) -> None:
    atomic_write_text(path, format_factorization(f))


def read_factorization(path) -> MmfFactorization:
    return parse_factorization(Path(path).read_text())
