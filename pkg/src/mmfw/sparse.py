"""Dense and coordinate-format (COO) sparse linear algebra primitives.

Dense matrices are plain ``float64`` numpy arrays. :class:`SparseCoo` stores
explicit ``(row, col, value)`` triplets with no duplicates and no stored zeros.

Matrix text format::

    # comment lines start with '#'
    n m nnz
    i j v        (nnz lines, 0-based indices)

A dense matrix is written with ``nnz = n * m`` and every entry listed.
"""
from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NotSymmetricError, ShapeError


@dataclass(frozen=True)
class SparseCoo:
    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.row_idx, dtype=np.int64).ravel()
        c = np.asarray(self.col_idx, dtype=np.int64).ravel()
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if not (len(r) == len(c) == len(v)):
            raise ShapeError("row, col and value arrays differ in length")
        if len(r):
            if r.min() < 0 or r.max() >= self.rows or c.min() < 0 or c.max() >= self.cols:
                raise ShapeError(f"index out of range for shape ({self.rows}, {self.cols})")
            if np.any(v == 0.0):
                raise FormatError("explicit zero entries are not stored in COO form")
            if not np.all(np.isfinite(v)):
                raise FormatError("non-finite value in sparse matrix")
            keys = r * self.cols + c
            if len(np.unique(keys)) != len(keys):
                raise FormatError("duplicate (row, col) entries")
            # canonical row-major order, so equal matrices compare and serialize equally
            order = np.argsort(keys, kind="stable")
            r, c, v = r[order], c[order], v[order]
        object.__setattr__(self, "row_idx", r)
        object.__setattr__(self, "col_idx", c)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def density(self) -> float:
        """Fraction of stored entries, in [0, 1]."""
        return self.nnz / float(self.rows * self.cols)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self.row_idx, self.col_idx] = self.values
        return out

    def transpose(self) -> "SparseCoo":
        return SparseCoo(self.cols, self.rows, self.col_idx, self.row_idx, self.values)

    def __repr__(self):
        return f"SparseCoo(shape={self.shape}, nnz={self.nnz})"


def coo_from_dense(m, drop_tol: float = 0.0) -> SparseCoo:
    """Keep exactly the entries with ``|value| > drop_tol``."""
    if drop_tol < 0:
        raise ValueError("drop_tol must be non-negative")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    r, c = np.nonzero(np.abs(m) > drop_tol)
    return SparseCoo(m.shape[0], m.shape[1], r, c, m[r, c])


def _as_2d(b) -> tuple[np.ndarray, bool]:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        return b[:, None], True
    if b.ndim != 2:
        raise ShapeError(f"expected a vector or matrix, got shape {b.shape}")
    return b, False


def spmm(a: SparseCoo, b) -> np.ndarray:
    """Sparse times dense: ``densify(a) @ b``."""
    b2, vec = _as_2d(b)
    if a.cols != b2.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b2.shape}")
    out = np.zeros((a.rows, b2.shape[1]))
    np.add.at(out, a.row_idx, a.values[:, None] * b2[a.col_idx])
    return out[:, 0] if vec else out


def transpose_spmm(a: SparseCoo, b) -> np.ndarray:
    """``densify(a).T @ b`` without forming the transpose."""
    b2, vec = _as_2d(b)
    if a.rows != b2.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[::-1]} by {b2.shape}")
    out = np.zeros((a.cols, b2.shape[1]))
    np.add.at(out, a.col_idx, a.values[:, None] * b2[a.row_idx])
    return out[:, 0] if vec else out


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def check_symmetric(a) -> np.ndarray:
    """Return ``a`` as a float64 array, raising unless it is exactly symmetric."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSymmetricError("matrix has non-finite entries")
    if not np.array_equal(a, a.T):
        raise NotSymmetricError("matrix is not exactly symmetric")
    return a


def rotate_inplace(a: np.ndarray, indices, core: np.ndarray) -> None:
    """In-place ``a <- U a U^T`` for the k-point rotation ``(indices, core)``.

    Rows ``indices`` are updated first, then columns; nothing else is touched.
    """
    idx = np.asarray(indices, dtype=np.int64)
    rows = core @ a[idx, :]
    block = rows[:, idx] @ core.T
    a[idx, :] = rows
    # mirror instead of a second product so the result is exactly symmetric
    a[:, idx] = rows.T
    a[np.ix_(idx, idx)] = 0.5 * (block + block.T)


def conjugate_by_rotation(a, rot) -> np.ndarray:
    """Return ``U a U^T`` where ``U`` is the k-point rotation ``rot``.

    ``rot`` is anything with ``index_set`` and ``core`` attributes.
    """
    a = np.array(a, dtype=np.float64)
    idx = np.asarray(rot.index_set, dtype=np.int64)
    core = np.asarray(rot.core, dtype=np.float64)
    n = a.shape[0]
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"rotation indices {idx.tolist()} out of range for n={n}")
    if core.shape != (len(idx), len(idx)):
        raise ShapeError(f"core shape {core.shape} does not match {len(idx)} indices")
    rotate_inplace(a, idx, core)
    return a


# ---------------------------------------------------------------------------
# text format

def format_matrix(m, *, dense: bool = False, header: list[str] | None = None) -> str:
    """Serialize a SparseCoo or dense array to the matrix text format."""
    buf = io.StringIO()
    for line in header or []:
        buf.write(f"# {line}\n")
    if isinstance(m, SparseCoo) and not dense:
        rows, cols, triplets = m.rows, m.cols, zip(m.row_idx, m.col_idx, m.values)
        nnz = m.nnz
    else:
        arr = m.to_dense() if isinstance(m, SparseCoo) else np.asarray(m, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
        rows, cols = arr.shape
        if dense:
            ii, jj = np.divmod(np.arange(rows * cols), cols)
        else:
            ii, jj = np.nonzero(arr)
        triplets = zip(ii, jj, arr[ii, jj])
        nnz = len(ii)
    buf.write(f"{rows} {cols} {nnz}\n")
    for i, j, v in triplets:
        buf.write(f"{int(i)} {int(j)} {float(v)!r}\n")
    return buf.getvalue()


def parse_matrix(text: str) -> tuple[SparseCoo, list[str]]:
    """Parse the matrix text format; returns the matrix and its comment lines.

    Explicit zeros (as written in dense files) are dropped; duplicate
    positions are rejected.
    """
    comments, body = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            body.append(line)
    if not body:
        raise FormatError("missing 'n m nnz' header")
    try:
        rows, cols, nnz = (int(t) for t in body[0].split(" "))
    except ValueError:
        raise FormatError(f"bad header line {body[0]!r}") from None
    if rows < 0 or cols < 0 or nnz < 0:
        raise FormatError("negative dimension in header")
    if len(body) - 1 != nnz:
        raise FormatError(f"header declares {nnz} entries, found {len(body) - 1}")
    r = np.empty(nnz, dtype=np.int64)
    c = np.empty(nnz, dtype=np.int64)
    v = np.empty(nnz)
    for k, line in enumerate(body[1:]):
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"bad entry line {line!r}")
        try:
            r[k], c[k], v[k] = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"bad entry line {line!r}") from None
    if nnz and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
        raise FormatError("entry index out of range")
    keys = r * max(cols, 1) + c
    if len(np.unique(keys)) != nnz:
        raise FormatError("duplicate (row, col) entries")
    keep = v != 0.0
    return SparseCoo(rows, cols, r[keep], c[keep], v[keep]), comments


def read_matrix(path) -> SparseCoo:
    return parse_matrix(Path(path).read_text())[0]


def write_matrix(path, m, *, dense: bool = False, header: list[str] | None = None) -> None:
    atomic_write_text(path, format_matrix(m, dense=dense, header=header))


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
