"""Compressed sparse column matrices and the kernels built on them.

Everything downstream (factorization, preconditioning, the iterative
solver) works with the types defined here: CscMatrix for sparse data,
DenseMatrix for small dense blocks, Permutation for row reorderings and
ColumnScaling for the unit-column-norm prescaling.  All values are
float64; all index arrays are int64.  Matrices are immutable once built
and the kernels are pure functions, so everything is safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MatrixMarketError(ValueError):
    """Raised for files that do not conform to the supported MM subset."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


class CscMatrix:
    """Sparse matrix in compressed sparse column form.

    Within each column the row indices are strictly increasing and no
    explicit zeros are stored.  Use ``validate()`` to check both after
    hand-constructing one.
    """

    __slots__ = ("nrows", "ncols", "col_ptr", "row_idx", "values")

    def __init__(self, nrows, ncols, col_ptr, row_idx, values):
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.col_ptr = np.asarray(col_ptr, dtype=np.int64)
        self.row_idx = np.asarray(row_idx, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)

    @property
    def nnz(self) -> int:
        return int(self.col_ptr[-1])

    def column(self, j):
        """Row indices and values of column j (views, do not mutate)."""
        lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
        return self.row_idx[lo:hi], self.values[lo:hi]

    def column_counts(self):
        return np.diff(self.col_ptr)

    def validate(self):
        """Check the structural invariants; raises ValueError on failure."""
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("negative dimension")
        if len(self.col_ptr) != self.ncols + 1:
            raise ValueError("col_ptr has wrong length")
        if self.col_ptr[0] != 0 or self.col_ptr[-1] != len(self.row_idx):
            raise ValueError("col_ptr endpoints inconsistent with storage")
        if np.any(np.diff(self.col_ptr) < 0):
            raise ValueError("col_ptr not non-decreasing")
        if len(self.row_idx) != len(self.values):
            raise ValueError("row_idx and values length mismatch")
        if self.nnz:
            if self.row_idx.min() < 0 or self.row_idx.max() >= self.nrows:
                raise ValueError("row index out of range")
            if np.any(self.values == 0.0):
                raise ValueError("explicitly stored zero")
            # strictly increasing rows within each column
            if len(self.row_idx) > 1:
                d = np.diff(self.row_idx)
                interior = np.ones(len(self.row_idx) - 1, dtype=bool)
                bounds = self.col_ptr[1:-1]
                bounds = bounds[(bounds > 0) & (bounds < len(self.row_idx))]
                interior[bounds - 1] = False
                if np.any(d[interior] <= 0):
                    raise ValueError("row indices not strictly increasing in a column")
        return self

    @staticmethod
    def from_coo(nrows, ncols, rows, cols, vals):
        """Build from triplets: duplicates are summed, zeros dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if len(rows):
            order = np.lexsort((rows, cols))
            rows, cols, vals = rows[order], cols[order], vals[order]
            # sum runs of identical (col, row)
            new_run = np.empty(len(rows), dtype=bool)
            new_run[0] = True
            new_run[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            run_id = np.cumsum(new_run) - 1
            summed = np.zeros(run_id[-1] + 1)
            np.add.at(summed, run_id, vals)
            rows, cols = rows[new_run], cols[new_run]
            keep = summed != 0.0
            rows, cols, vals = rows[keep], cols[keep], summed[keep]
        col_ptr = np.zeros(ncols + 1, dtype=np.int64)
        np.add.at(col_ptr, cols + 1, 1)
        np.cumsum(col_ptr, out=col_ptr)
        return CscMatrix(nrows, ncols, col_ptr, rows, vals)

    @staticmethod
    def from_dense(a, drop_below=0.0):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(np.abs(a) > drop_below)
        return CscMatrix.from_coo(a.shape[0], a.shape[1], rows, cols, a[rows, cols])

    @staticmethod
    def identity(n):
        idx = np.arange(n, dtype=np.int64)
        return CscMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def to_dense(self):
        out = np.zeros((self.nrows, self.ncols))
        if self.nnz:
            cols = np.repeat(np.arange(self.ncols), self.column_counts())
            out[self.row_idx, cols] = self.values
        return out

    def transpose(self) -> "CscMatrix":
        cols = np.repeat(np.arange(self.ncols, dtype=np.int64), self.column_counts())
        return CscMatrix.from_coo(self.ncols, self.nrows, cols, self.row_idx, self.values)

    def __repr__(self):
        return f"CscMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


class DenseMatrix:
    """Small dense matrix, column-major storage."""

    __slots__ = ("a",)

    def __init__(self, a):
        self.a = np.asfortranarray(a, dtype=np.float64)
        if self.a.ndim != 2:
            raise ValueError("DenseMatrix expects a 2-d array")

    @property
    def nrows(self) -> int:
        return self.a.shape[0]

    @property
    def ncols(self) -> int:
        return self.a.shape[1]

    @property
    def values(self):
        """Flat column-major view of the entries."""
        return self.a.ravel(order="F")

    def __repr__(self):
        return f"DenseMatrix({self.nrows}x{self.ncols})"


@dataclass
class Permutation:
    """Row permutation: perm[i] is the original index placed at position i."""

    perm: np.ndarray
    inv: np.ndarray

    @staticmethod
    def identity(n):
        idx = np.arange(n, dtype=np.int64)
        return Permutation(idx.copy(), idx.copy())

    @staticmethod
    def from_perm(perm):
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm), dtype=np.int64)
        return Permutation(perm, inv)

    def validate(self):
        n = len(self.perm)
        if len(self.inv) != n:
            raise ValueError("perm/inv length mismatch")
        if not np.array_equal(self.perm[self.inv], np.arange(n)):
            raise ValueError("perm and inv are not mutually inverse")
        return self

    def apply(self, v):
        """Return the permuted vector: out[i] = v[perm[i]]."""
        return np.asarray(v)[self.perm]

    def apply_inverse(self, v):
        return np.asarray(v)[self.inv]


@dataclass
class ColumnScaling:
    """Per-column norms removed by column_scale; scale[j] > 0."""

    scale: np.ndarray

    def unscale_solution(self, y):
        """Map a solution of the scaled problem back to original variables."""
        return np.asarray(y) / self.scale


# ---------------------------------------------------------------------------
# Matrix-vector kernels
# ---------------------------------------------------------------------------


def matvec(A: CscMatrix, x) -> np.ndarray:
    """Compute A @ x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.ncols,):
        raise ValueError(f"x has length {x.shape}, expected ({A.ncols},)")
    y = np.zeros(A.nrows)
    if A.nnz:
        contrib = A.values * np.repeat(x, A.column_counts())
        np.add.at(y, A.row_idx, contrib)
    return y


def matvec_transpose(A: CscMatrix, y) -> np.ndarray:
    """Compute A.T @ y."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.nrows,):
        raise ValueError(f"y has length {y.shape}, expected ({A.nrows},)")
    z = np.zeros(A.ncols)
    if A.nnz:
        prod = A.values * y[A.row_idx]
        starts = A.col_ptr[:-1]
        nonempty = starts < A.col_ptr[1:]
        z[nonempty] = np.add.reduceat(prod, starts[nonempty])
    return z


# ---------------------------------------------------------------------------
# Triangular solves (dense right-hand sides)
# ---------------------------------------------------------------------------


def sparse_lower_solve(L: CscMatrix, b, unit_diag=False) -> np.ndarray:
    """Forward substitution L x = b for lower-triangular CSC L.

    With unit_diag the diagonal is implicit and only strictly
    sub-diagonal entries may be stored; otherwise the diagonal must be
    the first stored entry of each column.
    """
    _check_square(L, b)
    x = np.array(b, dtype=np.float64, copy=True)
    ptr, rows, vals = L.col_ptr, L.row_idx, L.values
    for j in range(L.ncols):
        lo, hi = ptr[j], ptr[j + 1]
        if not unit_diag:
            if hi == lo or rows[lo] != j or vals[lo] == 0.0:
                raise np.linalg.LinAlgError(f"missing or zero diagonal in column {j}")
            x[j] /= vals[lo]
            lo += 1
        xj = x[j]
        if xj != 0.0 and hi > lo:
            x[rows[lo:hi]] -= vals[lo:hi] * xj
    return x


def sparse_upper_solve(U: CscMatrix, b) -> np.ndarray:
    """Back substitution U x = b; the diagonal must be stored."""
    _check_square(U, b)
    x = np.array(b, dtype=np.float64, copy=True)
    ptr, rows, vals = U.col_ptr, U.row_idx, U.values
    for j in range(U.ncols - 1, -1, -1):
        lo, hi = ptr[j], ptr[j + 1]
        if hi == lo or rows[hi - 1] != j or vals[hi - 1] == 0.0:
            raise np.linalg.LinAlgError(f"missing or zero diagonal in column {j}")
        x[j] /= vals[hi - 1]
        xj = x[j]
        if xj != 0.0 and hi - 1 > lo:
            x[rows[lo:hi - 1]] -= vals[lo:hi - 1] * xj
    return x


def sparse_lower_solve_transpose(L: CscMatrix, b, unit_diag=False) -> np.ndarray:
    """Solve L.T x = b using L's own storage (no transpose built)."""
    _check_square(L, b)
    x = np.array(b, dtype=np.float64, copy=True)
    ptr, rows, vals = L.col_ptr, L.row_idx, L.values
    for j in range(L.ncols - 1, -1, -1):
        lo, hi = ptr[j], ptr[j + 1]
        if unit_diag:
            if hi > lo:
                x[j] -= vals[lo:hi] @ x[rows[lo:hi]]
        else:
            if hi == lo or rows[lo] != j or vals[lo] == 0.0:
                raise np.linalg.LinAlgError(f"missing or zero diagonal in column {j}")
            if hi > lo + 1:
                x[j] -= vals[lo + 1:hi] @ x[rows[lo + 1:hi]]
            x[j] /= vals[lo]
    return x


def sparse_upper_solve_transpose(U: CscMatrix, b) -> np.ndarray:
    """Solve U.T x = b using U's own storage."""
    _check_square(U, b)
    x = np.array(b, dtype=np.float64, copy=True)
    ptr, rows, vals = U.col_ptr, U.row_idx, U.values
    for j in range(U.ncols):
        lo, hi = ptr[j], ptr[j + 1]
        if hi == lo or rows[hi - 1] != j or vals[hi - 1] == 0.0:
            raise np.linalg.LinAlgError(f"missing or zero diagonal in column {j}")
        if hi - 1 > lo:
            x[j] -= vals[lo:hi - 1] @ x[rows[lo:hi - 1]]
        x[j] /= vals[hi - 1]
    return x


def _check_square(T, b):
    if T.nrows != T.ncols:
        raise ValueError("triangular solve needs a square matrix")
    if np.shape(b) != (T.ncols,):
        raise ValueError("right-hand side length mismatch")


# ---------------------------------------------------------------------------
# Triangular solve with a sparse right-hand side
# ---------------------------------------------------------------------------


def reach_pattern(T: CscMatrix, seed_rows) -> np.ndarray:
    """Nodes reachable from the seed set in T's column graph.

    The graph has an edge j -> i for every stored off-diagonal entry
    (i, j).  The result is in topological order (every node precedes
    the nodes it updates), which is exactly the elimination order the
    numeric solve needs.
    """
    ptr, rows = T.col_ptr, T.row_idx
    marked = np.zeros(T.ncols, dtype=bool)
    topo: list[int] = []
    # iterative depth-first search; stack holds (node, cursor)
    for s in seed_rows:
        s = int(s)
        if marked[s]:
            continue
        marked[s] = True
        stack = [(s, ptr[s])]
        while stack:
            node, cursor = stack[-1]
            advanced = False
            while cursor < ptr[node + 1]:
                child = int(rows[cursor])
                cursor += 1
                if child != node and not marked[child]:
                    marked[child] = True
                    stack[-1] = (node, cursor)
                    stack.append((child, ptr[child]))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                topo.append(node)
    topo.reverse()
    return np.asarray(topo, dtype=np.int64)


def sparse_solve_sparse_rhs(T: CscMatrix, b_pattern, b_values, unit_diag=False):
    """Solve T x = b where b is sparse, returning x in sparse form.

    T may be lower or upper triangular.  The returned pattern is the
    set of nodes reachable from b's pattern in T's column graph, sorted
    by row index; values fill that pattern (zeros from cancellation are
    kept).  Returns (pattern, values).
    """
    if T.nrows != T.ncols:
        raise ValueError("triangular solve needs a square matrix")
    b_pattern = np.asarray(b_pattern, dtype=np.int64)
    b_values = np.asarray(b_values, dtype=np.float64)
    if len(b_pattern) != len(b_values):
        raise ValueError("pattern/values length mismatch")
    topo = reach_pattern(T, b_pattern)
    x = np.zeros(T.ncols)
    x[b_pattern] = b_values
    ptr, rows, vals = T.col_ptr, T.row_idx, T.values
    for node in topo:
        lo, hi = ptr[node], ptr[node + 1]
        if not unit_diag:
            k = lo + np.searchsorted(rows[lo:hi], node)
            if k >= hi or rows[k] != node or vals[k] == 0.0:
                raise np.linalg.LinAlgError(f"missing or zero diagonal in column {node}")
            x[node] /= vals[k]
        xv = x[node]
        if xv != 0.0:
            for t in range(lo, hi):
                i = rows[t]
                if i != node:
                    x[i] -= vals[t] * xv
    pattern = np.sort(topo)
    return pattern, x[pattern]


# ---------------------------------------------------------------------------
# Column scaling and norm estimation
# ---------------------------------------------------------------------------


def column_scale(A: CscMatrix):
    """Scale every column of A to unit 2-norm.

    Returns (scaled matrix, ColumnScaling with the original norms).
    Raises ValueError naming the first empty column, if any.
    """
    counts = A.column_counts()
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise ValueError(f"cannot scale zero column {empty[0]}")
    sq = np.zeros(A.ncols)
    sq[:] = np.add.reduceat(A.values * A.values, A.col_ptr[:-1])
    norms = np.sqrt(sq)
    scaled = CscMatrix(
        A.nrows,
        A.ncols,
        A.col_ptr.copy(),
        A.row_idx.copy(),
        A.values / np.repeat(norms, counts),
    )
    return scaled, ColumnScaling(norms)


def power_method_norm2(A: CscMatrix, iters=100, seed=0) -> float:
    """Estimate the spectral norm of A by power iteration on A.T A.

    Each step costs one product with A and one with A.T.  The returned
    estimate is non-decreasing in the iteration count (Rayleigh
    quotient of the iterates) and deterministic for a given seed.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.ncols)
    nv = np.linalg.norm(v)
    if nv == 0.0 or A.nnz == 0:
        return 0.0
    v /= nv
    est = 0.0
    for _ in range(iters):
        w = matvec(A, v)
        est = np.linalg.norm(w)
        if est == 0.0:
            return 0.0
        t = matvec_transpose(A, w)
        nt = np.linalg.norm(t)
        if nt == 0.0:
            return est
        v = t / nt
    return float(est)


# ---------------------------------------------------------------------------
# Matrix Market ingestion
# ---------------------------------------------------------------------------


@dataclass
class IngestInfo:
    """What happened while reading a Matrix Market file."""

    entries_read: int
    explicit_zeros: int
    removed_rows: int
    removed_cols: int
    transposed: bool


def read_matrix_market(path) -> CscMatrix:
    """Read a coordinate Matrix Market file; see read_matrix_market_ex."""
    A, _ = read_matrix_market_ex(path)
    return A


def read_matrix_market_ex(path):
    """Read a coordinate Matrix Market file, returning (matrix, IngestInfo).

    Supported banner: ``matrix coordinate real|integer general|symmetric``.
    Symmetric files are expanded to general storage.  Duplicate entries
    are summed and explicit zeros dropped.  Null rows and columns are
    removed, and if the result has fewer rows than columns it is
    transposed so the system is overdetermined.
    """
    with open(path, "r") as f:
        banner = f.readline()
        parts = banner.strip().split()
        if len(parts) != 5 or parts[0] != "%%MatrixMarket" or parts[1].lower() != "matrix":
            raise MatrixMarketError(f"malformed banner: {banner.strip()!r}")
        fmt, field, symmetry = (p.lower() for p in parts[2:5])
        if fmt != "coordinate":
            raise MatrixMarketError(f"unsupported format {fmt!r} (only coordinate)")
        if field not in ("real", "integer"):
            raise MatrixMarketError(f"unsupported field {field!r} (pattern/complex not supported)")
        if symmetry not in ("general", "symmetric"):
            raise MatrixMarketError(f"unsupported symmetry {symmetry!r}")

        line = f.readline()
        while line and (line.startswith("%") or not line.strip()):
            line = f.readline()
        dims = line.split()
        if len(dims) != 3:
            raise MatrixMarketError(f"malformed size line: {line.strip()!r}")
        try:
            nrows, ncols, nnz = (int(t) for t in dims)
        except ValueError as exc:
            raise MatrixMarketError(f"malformed size line: {line.strip()!r}") from exc

        try:
            table = np.loadtxt(f, dtype=np.float64, comments="%", ndmin=2)
        except ValueError as exc:
            raise MatrixMarketError(f"malformed entry data: {exc}") from exc
        if table.size == 0:
            table = table.reshape(0, 3)
        if table.shape[1] != 3:
            raise MatrixMarketError(f"entries have {table.shape[1]} fields, expected 3")
        if table.shape[0] != nnz:
            raise MatrixMarketError(f"expected {nnz} entries, found {table.shape[0]}")
        rows = table[:, 0].astype(np.int64)
        cols = table[:, 1].astype(np.int64)
        vals = table[:, 2]
        if np.any(rows != table[:, 0]) or np.any(cols != table[:, 1]):
            raise MatrixMarketError("non-integer row or column index")

    rows -= 1
    cols -= 1
    if nnz and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
        raise MatrixMarketError("entry index out of range")

    explicit_zeros = int(np.count_nonzero(vals == 0.0))

    if symmetry == "symmetric":
        if nrows != ncols:
            raise MatrixMarketError("symmetric file must be square")
        if np.any(rows < cols):
            raise MatrixMarketError("symmetric file stores an upper-triangular entry")
        off = rows != cols
        mirror_r, mirror_c, mirror_v = cols[off], rows[off], vals[off]
        rows = np.concatenate([rows, mirror_r])
        cols = np.concatenate([cols, mirror_c])
        vals = np.concatenate([vals, mirror_v])

    A = CscMatrix.from_coo(nrows, ncols, rows, cols, vals)

    # drop null rows/columns
    row_used = np.zeros(nrows, dtype=bool)
    row_used[A.row_idx] = True
    col_used = A.column_counts() > 0
    removed_rows = int(nrows - row_used.sum())
    removed_cols = int(ncols - col_used.sum())
    if removed_rows or removed_cols:
        row_map = np.cumsum(row_used) - 1
        col_map = np.cumsum(col_used) - 1
        cols_full = np.repeat(np.arange(A.ncols, dtype=np.int64), A.column_counts())
        A = CscMatrix.from_coo(
            int(row_used.sum()),
            int(col_used.sum()),
            row_map[A.row_idx],
            col_map[cols_full],
            A.values,
        )

    transposed = A.nrows < A.ncols
    if transposed:
        A = A.transpose()

    info = IngestInfo(
        entries_read=nnz,
        explicit_zeros=explicit_zeros,
        removed_rows=removed_rows,
        removed_cols=removed_cols,
        transposed=transposed,
    )
    return A, info


# ---------------------------------------------------------------------------
# Dense Cholesky (for the small correction system)
# ---------------------------------------------------------------------------


def dense_cholesky_factorize(S: DenseMatrix) -> DenseMatrix:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Unblocked right-looking sweep; only the lower triangle of S is
    referenced.  Raises LinAlgError on a non-positive pivot.
    """
    if S.nrows != S.ncols:
        raise ValueError("Cholesky needs a square matrix")
    g = np.array(S.a, order="F", copy=True)
    s = S.nrows
    for j in range(s):
        d = g[j, j]
        if d <= 0.0 or not np.isfinite(d):
            raise np.linalg.LinAlgError(f"matrix is not positive definite (pivot {j})")
        d = np.sqrt(d)
        g[j, j] = d
        if j + 1 < s:
            g[j + 1:, j] /= d
            g[j + 1:, j + 1:] -= np.outer(g[j + 1:, j], g[j + 1:, j])
    return DenseMatrix(np.tril(g))


def dense_cholesky_solve(factor: DenseMatrix, b) -> np.ndarray:
    """Solve S x = b given the lower Cholesky factor of S."""
    g = factor.a
    s = factor.nrows
    x = np.array(b, dtype=np.float64, copy=True)
    if x.shape != (s,):
        raise ValueError("right-hand side length mismatch")
    for j in range(s):
        x[j] /= g[j, j]
        if j + 1 < s:
            x[j + 1:] -= g[j + 1:, j] * x[j]
    for j in range(s - 1, -1, -1):
        if j + 1 < s:
            x[j] -= g[j + 1:, j] @ x[j + 1:]
        x[j] /= g[j, j]
    return x
