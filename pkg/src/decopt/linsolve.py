"""Residual-controlled linear solvers for the state and adjoint systems.

Direct elimination for tridiagonal systems, SOR with a near-optimal
relaxation factor, Peaceman-Rachford ADI for the five-point Laplacian,
and restarted GMRES with an SOR-sweep preconditioner.  Every iterative
solver reports the Euclidean norm of the true residual r = b - A x and
a converged flag; callers decide what to do with non-convergence.

Hot loops are JIT-compiled with numba.  Direct factorizations used as
oracles elsewhere in the package live in scipy; the solvers here are
self-contained so their residual accounting stays inspectable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "TridiagonalSystem",
    "SparseMatrix",
    "SolveReport",
    "SingularSystemError",
    "thomas_solve",
    "sor_solve",
    "optimal_sor_omega",
    "adi_parameter_cycle",
    "adi_laplace_solve",
    "adi_laplace_transpose_solve",
    "gmres_solve",
    "make_sor_preconditioner",
]

SOR_MAX_ITER = 1_000_000
ADI_MAX_SWEEPS = 10_000
GMRES_MAX_OUTER = 1_000


class SingularSystemError(ValueError):
    """Raised when elimination hits a vanishing pivot."""


@dataclass
class TridiagonalSystem:
    """Tridiagonal matrix stored as three diagonals.

    lower[i-1] is A[i, i-1], diag[i] is A[i, i], upper[i] is A[i, i+1].
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.ascontiguousarray(self.lower, dtype=np.float64)
        self.diag = np.ascontiguousarray(self.diag, dtype=np.float64)
        self.upper = np.ascontiguousarray(self.upper, dtype=np.float64)
        n = self.diag.shape[0]
        if n < 1 or self.lower.shape[0] != n - 1 or self.upper.shape[0] != n - 1:
            raise ValueError("diagonal lengths are inconsistent")

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y

    def transpose(self) -> "TridiagonalSystem":
        return TridiagonalSystem(self.upper, self.diag, self.lower)

    def is_strictly_dominant(self) -> bool:
        off = np.zeros_like(self.diag)
        off[1:] += np.abs(self.lower)
        off[:-1] += np.abs(self.upper)
        return bool(np.all(np.abs(self.diag) > off))

    def residual_norm(self, x: np.ndarray, rhs: np.ndarray) -> float:
        return float(np.linalg.norm(rhs - self.matvec(x)))


@dataclass
class SparseMatrix:
    """Square sparse matrix as (row, col, value) triples in row-grouped order.

    Duplicate (row, col) pairs are rejected.  A CSR view is built lazily
    for matvec use.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    _csr: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        self.vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.vals.shape):
            raise ValueError("triple arrays must share a length")
        if self.rows.size:
            if self.rows.min() < 0 or self.rows.max() >= self.n:
                raise ValueError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n:
                raise ValueError("col index out of range")
            order = np.lexsort((self.cols, self.rows))
            self.rows = self.rows[order]
            self.cols = self.cols[order]
            self.vals = self.vals[order]
            dup = (np.diff(self.rows) == 0) & (np.diff(self.cols) == 0)
            if np.any(dup):
                raise ValueError("duplicate (row, col) entries")

    @property
    def csr(self):
        if self._csr is None:
            from scipy.sparse import csr_matrix

            self._csr = csr_matrix(
                (self.vals, (self.rows, self.cols)), shape=(self.n, self.n)
            )
        return self._csr

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self.n, self.cols.copy(), self.rows.copy(), self.vals.copy())

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        mask = self.rows == self.cols
        d[self.rows[mask]] = self.vals[mask]
        return d

    def residual_norm(self, x: np.ndarray, rhs: np.ndarray) -> float:
        return float(np.linalg.norm(rhs - self.matvec(x)))


@dataclass
class SolveReport:
    """Outcome of one linear solve.

    residual_norm is the Euclidean norm of r = b - A x for the returned
    solution; converged means residual_norm was at or below the requested
    tolerance when the solver stopped.
    """

    solution: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# Thomas elimination


def thomas_solve(sys: TridiagonalSystem, rhs: np.ndarray) -> np.ndarray:
    """Direct tridiagonal elimination; returns x with A x = rhs.

    Raises SingularSystemError when a pivot vanishes (relative to the
    row scale), which strict diagonal dominance rules out.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = sys.n
    if rhs.shape[0] != n:
        raise ValueError("rhs length mismatch")
    scale = max(np.abs(sys.diag).max(), np.abs(sys.lower).max(initial=0.0),
                np.abs(sys.upper).max(initial=0.0))
    if scale == 0.0:
        raise SingularSystemError("zero matrix")
    x = np.empty(n)
    cp = np.empty(n - 1) if n > 1 else np.empty(0)
    piv = sys.diag[0]
    if abs(piv) <= 1e-300 * scale:
        raise SingularSystemError("zero pivot in row 0")
    dp = rhs[0] / piv
    x[0] = dp
    for i in range(1, n):
        cp[i - 1] = sys.upper[i - 1] / piv
        piv = sys.diag[i] - sys.lower[i - 1] * cp[i - 1]
        if abs(piv) <= 1e-14 * scale:
            raise SingularSystemError(f"near-zero pivot in row {i}")
        x[i] = (rhs[i] - sys.lower[i - 1] * x[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


# ---------------------------------------------------------------------------
# SOR for tridiagonal systems


@njit(cache=True)
def _sor_tridiag_kernel(lo, di, up, b, x, omega, tol, max_iter):
    n = b.shape[0]
    # residual of the starting iterate; a good x0 may already satisfy tol
    res2 = 0.0
    for i in range(n):
        r = b[i] - di[i] * x[i]
        if i > 0:
            r -= lo[i - 1] * x[i - 1]
        if i < n - 1:
            r -= up[i] * x[i + 1]
        res2 += r * r
    res = math.sqrt(res2)
    if res <= tol:
        return 0, res, True
    one_m = 1.0 - omega
    if n == 1:
        for it in range(1, max_iter + 1):
            x[0] = one_m * x[0] + omega * b[0] / di[0]
            res = abs(b[0] - di[0] * x[0])
            if res <= tol:
                return it, res, True
        return max_iter, res, False
    for it in range(1, max_iter + 1):
        # red-black sweep: even rows touch only odd rows and vice versa,
        # so each colour updates dependency-free (tridiagonal systems are
        # consistently ordered; the optimal omega is unchanged)
        x[0] = one_m * x[0] + omega * (b[0] - up[0] * x[1]) / di[0]
        for i in range(2, n - 1, 2):
            x[i] = one_m * x[i] + omega * (
                b[i] - lo[i - 1] * x[i - 1] - up[i] * x[i + 1]) / di[i]
        if n % 2 == 1 and n > 1:
            x[n - 1] = one_m * x[n - 1] + omega * (
                b[n - 1] - lo[n - 2] * x[n - 2]) / di[n - 1]
        for i in range(1, n - 1, 2):
            x[i] = one_m * x[i] + omega * (
                b[i] - lo[i - 1] * x[i - 1] - up[i] * x[i + 1]) / di[i]
        if n % 2 == 0:
            x[n - 1] = one_m * x[n - 1] + omega * (
                b[n - 1] - lo[n - 2] * x[n - 2]) / di[n - 1]
        res2 = (b[0] - di[0] * x[0] - up[0] * x[1]) ** 2
        for i in range(1, n - 1):
            r = b[i] - lo[i - 1] * x[i - 1] - di[i] * x[i] - up[i] * x[i + 1]
            res2 += r * r
        res2 += (b[n - 1] - lo[n - 2] * x[n - 2] - di[n - 1] * x[n - 1]) ** 2
        res = math.sqrt(res2)
        if res <= tol:
            return it, res, True
    return max_iter, res, False


def sor_solve(
    sys: TridiagonalSystem,
    rhs: np.ndarray,
    tol: float,
    omega: float,
    x0: np.ndarray | None = None,
    max_iter: int = SOR_MAX_ITER,
) -> SolveReport:
    """SOR sweeps (red-black ordering) until ||b - A x||_2 <= tol.

    Convergence is guaranteed when the system or its transpose is
    strictly diagonally dominant (the transposed case arises for the
    adjoint systems here: A and A^T share the Jacobi spectrum, so the
    classical SOR theory applies to both with the same omega).
    Tridiagonal systems are consistently ordered, so the red-black
    sweep shares the natural ordering's optimal omega while updating
    each colour dependency-free.  Exhausting max_iter returns
    converged=False rather than raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < omega < 2.0:
        raise ValueError("omega must lie in (0, 2)")
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != sys.n:
        raise ValueError("rhs length mismatch")
    x = np.zeros(sys.n) if x0 is None else np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(rhs)):
        raise ValueError("non-finite input")
    iters, res, ok = _sor_tridiag_kernel(
        sys.lower, sys.diag, sys.upper, rhs, x, float(omega), float(tol), int(max_iter)
    )
    return SolveReport(solution=x, residual_norm=res, iterations=int(iters), converged=bool(ok))


def optimal_sor_omega(sys: TridiagonalSystem) -> float:
    """Near-optimal SOR relaxation factor for a Toeplitz-interior system.

    The interior stencil (a, b, c) is read from the middle row and the
    contiguous run of rows sharing it is counted; for that block the
    Jacobi spectral radius satisfies rho^2 = 4ac/b^2 * cos^2(pi/(n_int+1))
    (a signed quantity when a*c < 0), giving omega = 2/(1 + sqrt(1 - rho^2)).
    Falls back to omega = 1 when rho^2 >= 1 or the stencil degenerates.
    """
    n = sys.n
    if n < 3:
        return 1.0
    mid = n // 2
    a = sys.lower[mid - 1]
    b = sys.diag[mid]
    c = sys.upper[mid]
    if b == 0.0:
        return 1.0
    if a == 0.0 and c == 0.0:
        return 1.0
    # contiguous run of rows 1..n-2 sharing the middle stencil
    match = (sys.lower[:-1] == a) & (sys.diag[1:-1] == b) & (sys.upper[1:] == c)
    breaks = np.flatnonzero(~match)
    pos = mid - 1  # match index of the middle row
    left = int(breaks[breaks < pos].max(initial=-1))
    right = int(breaks[breaks > pos].min(initial=match.shape[0]))
    n_int = right - left - 1
    rho_sq = 4.0 * a * c / (b * b) * math.cos(math.pi / (n_int + 1)) ** 2
    if rho_sq >= 1.0:
        return 1.0
    return 2.0 / (1.0 + math.sqrt(1.0 - rho_sq))


# ---------------------------------------------------------------------------
# Peaceman-Rachford ADI for the five-point Laplacian


@njit(cache=True)
def _interior_residual(u):
    m2 = u.shape[0]
    res2 = 0.0
    for j in range(1, m2 - 1):
        for k in range(1, m2 - 1):
            r = u[j - 1, k] + u[j + 1, k] + u[j, k - 1] + u[j, k + 1] - 4.0 * u[j, k]
            res2 += r * r
    return math.sqrt(res2)


@njit(cache=True)
def _adi_kernel(u, rhos, tol, max_pairs):
    m2 = u.shape[0]
    m = m2 - 2
    res = _interior_residual(u)
    if res <= tol:
        return 0, res, True
    # Thomas factors for tridiag(-1, 2+rho, -1) per cycle parameter,
    # shared by every line of the half sweep that uses that parameter
    nrho = rhos.shape[0]
    piv = np.empty((nrho, m))
    cp = np.empty((nrho, m))
    for r in range(nrho):
        d = 2.0 + rhos[r]
        piv[r, 0] = d
        cp[r, 0] = -1.0 / d
        for i in range(1, m):
            piv[r, i] = d + cp[r, i - 1]
            cp[r, i] = -1.0 / piv[r, i]
    # all lines of a half sweep are independent: eliminate with the line
    # index innermost so those loops vectorize
    rhs = np.empty((m, m))
    for pair in range(1, max_pairs + 1):
        r = (pair - 1) % nrho
        rho = rhos[r]
        # x-implicit half sweep: tridiagonal along j, one line per k
        for i in range(m):
            for k in range(m):
                rhs[i, k] = rho * u[i + 1, k + 1] + (
                    u[i + 1, k] - 2.0 * u[i + 1, k + 1] + u[i + 1, k + 2])
        for k in range(m):
            rhs[0, k] = (rhs[0, k] + u[0, k + 1]) / piv[r, 0]
            rhs[m - 1, k] += u[m + 1, k + 1]
        for i in range(1, m):
            for k in range(m):
                rhs[i, k] = (rhs[i, k] + rhs[i - 1, k]) / piv[r, i]
        for i in range(m - 2, -1, -1):
            for k in range(m):
                rhs[i, k] -= cp[r, i] * rhs[i + 1, k]
        for i in range(m):
            for k in range(m):
                u[i + 1, k + 1] = rhs[i, k]
        # y-implicit half sweep: tridiagonal along k, one line per j
        for j in range(m):
            for i in range(m):
                rhs[i, j] = rho * u[j + 1, i + 1] + (
                    u[j, i + 1] - 2.0 * u[j + 1, i + 1] + u[j + 2, i + 1])
        for j in range(m):
            rhs[0, j] = (rhs[0, j] + u[j + 1, 0]) / piv[r, 0]
            rhs[m - 1, j] += u[j + 1, m + 1]
        for i in range(1, m):
            for j in range(m):
                rhs[i, j] = (rhs[i, j] + rhs[i - 1, j]) / piv[r, i]
        for i in range(m - 2, -1, -1):
            for j in range(m):
                rhs[i, j] -= cp[r, i] * rhs[i + 1, j]
        for j in range(m):
            for i in range(m):
                u[j + 1, i + 1] = rhs[i, j]
        res = _interior_residual(u)
        if res <= tol:
            return pair, res, True
    return max_pairs, res, False


def adi_parameter_cycle(grid_size: int) -> np.ndarray:
    """Geometric sweep-parameter cycle for the five-point Laplacian.

    The one-dimensional line operators have eigenvalues in
    [4 sin^2(pi/(2(M+1))), 4 cos^2(pi/(2(M+1)))]; geometrically spaced
    parameters over that range give a per-cycle contraction roughly
    independent of M, so the pair count to a fixed tolerance grows like
    log(M) instead of the O(M) of a single optimal parameter.
    """
    m = int(grid_size)
    if m < 1:
        raise ValueError("grid size must be positive")
    half = math.pi / (2.0 * (m + 1))
    lo = 4.0 * math.sin(half) ** 2
    hi = 4.0 * math.cos(half) ** 2
    if m == 1:
        return np.array([2.0])
    count = max(1, math.ceil(math.log(hi / lo)))
    frac = (2.0 * np.arange(1, count + 1) - 1.0) / (2.0 * count)
    return hi * (lo / hi) ** frac


def adi_laplace_solve(
    grid_size: int,
    boundary: np.ndarray,
    tol: float,
    x0: np.ndarray | None = None,
    max_sweeps: int = ADI_MAX_SWEEPS,
) -> SolveReport:
    """Peaceman-Rachford ADI for the five-point Laplace stencil.

    Solves the (M+2)^2 grid system whose interior rows read
    u[j-1,k] + u[j+1,k] + u[j,k-1] + u[j,k+1] - 4 u[j,k] = 0 and whose
    boundary rows pin u to the Dirichlet data.  `boundary` is a full
    (M+2, M+2) field whose outer ring carries the data (interior values
    are ignored).  Sweep parameters cycle through the geometric set of
    adi_parameter_cycle; the residual (interior rows, Euclidean norm)
    is checked after each full sweep pair, which is what `iterations`
    counts.

    Returns the field flattened row-major, matching the block ordering
    used by the Laplace problem matrix.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = int(grid_size)
    if m < 1:
        raise ValueError("grid size must be positive")
    boundary = np.asarray(boundary, dtype=np.float64)
    if boundary.shape != (m + 2, m + 2):
        raise ValueError("boundary field must have shape (M+2, M+2)")
    u = np.zeros((m + 2, m + 2)) if x0 is None else np.array(
        np.asarray(x0, dtype=np.float64).reshape(m + 2, m + 2)
    )
    # boundary ring is authoritative, whatever x0 carried there
    u[0, :] = boundary[0, :]
    u[-1, :] = boundary[-1, :]
    u[:, 0] = boundary[:, 0]
    u[:, -1] = boundary[:, -1]
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite input")
    pairs, res, ok = _adi_kernel(u, adi_parameter_cycle(m), float(tol), int(max_sweeps))
    return SolveReport(
        solution=u.reshape(-1), residual_norm=res, iterations=int(pairs), converged=bool(ok)
    )


@njit(cache=True)
def _interior_residual_forced(x, f):
    m2 = x.shape[0]
    res2 = 0.0
    for j in range(1, m2 - 1):
        for k in range(1, m2 - 1):
            r = (x[j - 1, k] + x[j + 1, k] + x[j, k - 1] + x[j, k + 1]
                 - 4.0 * x[j, k]) - f[j - 1, k - 1]
            res2 += r * r
    return math.sqrt(res2)


@njit(cache=True)
def _adi_forced_kernel(x, f, rhos, tol, max_pairs):
    # Same Peaceman-Rachford scheme as _adi_kernel, for interior rows
    # (nbrs - 4 x) = f with a zero Dirichlet ring: the ring of x is kept
    # at zero so the stencil reads need no boundary additions, and the
    # forcing enters both half sweeps with the sign of the positive
    # definite form (4 - nbrs) x = -f.
    m2 = x.shape[0]
    m = m2 - 2
    res = _interior_residual_forced(x, f)
    if res <= tol:
        return 0, res, True
    nrho = rhos.shape[0]
    piv = np.empty((nrho, m))
    cp = np.empty((nrho, m))
    for r in range(nrho):
        d = 2.0 + rhos[r]
        piv[r, 0] = d
        cp[r, 0] = -1.0 / d
        for i in range(1, m):
            piv[r, i] = d + cp[r, i - 1]
            cp[r, i] = -1.0 / piv[r, i]
    rhs = np.empty((m, m))
    for pair in range(1, max_pairs + 1):
        r = (pair - 1) % nrho
        rho = rhos[r]
        # x-implicit half sweep
        for i in range(m):
            for k in range(m):
                rhs[i, k] = rho * x[i + 1, k + 1] + (
                    x[i + 1, k] - 2.0 * x[i + 1, k + 1] + x[i + 1, k + 2]
                ) - f[i, k]
        for k in range(m):
            rhs[0, k] /= piv[r, 0]
        for i in range(1, m):
            for k in range(m):
                rhs[i, k] = (rhs[i, k] + rhs[i - 1, k]) / piv[r, i]
        for i in range(m - 2, -1, -1):
            for k in range(m):
                rhs[i, k] -= cp[r, i] * rhs[i + 1, k]
        for i in range(m):
            for k in range(m):
                x[i + 1, k + 1] = rhs[i, k]
        # y-implicit half sweep
        for j in range(m):
            for i in range(m):
                rhs[i, j] = rho * x[j + 1, i + 1] + (
                    x[j, i + 1] - 2.0 * x[j + 1, i + 1] + x[j + 2, i + 1]
                ) - f[j, i]
        for j in range(m):
            rhs[0, j] /= piv[r, 0]
        for i in range(1, m):
            for j in range(m):
                rhs[i, j] = (rhs[i, j] + rhs[i - 1, j]) / piv[r, i]
        for i in range(m - 2, -1, -1):
            for j in range(m):
                rhs[i, j] -= cp[r, i] * rhs[i + 1, j]
        for j in range(m):
            for i in range(m):
                x[j + 1, i + 1] = rhs[i, j]
        res = _interior_residual_forced(x, f)
        if res <= tol:
            return pair, res, True
    return max_pairs, res, False


def adi_laplace_transpose_solve(
    grid_size: int,
    rhs: np.ndarray,
    tol: float,
    x0: np.ndarray | None = None,
    max_sweeps: int = ADI_MAX_SWEEPS,
) -> SolveReport:
    """ADI for the transpose of the Laplace problem matrix.

    The transpose is block upper triangular in (ring, interior) order:
    its interior block is the plain five-point Dirichlet Laplacian (ring
    rows of the forward matrix are identity, so no coupling back), which
    the forced ADI kernel solves with a zero ring; the ring unknowns then
    follow exactly from x_ring = rhs_ring - (adjacent interior value).
    `rhs` is the full flattened (M+2)^2 right-hand side.

    The reported residual is the interior-row Euclidean norm, which
    equals the full-system residual because the ring rows are exact.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = int(grid_size)
    if m < 1:
        raise ValueError("grid size must be positive")
    w = m + 2
    b = np.asarray(rhs, dtype=np.float64).reshape(w, w)
    f = np.ascontiguousarray(b[1:-1, 1:-1])
    if x0 is None:
        x = np.zeros((w, w))
    else:
        x = np.array(np.asarray(x0, dtype=np.float64).reshape(w, w))
        x[0, :] = 0.0
        x[-1, :] = 0.0
        x[:, 0] = 0.0
        x[:, -1] = 0.0
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    pairs, res, ok = _adi_forced_kernel(x, f, adi_parameter_cycle(m), float(tol), int(max_sweeps))
    # ring rows of the transpose: x_r + sum of adjacent interior x = b_r;
    # each edge ring point has exactly one interior neighbour, corners none
    x[0, :] = b[0, :]
    x[-1, :] = b[-1, :]
    x[:, 0] = b[:, 0]
    x[:, -1] = b[:, -1]
    x[0, 1:-1] -= x[1, 1:-1]
    x[-1, 1:-1] -= x[-2, 1:-1]
    x[1:-1, 0] -= x[1:-1, 1]
    x[1:-1, -1] -= x[1:-1, -2]
    return SolveReport(
        solution=x.reshape(-1), residual_norm=res, iterations=int(pairs), converged=bool(ok)
    )


# ---------------------------------------------------------------------------
# Restarted GMRES with right preconditioning


@njit(cache=True)
def _csr_sor_sweep_kernel(indptr, indices, data, diag, b, x, omega, nsweeps):
    n = b.shape[0]
    for _ in range(nsweeps):
        for i in range(n):
            acc = b[i]
            for ptr in range(indptr[i], indptr[i + 1]):
                j = indices[ptr]
                if j != i:
                    acc -= data[ptr] * x[j]
            x[i] = (1.0 - omega) * x[i] + omega * acc / diag[i]
    return x


def make_sor_preconditioner(mat: SparseMatrix, omega: float, sweeps: int = 1):
    """Preconditioner handle: v -> result of `sweeps` SOR sweeps on A z = v from z = 0.

    Starting from zero makes the map linear in v, as GMRES requires.
    """
    csr = mat.csr
    diag = mat.diagonal()
    if np.any(diag == 0.0):
        raise ValueError("zero diagonal entry; SOR sweep undefined")
    indptr = csr.indptr.astype(np.int64)
    indices = csr.indices.astype(np.int64)
    data = csr.data.astype(np.float64)
    om = float(omega)
    ns = int(sweeps)

    def apply(v: np.ndarray) -> np.ndarray:
        z = np.zeros_like(v)
        return _csr_sor_sweep_kernel(indptr, indices, data, diag, v, z, om, ns)

    return apply


def gmres_solve(
    mat: SparseMatrix,
    rhs: np.ndarray,
    tol: float,
    restart: int = 50,
    precond=None,
    x0: np.ndarray | None = None,
    max_outer: int = GMRES_MAX_OUTER,
) -> SolveReport:
    """Restarted GMRES(m) with modified Gram-Schmidt and Givens rotations.

    Right preconditioning keeps the minimized quantity equal to the true
    residual of the unpreconditioned system, so the reported residual
    norm needs no translation.  The true residual is recomputed from the
    updated iterate at every restart; stagnation (no decrease across one
    full restart cycle) reports converged=False.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if restart < 1:
        raise ValueError("restart must be >= 1")
    rhs = np.asarray(rhs, dtype=np.float64)
    n = mat.n
    if rhs.shape[0] != n:
        raise ValueError("rhs length mismatch")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    apply_m = precond if precond is not None else (lambda v: v)

    r = rhs - mat.matvec(x)
    beta = float(np.linalg.norm(r))
    total_inner = 0
    if beta <= tol:
        return SolveReport(solution=x, residual_norm=beta, iterations=0, converged=True)

    prev_cycle = beta
    for _ in range(max_outer):
        v = np.empty((restart + 1, n))
        h = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        v[0] = r / beta
        g[0] = beta
        j_used = 0
        for j in range(restart):
            w = mat.matvec(apply_m(v[j]))
            total_inner += 1
            for i in range(j + 1):
                h[i, j] = float(np.dot(w, v[i]))
                w -= h[i, j] * v[i]
            h[j + 1, j] = float(np.linalg.norm(w))
            if h[j + 1, j] > 0.0:
                v[j + 1] = w / h[j + 1, j]
            # apply accumulated rotations, then form the new one
            for i in range(j):
                tmp = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = tmp
            denom = math.hypot(h[j, j], h[j + 1, j])
            if denom == 0.0:
                break  # dead column (singular operator); drop it
            cs[j] = h[j, j] / denom
            sn[j] = h[j + 1, j] / denom
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            if abs(g[j + 1]) <= tol:
                break
        if j_used == 0:
            return SolveReport(
                solution=x, residual_norm=beta, iterations=total_inner, converged=False
            )
        # back-substitute for the Krylov coefficients, update x
        y = np.zeros(j_used)
        for i in range(j_used - 1, -1, -1):
            s = g[i] - np.dot(h[i, i + 1:j_used], y[i + 1:])
            y[i] = s / h[i, i]
        x = x + apply_m(v[:j_used].T @ y)
        r = rhs - mat.matvec(x)
        beta = float(np.linalg.norm(r))
        if beta <= tol:
            return SolveReport(
                solution=x, residual_norm=beta, iterations=total_inner, converged=True
            )
        if beta >= prev_cycle * (1.0 - 1e-12):
            return SolveReport(  # stagnated over one full cycle
                solution=x, residual_norm=beta, iterations=total_inner, converged=False
            )
        prev_cycle = beta
    return SolveReport(solution=x, residual_norm=beta, iterations=total_inner, converged=False)
