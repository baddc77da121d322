"""Two differential-equation-constrained inverse problems.

Both cast the constraint as an affine residual R(z, y) = A(z) y - b(z) = 0
on a uniform grid and measure a least-squares misfit against reference
values at sampled nodes:

- OdeBoundaryValueProblem: recover coefficients, forcing polynomial, and
  boundary values of a linear second-order two-point boundary value
  problem  z0 u'' + z1 u' + z2 u = z3 + z4 x + z5 x^2,  u(0) = z6,
  u(1) = z7, discretized with central differences.  Eight controls.

- LaplaceBoundaryControlProblem: recover the polynomial Dirichlet data
  f(y) = z0 + z1 y + z2 y^2 imposed on the right edge of the unit square
  for the Laplace equation, five-point stencil.  Three controls; the
  system matrix does not depend on z, so the reduced objective is a
  convex quadratic.

Reference data comes from closed-form solutions of the continuous
problems evaluated at (snapped) sample nodes, so the misfit at z_ref is
pure discretization error.  A discrete-consistent variant (values taken
from the discrete solve itself) is available for tests that need an
exactly vanishing gradient at z_ref.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linsolve import (
    SolveReport,
    SparseMatrix,
    TridiagonalSystem,
    adi_laplace_solve,
    adi_laplace_transpose_solve,
    optimal_sor_omega,
    sor_solve,
    thomas_solve,
)

__all__ = [
    "ReferenceData",
    "OdeBoundaryValueProblem",
    "LaplaceBoundaryControlProblem",
    "ODE_Z_REF",
    "ODE_Z_START",
    "LAPLACE_Z_REF",
    "LAPLACE_Z_START",
    "build_ode_system",
    "build_laplace_matrix",
    "build_laplace_rhs",
    "ode_analytic_solution",
    "laplace_analytic_solution",
    "fourier_boundary_coefficients",
    "generate_ode_reference",
    "generate_laplace_reference",
    "save_reference",
    "load_reference",
]

ODE_Z_REF = np.array([1.0, -3.0, -4.0, 1.0, 1.0, 5.0, 0.0, 0.0])
ODE_Z_START = np.array([1.5, 2.0, -7.0, 0.2, -0.4, 0.1, 1.0, -0.2])
LAPLACE_Z_REF = np.array([0.0, 1.0, -1.0])
LAPLACE_Z_START = np.array([0.5, 1.0, 0.25])


@dataclass
class ReferenceData:
    """Sampled reference values the misfit is measured against.

    sample_indices index the flattened state vector; alpha weights the
    quadratic penalty (zero when the problem has none).
    """

    sample_indices: np.ndarray
    reference_values: np.ndarray
    z_ref: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        self.sample_indices = np.ascontiguousarray(self.sample_indices, dtype=np.int64)
        self.reference_values = np.ascontiguousarray(self.reference_values, dtype=np.float64)
        self.z_ref = np.ascontiguousarray(self.z_ref, dtype=np.float64)
        if self.sample_indices.shape != self.reference_values.shape:
            raise ValueError("indices and values must align")
        if len(np.unique(self.sample_indices)) != len(self.sample_indices):
            raise ValueError("duplicate sample indices")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def save_reference(data: ReferenceData, path) -> None:
    """Whitespace table with a comment header; round-trips exactly via repr."""
    with open(path, "w") as fh:
        fh.write("# reference data\n")
        fh.write("# z_ref " + " ".join(repr(float(v)) for v in data.z_ref) + "\n")
        fh.write(f"# alpha {float(data.alpha)!r}\n")
        fh.write("# index value\n")
        for i, v in zip(data.sample_indices, data.reference_values):
            fh.write(f"{i} {float(v)!r}\n")


def load_reference(path) -> ReferenceData:
    z_ref = None
    alpha = 0.0
    idx, vals = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "z_ref":
                    z_ref = np.array([float(p) for p in parts[1:]])
                elif parts and parts[0] == "alpha":
                    alpha = float(parts[1])
                continue
            i, v = line.split()
            idx.append(int(i))
            vals.append(float(v))
    if z_ref is None:
        raise ValueError("missing z_ref header line")
    return ReferenceData(np.array(idx), np.array(vals), z_ref, alpha)


# ---------------------------------------------------------------------------
# ODE boundary value problem


def build_ode_system(z: np.ndarray, grid_size: int) -> tuple[TridiagonalSystem, np.ndarray]:
    """Central-difference system for the second-order BVP on M interior nodes.

    Rows 0 and M+1 are identity rows pinning the boundary values to z6, z7.
    """
    z = np.asarray(z, dtype=np.float64)
    m = int(grid_size)
    dx = 1.0 / (m + 1)
    a_lo = z[0] / dx**2 - z[1] / (2.0 * dx)
    b_di = -2.0 * z[0] / dx**2 + z[2]
    c_up = z[0] / dx**2 + z[1] / (2.0 * dx)
    lower = np.empty(m + 1)
    lower[:m] = a_lo
    lower[m] = 0.0
    diag = np.empty(m + 2)
    diag[0] = diag[m + 1] = 1.0
    diag[1:m + 1] = b_di
    upper = np.empty(m + 1)
    upper[0] = 0.0
    upper[1:] = c_up
    x = np.arange(1, m + 1) * dx
    rhs = np.empty(m + 2)
    rhs[0] = z[6]
    rhs[1:m + 1] = z[3] + x * (z[4] + z[5] * x)
    rhs[m + 1] = z[7]
    return TridiagonalSystem(lower, diag, upper), rhs


def ode_analytic_solution(z: np.ndarray, x) -> np.ndarray:
    """Closed-form solution of the continuous BVP.

    Requires distinct real characteristic roots and z2 != 0; both hold on
    the admissible set (z0 > 0, z2 < 0).
    """
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z[2] == 0.0 or z[0] == 0.0:
        raise ValueError("analytic form needs z0 != 0 and z2 != 0")
    disc = z[1] ** 2 - 4.0 * z[0] * z[2]
    if disc <= 0.0:
        raise ValueError("characteristic roots must be real and distinct")
    sq = math.sqrt(disc)
    r1 = (-z[1] + sq) / (2.0 * z[0])
    r2 = (-z[1] - sq) / (2.0 * z[0])
    # particular quadratic a + b x + c x^2 matched term by term
    c = z[5] / z[2]
    b = (z[4] - 2.0 * z[1] * c) / z[2]
    a = (z[3] - 2.0 * z[0] * c - z[1] * b) / z[2]
    up0 = a
    up1 = a + b + c
    mat = np.array([[1.0, 1.0], [math.exp(r1), math.exp(r2)]])
    rhs = np.array([z[6] - up0, z[7] - up1])
    c1, c2 = np.linalg.solve(mat, rhs)
    return c1 * np.exp(r1 * x) + c2 * np.exp(r2 * x) + a + b * x + c * x**2


def generate_ode_reference(
    grid_size: int,
    n_targets: int = 12,
    z_ref: np.ndarray | None = None,
    alpha: float = 1.0,
    values_from: str = "analytic",
) -> ReferenceData:
    """Equispaced targets x_j = j/(n_targets-1) snapped to the nearest node.

    values_from="discrete" replaces the closed-form values by the discrete
    solve at z_ref, making the gradient vanish there exactly (test use).
    """
    z_ref = ODE_Z_REF.copy() if z_ref is None else np.asarray(z_ref, dtype=np.float64)
    m = int(grid_size)
    if n_targets < 2 or m + 1 < n_targets:
        raise ValueError("need 2 <= n_targets <= M+1 for distinct snapped nodes")
    targets = np.arange(n_targets) / (n_targets - 1)
    idx = np.round(targets * (m + 1)).astype(np.int64)
    dx = 1.0 / (m + 1)
    if values_from == "analytic":
        vals = ode_analytic_solution(z_ref, idx * dx)
    elif values_from == "discrete":
        sys, rhs = build_ode_system(z_ref, m)
        vals = thomas_solve(sys, rhs)[idx]
    else:
        raise ValueError("values_from must be 'analytic' or 'discrete'")
    return ReferenceData(idx, vals, z_ref, alpha)


class OdeBoundaryValueProblem:
    """Coefficient and boundary recovery for the 1-D BVP; 8 controls.

    State and adjoint solves use SOR with the near-optimal relaxation
    factor of the current stencil (the transpose shares the Jacobi
    spectrum, hence the factor).  Direct solves via Thomas elimination
    back the exact-gradient path.
    """

    control_dim = 8

    def __init__(self, grid_size: int, data: ReferenceData | None = None,
                 n_targets: int = 12, alpha: float = 1.0):
        self.grid_size = int(grid_size)
        self.n = self.grid_size + 2
        self.dx = 1.0 / (self.grid_size + 1)
        self.grid = np.arange(self.n) * self.dx
        self.data = data if data is not None else generate_ode_reference(
            self.grid_size, n_targets=n_targets, alpha=alpha
        )
        if self.data.sample_indices.max() >= self.n:
            raise ValueError("sample index beyond grid")
        self.n_samples = len(self.data.sample_indices)

    @property
    def default_step(self) -> float:
        return 1.15 / self.n_samples

    @property
    def start_point(self) -> np.ndarray:
        return ODE_Z_START.copy()

    def admissible(self, z: np.ndarray) -> bool:
        """Sufficient condition for a strictly diagonally dominant system."""
        z = np.asarray(z)
        return bool(
            z[0] > 0.0 and z[2] < 0.0 and z[0] >= abs(z[1]) / (2.0 * (self.grid_size + 1))
        )

    def _built(self, z: np.ndarray):
        # one-slot memo: a gradient evaluation hits the same z several
        # times (state solve, adjoint solve, residuals)
        key = np.asarray(z, dtype=np.float64).tobytes()
        cached = getattr(self, "_build_memo", None)
        if cached is None or cached[0] != key:
            sys, rhs = build_ode_system(z, self.grid_size)
            cached = (key, sys, rhs, optimal_sor_omega(sys), sys.transpose())
            self._build_memo = cached
        return cached[1], cached[2], cached[3]

    def system(self, z: np.ndarray) -> TridiagonalSystem:
        return self._built(z)[0]

    def rhs(self, z: np.ndarray) -> np.ndarray:
        return self._built(z)[1]

    def residual(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        sys, rhs, _ = self._built(z)
        return sys.matvec(y) - rhs

    def partial_residual_wrt_control(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        """(n, 8) Jacobian of R(z, y) in z at fixed y.

        The returned buffer is owned by the problem and overwritten by
        the next call; columns 3..7 never change.
        """
        jac = getattr(self, "_jac_buf", None)
        if jac is None:
            m = self.grid_size
            x = self.grid[1:-1]
            jac = np.zeros((self.n, 8))
            jac[1:-1, 3] = -1.0
            jac[1:-1, 4] = -x
            jac[1:-1, 5] = -(x**2)
            jac[0, 6] = -1.0
            jac[m + 1, 7] = -1.0
            self._jac_buf = jac
        dx = self.dx
        jac[1:-1, 0] = (y[:-2] - 2.0 * y[1:-1] + y[2:]) / dx**2
        jac[1:-1, 1] = (y[2:] - y[:-2]) / (2.0 * dx)
        jac[1:-1, 2] = y[1:-1]
        return jac

    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        d = y[self.data.sample_indices] - self.data.reference_values
        pen = self.data.alpha * (z[0] - 1.0) ** 2
        return float(np.dot(d, d) + pen)

    def objective_partials(self, z: np.ndarray, y: np.ndarray):
        """(dF/dz at fixed y, dF/dy at fixed z)."""
        d_z = np.zeros(8)
        d_z[0] = 2.0 * self.data.alpha * (z[0] - 1.0)
        d_y = np.zeros(self.n)
        d = y[self.data.sample_indices] - self.data.reference_values
        np.add.at(d_y, self.data.sample_indices, 2.0 * d)
        return d_z, d_y

    # -- solves ------------------------------------------------------------

    def solve_state_direct(self, z: np.ndarray) -> np.ndarray:
        sys, rhs, _ = self._built(z)
        return thomas_solve(sys, rhs)

    def solve_adjoint_direct(self, z: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        return thomas_solve(self.system(z).transpose(), rhs)

    def solve_state(self, z, tol, x0=None, max_iter=None) -> SolveReport:
        sys, rhs, omega = self._built(z)
        kw = {} if max_iter is None else {"max_iter": max_iter}
        return sor_solve(sys, rhs, tol, omega, x0=x0, **kw)

    def solve_adjoint(self, z, rhs, tol, x0=None, max_iter=None) -> SolveReport:
        self._built(z)
        sys_t = self._build_memo[4]  # transpose shares the Jacobi spectrum
        omega = self._build_memo[3]
        kw = {} if max_iter is None else {"max_iter": max_iter}
        return sor_solve(sys_t, rhs, tol, omega, x0=x0, **kw)

    def analytic_solution(self, z, x):
        return ode_analytic_solution(z, x)


# ---------------------------------------------------------------------------
# Laplace boundary control problem


def build_laplace_matrix(grid_size: int) -> SparseMatrix:
    """Five-point (M+2)^2 system, row-major flat index j*(M+2)+k.

    Interior rows: u[j-1,k] + u[j+1,k] + u[j,k-1] + u[j,k+1] - 4 u[j,k];
    boundary rows are identity.  Independent of the control vector.
    """
    m = int(grid_size)
    w = m + 2
    rows, cols, vals = [], [], []
    for j in range(w):
        for k in range(w):
            i = j * w + k
            if 1 <= j <= m and 1 <= k <= m:
                rows += [i, i, i, i, i]
                cols += [i, i - 1, i + 1, i - w, i + w]
                vals += [-4.0, 1.0, 1.0, 1.0, 1.0]
            else:
                rows.append(i)
                cols.append(i)
                vals.append(1.0)
    return SparseMatrix(w * w, np.array(rows), np.array(cols), np.array(vals))


def build_laplace_rhs(z: np.ndarray, grid_size: int) -> np.ndarray:
    """Zero except the right-edge rows x = 1, which carry f(y) = sum z_i y^i."""
    z = np.asarray(z, dtype=np.float64)
    m = int(grid_size)
    w = m + 2
    h = 1.0 / (m + 1)
    rhs = np.zeros(w * w)
    ys = np.arange(w) * h
    f = np.zeros(w)
    for i in range(len(z) - 1, -1, -1):
        f = f * ys + z[i]
    rhs[(m + 1) * w:] = f
    return rhs


def _sin_integrals(n: int, degree: int) -> np.ndarray:
    """I_i = integral of y^i sin(n pi y) over [0, 1], i = 0..degree."""
    npi = n * math.pi
    ints = np.empty(degree + 1)
    ints[0] = (1.0 - (-1.0) ** n) / npi
    j_prev = 0.0  # J_0 = integral of cos(n pi y) = 0
    for i in range(1, degree + 1):
        ints[i] = -((-1.0) ** n) / npi + (i / npi) * j_prev
        j_prev = -(i / npi) * ints[i - 1]
    return ints


def fourier_boundary_coefficients(z: np.ndarray, n_max: int) -> np.ndarray:
    """Sine coefficients c_n = 2 integral f(y) sin(n pi y) dy, n = 1..n_max."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty(n_max)
    for n in range(1, n_max + 1):
        ints = _sin_integrals(n, len(z) - 1)
        out[n - 1] = 2.0 * float(np.dot(z, ints))
    return out


def laplace_analytic_solution(z: np.ndarray, x, y, terms: int = 200) -> np.ndarray:
    """Separated-series solution, sinh ratio evaluated in overflow-free form."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coeff = fourier_boundary_coefficients(z, terms)
    out = np.zeros(np.broadcast(x, y).shape)
    for n in range(1, terms + 1):
        cn = coeff[n - 1]
        if cn == 0.0:
            continue
        npi = n * math.pi
        ratio = np.exp(npi * (x - 1.0)) * (-np.expm1(-2.0 * npi * x)) / (-np.expm1(-2.0 * npi))
        out = out + cn * ratio * np.sin(npi * y)
    return out


def generate_laplace_reference(
    grid_size: int,
    seed: int,
    z_ref: np.ndarray | None = None,
    values_from: str = "analytic",
) -> ReferenceData:
    """Latin hypercube interior samples snapped to grid nodes.

    n_s = 4(M+1) + 2 points; stratified coordinates with in-cell jitter,
    snapped to the nearest interior node; snap collisions are resampled
    as fresh uniform pairs from the same stream.  Requires n_s <= M^2.
    """
    z_ref = LAPLACE_Z_REF.copy() if z_ref is None else np.asarray(z_ref, dtype=np.float64)
    m = int(grid_size)
    n_s = 4 * (m + 1) + 2
    if n_s > m * m:
        raise ValueError("grid too coarse for the sample count")
    rng = np.random.default_rng(seed)
    h = 1.0 / (m + 1)
    xs = (rng.permutation(n_s) + rng.random(n_s)) / n_s
    ys = (rng.permutation(n_s) + rng.random(n_s)) / n_s
    js = np.clip(np.round(xs / h).astype(np.int64), 1, m)
    ks = np.clip(np.round(ys / h).astype(np.int64), 1, m)
    seen = set()
    pairs = []
    for j, k in zip(js, ks):
        if (j, k) not in seen:
            seen.add((j, k))
            pairs.append((j, k))
    while len(pairs) < n_s:
        x, y = rng.random(2)
        j = int(np.clip(round(x / h), 1, m))
        k = int(np.clip(round(y / h), 1, m))
        if (j, k) not in seen:
            seen.add((j, k))
            pairs.append((j, k))
    pairs = np.array(pairs, dtype=np.int64)
    idx = pairs[:, 0] * (m + 2) + pairs[:, 1]
    if values_from == "analytic":
        vals = laplace_analytic_solution(z_ref, pairs[:, 0] * h, pairs[:, 1] * h)
    elif values_from == "discrete":
        from scipy.sparse.linalg import splu

        lu = splu(build_laplace_matrix(m).csr.tocsc())
        vals = lu.solve(build_laplace_rhs(z_ref, m))[idx]
    else:
        raise ValueError("values_from must be 'analytic' or 'discrete'")
    return ReferenceData(idx, vals, z_ref, 0.0)


class LaplaceBoundaryControlProblem:
    """Right-edge Dirichlet control of the Laplace equation; 3 controls.

    Both solves use Peaceman-Rachford ADI: the state directly, the
    adjoint through the transposed system's block-triangular structure
    (interior block is again the five-point Dirichlet Laplacian, ring
    unknowns follow exactly).  The matrix, its factorization, and the
    control Jacobian are cached: none depend on z.
    """

    control_dim = 3

    def __init__(self, grid_size: int, data: ReferenceData | None = None, seed: int = 1234):
        self.grid_size = int(grid_size)
        self.width = self.grid_size + 2
        self.n = self.width**2
        self.h = 1.0 / (self.grid_size + 1)
        self.data = data if data is not None else generate_laplace_reference(
            self.grid_size, seed
        )
        if self.data.sample_indices.max() >= self.n:
            raise ValueError("sample index beyond grid")
        self.n_samples = len(self.data.sample_indices)
        self._matrix = None
        self._lu = None
        self._jac = None

    @property
    def default_step(self) -> float:
        return 3.5 / (self.n_samples - 2)

    @property
    def start_point(self) -> np.ndarray:
        return LAPLACE_Z_START.copy()

    def admissible(self, z: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(z)))

    def matrix(self) -> SparseMatrix:
        if self._matrix is None:
            self._matrix = build_laplace_matrix(self.grid_size)
        return self._matrix

    def system(self, z: np.ndarray) -> SparseMatrix:
        return self.matrix()

    def rhs(self, z: np.ndarray) -> np.ndarray:
        return build_laplace_rhs(z, self.grid_size)

    def boundary_field(self, z: np.ndarray) -> np.ndarray:
        return build_laplace_rhs(z, self.grid_size).reshape(self.width, self.width)

    def residual(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.matrix().matvec(y) - self.rhs(z)

    def partial_residual_wrt_control(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        """(n, 3) Jacobian of R in z: -(kh)^i on right-edge rows, else 0."""
        if self._jac is None:
            w = self.width
            jac = np.zeros((self.n, 3))
            ys = np.arange(w) * self.h
            for i in range(3):
                jac[(self.grid_size + 1) * w:, i] = -(ys**i)
            self._jac = jac
        return self._jac

    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        d = y[self.data.sample_indices] - self.data.reference_values
        return float(np.dot(d, d))

    def objective_partials(self, z: np.ndarray, y: np.ndarray):
        d_y = np.zeros(self.n)
        d = y[self.data.sample_indices] - self.data.reference_values
        np.add.at(d_y, self.data.sample_indices, 2.0 * d)
        return np.zeros(3), d_y

    # -- solves ------------------------------------------------------------

    def _factorization(self):
        if self._lu is None:
            from scipy.sparse.linalg import splu

            self._lu = splu(self.matrix().csr.tocsc())
        return self._lu

    def solve_state_direct(self, z: np.ndarray) -> np.ndarray:
        return self._factorization().solve(self.rhs(z))

    def solve_adjoint_direct(self, z: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        return self._factorization().solve(rhs, trans="T")

    def solve_state(self, z, tol, x0=None, max_iter=None) -> SolveReport:
        kw = {} if max_iter is None else {"max_sweeps": max_iter}
        return adi_laplace_solve(self.grid_size, self.boundary_field(z), tol, x0=x0, **kw)

    def solve_adjoint(self, z, rhs, tol, x0=None, max_iter=None) -> SolveReport:
        kw = {} if max_iter is None else {"max_sweeps": max_iter}
        return adi_laplace_transpose_solve(self.grid_size, rhs, tol, x0=x0, **kw)

    def analytic_solution(self, z, x, y, terms: int = 200):
        return laplace_analytic_solution(z, x, y, terms=terms)
