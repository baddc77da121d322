"""Problem-construction tests: closed-form oracles, FD checks, references."""

import numpy as np
import pytest

from decopt.problems import (
    LAPLACE_Z_REF,
    LAPLACE_Z_START,
    ODE_Z_REF,
    ODE_Z_START,
    LaplaceBoundaryControlProblem,
    OdeBoundaryValueProblem,
    ReferenceData,
    build_laplace_matrix,
    build_laplace_rhs,
    build_ode_system,
    fourier_boundary_coefficients,
    generate_laplace_reference,
    generate_ode_reference,
    laplace_analytic_solution,
    load_reference,
    ode_analytic_solution,
    save_reference,
)


def tridiag_dense(sys):
    return np.diag(sys.diag) + np.diag(sys.lower, -1) + np.diag(sys.upper, 1)


class TestOdeSystem:
    def test_frozen_stencil_values(self):
        # M=3, dx=1/4: a = 16 z0 - 2 z1 = 22, b = -32 z0 + z2 = -36, c = 16 z0 + 2 z1 = 10
        sys, rhs = build_ode_system(ODE_Z_REF, 3)
        assert sys.lower[0] == 22.0
        assert sys.diag[1] == -36.0
        assert sys.upper[1] == 10.0
        assert sys.diag[0] == 1.0 and sys.diag[-1] == 1.0
        assert rhs[0] == ODE_Z_REF[6] and rhs[-1] == ODE_Z_REF[7]
        x = np.array([0.25, 0.5, 0.75])
        assert np.allclose(rhs[1:-1], 1.0 + x + 5.0 * x**2, atol=1e-14)

    def test_strict_dominance_on_admissible_controls(self):
        p = OdeBoundaryValueProblem(16)
        for z in (ODE_Z_REF, ODE_Z_START):
            assert p.admissible(z)
            assert p.system(z).is_strictly_dominant()

    def test_admissibility_boundary(self):
        p = OdeBoundaryValueProblem(16)
        bad_sign = ODE_Z_REF.copy()
        bad_sign[2] = 0.5
        assert not p.admissible(bad_sign)
        weak_diffusion = ODE_Z_REF.copy()
        weak_diffusion[0] = 0.01  # below |z1| / (2 (M+1)) = 3/34
        assert not p.admissible(weak_diffusion)

    def test_control_jacobian_matches_fd(self):
        # R is affine in z at fixed y, so central differences are exact
        p = OdeBoundaryValueProblem(12)
        rng = np.random.default_rng(2)
        z = ODE_Z_START + 0.1 * rng.standard_normal(8)
        y = rng.standard_normal(p.n)
        jac = p.partial_residual_wrt_control(z, y)
        step = 1e-6
        for i in range(8):
            dz = np.zeros(8)
            dz[i] = step
            col = (p.residual(z + dz, y) - p.residual(z - dz, y)) / (2 * step)
            assert np.abs(col - jac[:, i]).max() <= 1e-7 * (1 + np.abs(jac[:, i]).max())

    def test_objective_partials_match_fd(self):
        p = OdeBoundaryValueProblem(12)
        rng = np.random.default_rng(3)
        z = ODE_Z_START.copy()
        y = rng.standard_normal(p.n)
        d_z, d_y = p.objective_partials(z, y)
        step = 1e-7
        for i in range(8):
            dz = np.zeros(8)
            dz[i] = step
            fd = (p.objective(z + dz, y) - p.objective(z - dz, y)) / (2 * step)
            assert abs(fd - d_z[i]) <= 1e-6 * (1 + abs(d_z[i]))
        for i in rng.choice(p.n, 6, replace=False):
            dy = np.zeros(p.n)
            dy[i] = step
            fd = (p.objective(z, y + dy) - p.objective(z, y - dy)) / (2 * step)
            assert abs(fd - d_y[i]) <= 1e-6 * (1 + abs(d_y[i]))


class TestOdeAnalytic:
    def test_boundary_values(self):
        for z in (ODE_Z_REF, np.array([1.2, -2.0, -3.0, 0.5, 1.5, -2.0, 0.7, -0.3])):
            assert ode_analytic_solution(z, 0.0) == pytest.approx(z[6], abs=1e-12)
            assert ode_analytic_solution(z, 1.0) == pytest.approx(z[7], abs=1e-12)

    def test_satisfies_ode_pointwise(self):
        # independent check: numerical derivatives of the closed form
        z = ODE_Z_REF
        x = np.linspace(0.05, 0.95, 19)
        h = 1e-5
        u = ode_analytic_solution(z, x)
        up = (ode_analytic_solution(z, x + h) - ode_analytic_solution(z, x - h)) / (2 * h)
        upp = (ode_analytic_solution(z, x + h) - 2 * u + ode_analytic_solution(z, x - h)) / h**2
        res = z[0] * upp + z[1] * up + z[2] * u - (z[3] + z[4] * x + z[5] * x**2)
        assert np.abs(res).max() <= 1e-4

    def test_discrete_solution_converges_quadratically(self):
        errs = []
        for m in (16, 32, 64):
            p = OdeBoundaryValueProblem(m)
            y = p.solve_state_direct(ODE_Z_REF)
            errs.append(np.abs(y - ode_analytic_solution(ODE_Z_REF, p.grid)).max())
        assert 3.0 <= errs[0] / errs[1] <= 5.0
        assert 3.0 <= errs[1] / errs[2] <= 5.0

    def test_rejects_degenerate_coefficients(self):
        with pytest.raises(ValueError):
            ode_analytic_solution(np.array([1.0, 0.0, 0.0, 1, 1, 1, 0, 0]), 0.5)
        with pytest.raises(ValueError):
            ode_analytic_solution(np.array([1.0, 0.0, 4.0, 1, 1, 1, 0, 0]), 0.5)


class TestOdeReference:
    def test_snapped_indices_frozen(self):
        ref = generate_ode_reference(16)
        assert ref.sample_indices.tolist() == [0, 2, 3, 5, 6, 8, 9, 11, 12, 14, 15, 17]
        dx = 1.0 / 17
        expect = ode_analytic_solution(ODE_Z_REF, ref.sample_indices * dx)
        assert np.array_equal(ref.reference_values, expect)
        assert ref.alpha == 1.0

    def test_too_coarse_grid_rejected(self):
        with pytest.raises(ValueError):
            generate_ode_reference(8, n_targets=12)

    def test_discrete_consistent_variant_interpolates(self):
        ref = generate_ode_reference(16, values_from="discrete")
        p = OdeBoundaryValueProblem(16, data=ref)
        y = p.solve_state_direct(ODE_Z_REF)
        assert np.array_equal(y[ref.sample_indices], ref.reference_values)

    def test_misfit_is_discretization_error(self):
        # per-sample RMS mismatch against the continuum solution is O(dx^2);
        # the summed misfit then falls even faster, so check the RMS slope
        rms = []
        for m in (16, 32, 64):
            p = OdeBoundaryValueProblem(m, alpha=0.0)
            y = p.solve_state_direct(ODE_Z_REF)
            rms.append(np.sqrt(p.objective(ODE_Z_REF, y) / p.n_samples))
        slopes = np.diff(np.log(rms)) / np.log(2.0)
        assert np.all(slopes < 0)
        assert np.all((-2.4 <= slopes) & (slopes <= -1.6))

    def test_objective_decreases_under_refinement(self):
        vals = []
        for m in (16, 32, 64):
            p = OdeBoundaryValueProblem(m)
            vals.append(p.objective(ODE_Z_REF, p.solve_state_direct(ODE_Z_REF)))
        assert vals[0] > vals[1] > vals[2]


class TestOdeSolves:
    def test_iterative_state_matches_direct(self):
        p = OdeBoundaryValueProblem(24)
        rep = p.solve_state(ODE_Z_START, 1e-10)
        assert rep.converged
        y = p.solve_state_direct(ODE_Z_START)
        assert np.abs(rep.solution - y).max() <= 1e-9

    def test_adjoint_solve_honest_residual(self):
        p = OdeBoundaryValueProblem(24)
        rng = np.random.default_rng(5)
        rhs = rng.standard_normal(p.n)
        tol = 1e-10
        rep = p.solve_adjoint(ODE_Z_START, rhs, tol)
        assert rep.converged
        at = tridiag_dense(p.system(ODE_Z_START)).T
        assert np.linalg.norm(rhs - at @ rep.solution) <= 1.01 * tol

    def test_default_step_frozen(self):
        p = OdeBoundaryValueProblem(16)
        assert p.default_step == pytest.approx(1.15 / 12, rel=1e-15)


class TestLaplaceSystem:
    def test_matrix_is_control_independent(self):
        p = LaplaceBoundaryControlProblem(8)
        rng = np.random.default_rng(7)
        a1 = p.system(LAPLACE_Z_REF)
        a2 = p.system(rng.standard_normal(3))
        x = rng.standard_normal(p.n)
        assert np.array_equal(a1.matvec(x), a2.matvec(x))

    def test_frozen_rhs_small_grid(self):
        # M=2, h=1/3, z_ref: right edge carries f(y) = y - y^2
        rhs = build_laplace_rhs(LAPLACE_Z_REF, 2)
        assert rhs.shape == (16,)
        assert np.all(rhs[:12] == 0.0)
        assert np.allclose(rhs[12:], [0.0, 2.0 / 9.0, 2.0 / 9.0, 0.0], atol=1e-15)

    def test_interior_row_structure(self):
        m = 4
        a = build_laplace_matrix(m)
        dense = a.csr.toarray()
        w = m + 2
        i = 2 * w + 3  # interior node (2, 3)
        row = dense[i]
        assert row[i] == -4.0
        assert row[i - 1] == row[i + 1] == row[i - w] == row[i + w] == 1.0
        assert np.count_nonzero(row) == 5
        k = 0 * w + 3  # boundary node
        assert dense[k, k] == 1.0 and np.count_nonzero(dense[k]) == 1

    def test_control_jacobian_matches_fd(self):
        p = LaplaceBoundaryControlProblem(6)
        rng = np.random.default_rng(11)
        z = LAPLACE_Z_START + 0.2 * rng.standard_normal(3)
        y = rng.standard_normal(p.n)
        jac = p.partial_residual_wrt_control(z, y)
        step = 1e-6
        for i in range(3):
            dz = np.zeros(3)
            dz[i] = step
            col = (p.residual(z + dz, y) - p.residual(z - dz, y)) / (2 * step)
            assert np.abs(col - jac[:, i]).max() <= 1e-9


class TestLaplaceAnalytic:
    def test_fourier_coefficients_frozen_reference_control(self):
        c = fourier_boundary_coefficients(LAPLACE_Z_REF, 5)
        assert c[0] == pytest.approx(0.25801227546559596, abs=1e-15)
        assert c[1] == 0.0 and c[3] == 0.0
        assert c[2] == pytest.approx(8.0 / (3.0 * np.pi) ** 3, rel=1e-12)

    def test_fourier_coefficients_match_quadrature(self):
        from scipy.integrate import quad

        z = np.array([0.3, -0.2, 0.7])
        c = fourier_boundary_coefficients(z, 8)
        for n in range(1, 9):
            val, _ = quad(
                lambda y: (z[0] + z[1] * y + z[2] * y**2) * np.sin(n * np.pi * y), 0, 1
            )
            assert c[n - 1] == pytest.approx(2 * val, abs=1e-12)

    def test_edges(self):
        ys = np.linspace(0, 1, 31)
        u_left = laplace_analytic_solution(LAPLACE_Z_REF, 0.0, ys)
        assert np.abs(u_left).max() == 0.0
        u_bottom = laplace_analytic_solution(LAPLACE_Z_REF, ys, 0.0)
        assert np.abs(u_bottom).max() <= 1e-12
        # right edge reproduces f(y) up to the series tail
        u_right = laplace_analytic_solution(LAPLACE_Z_REF, 1.0, ys, terms=400)
        assert np.abs(u_right - (ys - ys**2)).max() <= 1e-6

    def test_discretely_harmonic_to_truncation(self):
        m = 24
        h = 1.0 / (m + 1)
        jj, kk = np.meshgrid(np.arange(m + 2), np.arange(m + 2), indexing="ij")
        u = laplace_analytic_solution(LAPLACE_Z_REF, jj * h, kk * h)
        r = u[:-2, 1:-1] + u[2:, 1:-1] + u[1:-1, :-2] + u[1:-1, 2:] - 4 * u[1:-1, 1:-1]
        assert np.abs(r).max() <= 1.0 * h**2

    def test_discrete_solution_converges_quadratically(self):
        errs = []
        for m in (8, 16, 32):
            p = LaplaceBoundaryControlProblem(m)
            u = p.solve_state_direct(LAPLACE_Z_REF).reshape(m + 2, m + 2)
            h = 1.0 / (m + 1)
            jj, kk = np.meshgrid(np.arange(m + 2), np.arange(m + 2), indexing="ij")
            ua = laplace_analytic_solution(LAPLACE_Z_REF, jj * h, kk * h)
            errs.append(np.abs(u - ua).max())
        assert 3.0 <= errs[0] / errs[1] <= 5.0
        assert 3.0 <= errs[1] / errs[2] <= 5.0


class TestLaplaceReference:
    def test_sample_counts_frozen(self):
        assert len(generate_laplace_reference(16, 0).sample_indices) == 70
        assert len(generate_laplace_reference(64, 0).sample_indices) == 262

    def test_samples_interior_and_unique(self):
        ref = generate_laplace_reference(16, 99)
        w = 18
        j, k = ref.sample_indices // w, ref.sample_indices % w
        assert np.all((1 <= j) & (j <= 16) & (1 <= k) & (k <= 16))
        assert len(np.unique(ref.sample_indices)) == len(ref.sample_indices)

    def test_deterministic_per_seed(self):
        a = generate_laplace_reference(16, 5)
        b = generate_laplace_reference(16, 5)
        c = generate_laplace_reference(16, 6)
        assert np.array_equal(a.sample_indices, b.sample_indices)
        assert np.array_equal(a.reference_values, b.reference_values)
        assert not np.array_equal(a.sample_indices, c.sample_indices)

    def test_too_coarse_grid_rejected(self):
        with pytest.raises(ValueError):
            generate_laplace_reference(5, 0)  # n_s = 26 > 25 nodes

    def test_discrete_consistent_variant_interpolates(self):
        ref = generate_laplace_reference(12, 3, values_from="discrete")
        p = LaplaceBoundaryControlProblem(12, data=ref)
        u = p.solve_state_direct(LAPLACE_Z_REF)
        assert np.array_equal(u[ref.sample_indices], ref.reference_values)

    def test_misfit_is_discretization_error(self):
        rms = []
        for m in (16, 32, 64):
            p = LaplaceBoundaryControlProblem(m, seed=1234)
            u = p.solve_state_direct(LAPLACE_Z_REF)
            rms.append(np.sqrt(p.objective(LAPLACE_Z_REF, u) / p.n_samples))
        slopes = np.diff(np.log(rms)) / np.log(2.0)
        assert np.all(slopes < 0)
        assert np.all((-2.4 <= slopes) & (slopes <= -1.6))

    def test_default_step_frozen(self):
        p = LaplaceBoundaryControlProblem(64)
        assert p.default_step == pytest.approx(3.5 / 260.0, rel=1e-15)


class TestLaplaceSolves:
    def test_adi_state_matches_direct(self):
        p = LaplaceBoundaryControlProblem(16)
        rep = p.solve_state(LAPLACE_Z_START, 1e-10)
        assert rep.converged
        u = p.solve_state_direct(LAPLACE_Z_START)
        assert np.abs(rep.solution - u).max() <= 1e-8

    def test_gmres_adjoint_matches_direct_and_honest(self):
        p = LaplaceBoundaryControlProblem(16)
        u = p.solve_state_direct(LAPLACE_Z_START)
        rhs = p.objective_partials(LAPLACE_Z_START, u)[1]
        tol = 1e-10
        rep = p.solve_adjoint(LAPLACE_Z_START, rhs, tol)
        assert rep.converged
        psi = p.solve_adjoint_direct(LAPLACE_Z_START, rhs)
        assert np.abs(rep.solution - psi).max() <= 1e-8
        at = p.matrix().csr.T
        assert np.linalg.norm(rhs - at @ rep.solution) <= 1.01 * tol


class TestReferenceIO:
    def test_round_trip_bitwise(self, tmp_path):
        ref = generate_laplace_reference(8, 42)
        path = tmp_path / "ref.txt"
        save_reference(ref, path)
        back = load_reference(path)
        assert np.array_equal(back.sample_indices, ref.sample_indices)
        assert np.array_equal(back.reference_values, ref.reference_values)
        assert np.array_equal(back.z_ref, ref.z_ref)
        assert back.alpha == ref.alpha

    def test_duplicate_indices_rejected(self):
        with pytest.raises(ValueError):
            ReferenceData(np.array([1, 1]), np.array([0.0, 1.0]), np.zeros(3))
