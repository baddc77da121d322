"""Tests for the synthetic functions, noisy oracles, and inequality sweeps."""

import numpy as np
import pytest

from decopt.theory import (
    ConvexQuadratic,
    DescentInterval,
    NoisyOracle,
    QuarticBowl,
    ScaledRosenbrock,
    descent_interval,
    relative_noisy_gradient,
    verify_descent_inequality,
    verify_diminishing_convergence,
    verify_inexact_upper_bound,
)

EIGS = [2.2, 2.5, 2.8, 3.0, 3.3]


def make_quad():
    return ConvexQuadratic(EIGS, seed=11)


def make_bowl():
    return QuarticBowl(EIGS, quartic_weight=0.1, radius=3.0, seed=7)


def central_difference(fn, z, h=1e-6):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        out[i] = (fn.evaluate(z + e) - fn.evaluate(z - e)) / (2 * h)
    return out


class TestFunctions:
    @pytest.mark.parametrize("maker", [make_quad, make_bowl, ScaledRosenbrock])
    def test_gradient_matches_central_differences(self, maker):
        fn = maker()
        rng = np.random.default_rng(3)
        for _ in range(50):
            z = fn.clip(fn.sample(rng))
            g = fn.gradient(z)
            fd = central_difference(fn, z)
            assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))

    @pytest.mark.parametrize("maker", [make_quad, make_bowl, ScaledRosenbrock])
    def test_gradient_change_bounded_by_L(self, maker):
        fn = maker()
        rng = np.random.default_rng(5)
        for _ in range(300):
            z = fn.clip(fn.sample(rng))
            x = fn.clip(fn.sample(rng))
            dx = np.linalg.norm(x - z)
            if dx == 0.0:
                continue
            dg = np.linalg.norm(fn.gradient(x) - fn.gradient(z))
            assert dg <= fn.lipschitz_L * dx * (1 + 1e-9)

    @pytest.mark.parametrize("maker", [make_quad, make_bowl, ScaledRosenbrock])
    def test_bounded_below(self, maker):
        fn = maker()
        rng = np.random.default_rng(7)
        for _ in range(100):
            z = fn.clip(fn.sample(rng))
            assert fn.evaluate(z) >= fn.lower_bound

    def test_quadratic_spectrum_and_L(self):
        fn = make_quad()
        lam = np.sort(np.linalg.eigvalsh(fn.matrix))
        assert lam == pytest.approx(sorted(EIGS), rel=1e-12)
        assert fn.lipschitz_L == 3.3
        assert fn.strong_convexity == 2.2
        assert fn.evaluate(np.zeros(5)) == 0.0

    def test_quadratic_validation(self):
        with pytest.raises(ValueError):
            ConvexQuadratic([1.0, -2.0])
        with pytest.raises(ValueError):
            ConvexQuadratic([])

    def test_bowl_constant_and_clip(self):
        fn = make_bowl()
        assert fn.lipschitz_L == pytest.approx(3.3 + 3 * 0.1 * 9.0, rel=1e-12)
        far = np.full(5, 10.0)
        clipped = fn.clip(far)
        assert np.linalg.norm(clipped) == pytest.approx(fn.radius, rel=1e-12)
        inside = np.full(5, 0.1)
        assert np.array_equal(fn.clip(inside), inside)
        with pytest.raises(ValueError):
            QuarticBowl(EIGS, quartic_weight=0.0)
        with pytest.raises(ValueError):
            QuarticBowl(EIGS, radius=-1.0)

    def test_rosenbrock_certificate_and_clip(self):
        fn = ScaledRosenbrock()
        # hand spectral norm at the worst corner of the default box
        h11 = fn.scale * (2.0 - 400.0 * (-1.0) + 1200.0 * 4.0)
        h12 = fn.scale * (-400.0 * 2.0)
        h22 = fn.scale * 200.0
        mean = 0.5 * (h11 + h22)
        rad = np.sqrt(0.25 * (h11 - h22) ** 2 + h12 * h12)
        assert fn.lipschitz_L >= mean + rad
        assert fn.gradient([1.0, 1.0]) == pytest.approx([0.0, 0.0], abs=1e-15)
        assert fn.evaluate([1.0, 1.0]) == 0.0
        z = fn.clip([5.0, -5.0])
        assert z[0] == fn.x_hi and z[1] == fn.y_lo
        with pytest.raises(ValueError):
            ScaledRosenbrock(scale=0.0)
        with pytest.raises(ValueError):
            ScaledRosenbrock(box=((2.0, 3.0), (-1.0, 3.0)))


class TestNoisyOracle:
    def test_relative_bound_many_draws(self):
        fn = make_quad()
        orc = NoisyOracle(fn, beta=0.3, seed=1)
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            z = fn.sample(rng)
            g = fn.gradient(z)
            g_bar = relative_noisy_gradient(orc, z, 0.3)
            assert np.linalg.norm(g_bar - g) <= 0.3 * np.linalg.norm(g_bar) * (1 + 1e-12)

    def test_zero_beta_is_exact(self):
        fn = make_quad()
        orc = NoisyOracle(fn, beta=0.0, seed=1)
        z = np.ones(5)
        g_bar, err = orc.noisy_gradient(z)
        assert np.array_equal(g_bar, fn.gradient(z))
        assert err == 0.0

    def test_zero_gradient_stays_zero(self):
        fn = make_quad()
        orc = NoisyOracle(fn, beta=0.3, seed=1)
        g_bar, err = orc.noisy_gradient(np.zeros(5))
        assert np.array_equal(g_bar, np.zeros(5))
        assert err == 0.0

    def test_absolute_mode_bound_decays(self):
        fn = make_quad()
        orc = NoisyOracle(fn, delta0=0.5, seed=3)
        z = np.ones(5)
        for k in (0, 1, 5, 30):
            g_bar, err = orc.noisy_gradient(z, k=k)
            bound = 0.5 / (k + 1) ** 2
            assert err <= bound
            assert np.linalg.norm(g_bar - fn.gradient(z)) == pytest.approx(err, rel=1e-12)
        assert orc.delta_at(4) == 0.5 / 25.0

    def test_zero_delta0_is_exact(self):
        fn = make_quad()
        orc = NoisyOracle(fn, delta0=0.0, seed=3)
        g_bar, err = orc.noisy_gradient(np.ones(5), k=0)
        assert np.array_equal(g_bar, fn.gradient(np.ones(5)))
        assert err == 0.0

    def test_same_seed_reproduces(self):
        fn = make_quad()
        a = NoisyOracle(fn, beta=0.2, seed=9)
        b = NoisyOracle(fn, beta=0.2, seed=9)
        z = np.arange(5.0)
        for _ in range(10):
            ga, _ = a.noisy_gradient(z)
            gb, _ = b.noisy_gradient(z)
            assert np.array_equal(ga, gb)

    def test_mode_validation(self):
        fn = make_quad()
        with pytest.raises(ValueError):
            NoisyOracle(fn)
        with pytest.raises(ValueError):
            NoisyOracle(fn, beta=0.1, delta0=0.1)
        with pytest.raises(ValueError):
            NoisyOracle(fn, beta=1.0)
        with pytest.raises(ValueError):
            NoisyOracle(fn, beta=-0.1)
        with pytest.raises(ValueError):
            NoisyOracle(fn, delta0=-1.0)
        assert NoisyOracle(fn, beta=0.1).mode == "relative"
        assert NoisyOracle(fn, delta0=1.0).mode == "absolute"
        with pytest.raises(ValueError):
            NoisyOracle(fn, beta=0.1).delta_at(0)
        with pytest.raises(ValueError):
            relative_noisy_gradient(NoisyOracle(fn, beta=0.1), np.ones(5), 1.5)


class TestDescentInterval:
    def test_frozen_example(self):
        iv = descent_interval(1.0, 1.0, 1.0, 0.5)
        assert iv.discriminant == pytest.approx(0.5, rel=1e-15)
        assert iv.t_lower == pytest.approx(0.1464466094067262, rel=1e-12)
        assert iv.t_upper == pytest.approx(0.8535533905932737, rel=1e-12)

    def test_zero_error_endpoints_exact(self):
        iv = descent_interval(1.3, 1.7, 4.0, 0.0)
        assert iv.t_lower == 0.0
        assert iv.t_upper == 2 * 1.3 / (1.7**2 * 5.0)

    def test_interval_collapses_near_limit(self):
        c1p, c2p, L = 1.0, 1.0, 1.0
        limit = c1p / (np.sqrt(L + 1.0) * c2p)
        iv = descent_interval(c1p, c2p, L, limit * (1 - 1e-8))
        mid = c1p / (c2p**2 * (L + 1.0))
        assert iv.width < 1e-3
        assert iv.t_lower == pytest.approx(mid, rel=1e-3)
        assert iv.t_upper == pytest.approx(mid, rel=1e-3)

    def test_empty_interval_rejected(self):
        limit = 1.0 / np.sqrt(2.0)
        with pytest.raises(ValueError):
            descent_interval(1.0, 1.0, 1.0, limit)
        with pytest.raises(ValueError):
            descent_interval(1.0, 1.0, 1.0, limit * 1.5)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            descent_interval(0.0, 1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            descent_interval(1.0, -1.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            descent_interval(1.0, 1.0, -1.0, 0.1)
        with pytest.raises(ValueError):
            descent_interval(1.0, 1.0, 1.0, -0.1)

    def test_ordering_over_random_tuples(self):
        rng = np.random.default_rng(101)
        for _ in range(1000):
            c1p = rng.uniform(0.05, 2.0)
            c2p = c1p * rng.uniform(1.0, 3.0)
            L = rng.uniform(0.1, 50.0)
            bound = c1p / (np.sqrt(L + 1.0) * c2p)
            beta = rng.uniform(0.05, 0.95) * bound
            iv = descent_interval(c1p, c2p, L, beta)
            cap = 2 * c1p / (c2p**2 * (L + 1.0))
            assert 0.0 <= iv.t_lower < iv.t_upper <= cap
            assert iv.discriminant > 0.0

    def test_width_strictly_decreasing_in_error(self):
        c1p, c2p, L = 1.0, 1.5, 2.0
        bound = c1p / (np.sqrt(L + 1.0) * c2p)
        widths = [descent_interval(c1p, c2p, L, b).width
                  for b in np.linspace(0.0, 0.95 * bound, 50)]
        assert all(b < a for a, b in zip(widths, widths[1:]))

    def test_guaranteed_decrease_vertex_and_endpoints(self):
        iv = descent_interval(1.0, 1.0, 1.0, 0.5)
        mid = 0.5 * (iv.t_lower + iv.t_upper)
        vertex = iv.c2p**2 * (iv.l_prime / 2) * (0.5 * iv.width) ** 2
        assert iv.guaranteed_decrease(mid, 1.0) == pytest.approx(vertex, rel=1e-12)
        assert iv.guaranteed_decrease(iv.t_lower, 1.0) == 0.0
        assert iv.guaranteed_decrease(iv.t_upper, 1.0) == 0.0
        grid = np.linspace(iv.t_lower, iv.t_upper, 31)
        vals = [iv.guaranteed_decrease(t, 1.0) for t in grid]
        assert max(vals) <= vertex * (1 + 1e-12)

    def test_safe_step_range(self):
        iv = descent_interval(1.0, 1.0, 3.3, 0.1)
        lo, hi = iv.safe_step_range()
        assert iv.t_lower < lo < hi < iv.t_upper
        assert (lo - iv.t_lower) == pytest.approx(0.25 * iv.width, rel=1e-12)
        assert (iv.t_upper - hi) == pytest.approx(0.25 * iv.width, rel=1e-12)
        with pytest.raises(ValueError):
            iv.safe_step_range(margin=0.0)
        with pytest.raises(ValueError):
            iv.safe_step_range(margin=0.6 * iv.width)
        assert "DescentInterval" in repr(iv)


class TestUpperBoundSweep:
    @pytest.mark.parametrize("beta", [0.0, 0.1, 0.3])
    def test_quadratic_zero_violations(self, beta):
        fn = make_quad()
        rep = verify_inexact_upper_bound(fn, NoisyOracle(fn, beta=beta, seed=5),
                                         trials=2000, seed=17)
        assert rep.passed
        assert rep.trials == 2000
        assert rep.details["worst_margin"] >= 0.0

    def test_bowl_and_rosenbrock_zero_violations(self):
        for fn in (make_bowl(), ScaledRosenbrock()):
            rep = verify_inexact_upper_bound(fn, NoisyOracle(fn, beta=0.3, seed=5),
                                             trials=2000, seed=19)
            assert rep.passed

    def test_absolute_oracle_also_accepted(self):
        fn = make_quad()
        rep = verify_inexact_upper_bound(fn, NoisyOracle(fn, delta0=0.3, seed=5),
                                         trials=500, seed=21)
        assert rep.passed

    def test_trials_validation_and_report_text(self):
        fn = make_quad()
        with pytest.raises(ValueError):
            verify_inexact_upper_bound(fn, NoisyOracle(fn, beta=0.1), trials=0)
        rep = verify_inexact_upper_bound(fn, NoisyOracle(fn, beta=0.1, seed=1),
                                         trials=10, seed=1)
        text = str(rep)
        assert "pass" in text and "10 trials" in text


class TestDescentSweep:
    def test_quadratic_including_exact_endpoints(self):
        fn = make_quad()
        iv = descent_interval(1.0, 1.0, fn.lipschitz_L, 0.3)
        mid = 0.5 * (iv.t_lower + iv.t_upper)
        rep = verify_descent_inequality(fn, NoisyOracle(fn, beta=0.3, seed=9),
                                        1.0, 1.0, [iv.t_lower, mid, iv.t_upper],
                                        iterations=500, seed=23)
        assert rep.passed
        assert rep.details["monotone"]
        assert rep.details["clipped"] == 0
        assert rep.trials == 1500

    def test_bowl_sweep(self):
        fn = make_bowl()
        iv = descent_interval(1.0, 1.0, fn.lipschitz_L, 0.3)
        mid = 0.5 * (iv.t_lower + iv.t_upper)
        rep = verify_descent_inequality(fn, NoisyOracle(fn, beta=0.3, seed=9),
                                        1.0, 1.0, [mid], iterations=500, seed=25)
        assert rep.passed
        assert rep.details["monotone"]

    def test_step_outside_interval_rejected(self):
        fn = make_quad()
        iv = descent_interval(1.0, 1.0, fn.lipschitz_L, 0.3)
        orc = NoisyOracle(fn, beta=0.3, seed=9)
        with pytest.raises(ValueError):
            verify_descent_inequality(fn, orc, 1.0, 1.0, [iv.t_upper * 1.01])
        with pytest.raises(ValueError):
            verify_descent_inequality(fn, orc, 1.0, 1.0, [iv.t_lower * 0.5])

    def test_steepest_descent_constant_validation(self):
        fn = make_quad()
        orc = NoisyOracle(fn, beta=0.1, seed=9)
        with pytest.raises(ValueError):
            verify_descent_inequality(fn, orc, 1.2, 1.5, [0.1])
        with pytest.raises(ValueError):
            verify_descent_inequality(fn, orc, 0.5, 0.9, [0.1])

    def test_requires_relative_oracle(self):
        fn = make_quad()
        with pytest.raises(ValueError):
            verify_descent_inequality(fn, NoisyOracle(fn, delta0=0.1), 1.0, 1.0, [0.1])

    def test_safe_range_run_reaches_tiny_exact_gradient(self):
        # fixed step from the margin-shrunk range, noisy direction, exact
        # objective monotone and exact gradient far below 1e-6 by 500 steps
        fn = make_quad()
        iv = descent_interval(1.0, 1.0, fn.lipschitz_L, 0.1)
        lo, hi = iv.safe_step_range()
        orc = NoisyOracle(fn, beta=0.1, seed=4)
        rng = np.random.default_rng(8)
        z = fn.sample(rng)
        f_prev = fn.evaluate(z)
        for _ in range(500):
            g_bar, _ = orc.noisy_gradient(z)
            z = z - 0.5 * (lo + hi) * g_bar
            f_now = fn.evaluate(z)
            assert f_now <= f_prev + 1e-12
            f_prev = f_now
        assert np.linalg.norm(fn.gradient(z)) < 1e-6


class TestDiminishingRuns:
    def test_exact_quadratic_reaches_1e6(self):
        fn = make_quad()
        rep = verify_diminishing_convergence(fn, NoisyOracle(fn, delta0=0.0, seed=13),
                                             t0=1.0, seed=29)
        assert rep.passed
        assert rep.details["min_grad_norm"] < 1e-6

    @pytest.mark.parametrize("maker,t0", [(make_quad, 1.0), (make_bowl, 1.0),
                                          (ScaledRosenbrock, 1.8)])
    def test_noisy_runs_meet_thresholds(self, maker, t0):
        fn = maker()
        rep = verify_diminishing_convergence(fn, NoisyOracle(fn, delta0=0.1, seed=13),
                                             t0=t0, seed=29)
        assert rep.passed
        assert rep.details["min_grad_norm"] < 1e-3
        assert rep.details["tail_mean"] < 1e-2

    def test_validation(self):
        fn = make_quad()
        abs_orc = NoisyOracle(fn, delta0=0.1, seed=13)
        with pytest.raises(ValueError):
            verify_diminishing_convergence(fn, abs_orc, t0=0.0)
        with pytest.raises(ValueError):
            verify_diminishing_convergence(fn, abs_orc, t0=-1.0)
        with pytest.raises(ValueError):
            verify_diminishing_convergence(fn, NoisyOracle(fn, beta=0.1), t0=1.0)
        with pytest.raises(ValueError):
            verify_diminishing_convergence(fn, abs_orc, t0=1.0, horizon=5)

    def test_report_counts_failures(self):
        # a hopeless threshold must be reported as a violation, not hidden
        fn = make_quad()
        rep = verify_diminishing_convergence(fn, NoisyOracle(fn, delta0=0.1, seed=13),
                                             t0=1.0, seed=29, min_threshold=1e-300)
        assert not rep.passed
        assert "FAIL" in str(rep)
