"""Synthetic smooth functions, noisy gradient oracles, and numerical
checks of the descent inequalities that justify the inexact method.

Everything here exists to make the convergence guarantees testable:
each test function knows its own smoothness constant, the oracles
produce gradient errors with a certified bound, and the verify_*
functions sweep the corresponding inequality over many samples and
count violations (a correct implementation reports zero).

Limit statements are checked through finite-horizon proxies; the
horizons and thresholds are test parameters, not claims.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ConvexQuadratic",
    "QuarticBowl",
    "ScaledRosenbrock",
    "NoisyOracle",
    "DescentInterval",
    "VerificationReport",
    "descent_interval",
    "relative_noisy_gradient",
    "verify_inexact_upper_bound",
    "verify_descent_inequality",
    "verify_diminishing_convergence",
    "standard_test_functions",
    "verification_battery",
]


# ---------------------------------------------------------------------------
# test functions with known smoothness constants


class ConvexQuadratic:
    """0.5 z^T Q z with a prescribed positive spectrum.

    Q is diag(eigenvalues) conjugated by a seeded random rotation, so the
    spectrum (and hence the smoothness constant) is exact by construction.
    """

    def __init__(self, eigenvalues, seed: int = 0):
        lam = np.asarray(eigenvalues, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a nonempty 1-d sequence")
        if np.any(lam <= 0):
            raise ValueError("eigenvalues must be positive")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((lam.size, lam.size)))
        self.matrix = (q * lam) @ q.T
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        self.eigenvalues = np.sort(lam)
        self.lipschitz_L = float(lam.max())
        self.strong_convexity = float(lam.min())
        self.lower_bound = 0.0
        self.dim = lam.size

    def evaluate(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        return 0.5 * float(z @ self.matrix @ z)

    def gradient(self, z) -> np.ndarray:
        return self.matrix @ np.asarray(z, dtype=np.float64)

    def sample(self, rng, scale: float = 2.0) -> np.ndarray:
        return scale * rng.standard_normal(self.dim)

    def clip(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64)


class QuarticBowl:
    """0.5 z^T Q z + (w/4)||z||^4 restricted to the ball ||z|| <= radius.

    The Hessian is Q + w(||z||^2 I + 2 z z^T), so on the stated ball the
    gradient is Lipschitz with L = max eig(Q) + 3 w radius^2. Iterates
    must be kept inside the ball (clip) for the constant to apply.
    """

    def __init__(self, eigenvalues, quartic_weight: float = 0.1,
                 radius: float = 3.0, seed: int = 0):
        if quartic_weight <= 0 or radius <= 0:
            raise ValueError("quartic_weight and radius must be positive")
        base = ConvexQuadratic(eigenvalues, seed=seed)
        self.matrix = base.matrix
        self.quartic_weight = float(quartic_weight)
        self.radius = float(radius)
        self.lipschitz_L = base.lipschitz_L + 3.0 * quartic_weight * radius**2
        self.lower_bound = 0.0
        self.dim = base.dim

    def evaluate(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        zz = float(z @ z)
        return 0.5 * float(z @ self.matrix @ z) + 0.25 * self.quartic_weight * zz * zz

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return self.matrix @ z + self.quartic_weight * float(z @ z) * z

    def sample(self, rng) -> np.ndarray:
        z = rng.standard_normal(self.dim)
        r = rng.uniform(0.0, 0.8 * self.radius)
        return z * (r / np.linalg.norm(z))

    def clip(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        n = float(np.linalg.norm(z))
        if n <= self.radius:
            return z
        return z * (self.radius / n)


class ScaledRosenbrock:
    """scale * [100 (y - x^2)^2 + (1 - x)^2] on a box, certified L.

    The smoothness constant is certified numerically: the closed-form
    2x2 Hessian spectral norm is maximized over a fine grid covering the
    box and inflated by a small safety factor. Iterates must stay in the
    box (clip) for the constant to apply. The scale keeps gradient
    magnitudes comparable with the other test functions.
    """

    def __init__(self, scale: float = 1e-3,
                 box=((-2.0, 2.0), (-1.0, 3.0)), grid: int = 201):
        if scale <= 0:
            raise ValueError("scale must be positive")
        (self.x_lo, self.x_hi), (self.y_lo, self.y_hi) = box
        if not (self.x_lo < 1.0 < self.x_hi and self.y_lo < 1.0 < self.y_hi):
            raise ValueError("the box must contain the minimizer (1, 1)")
        self.scale = float(scale)
        self.dim = 2
        self.lower_bound = 0.0
        x = np.linspace(self.x_lo, self.x_hi, grid)
        y = np.linspace(self.y_lo, self.y_hi, grid)
        xx, yy = np.meshgrid(x, y, indexing="ij")
        # symmetric 2x2 spectral norm: |mean| + half-spread
        h11 = 2.0 - 400.0 * yy + 1200.0 * xx * xx
        h12 = -400.0 * xx
        h22 = np.full_like(xx, 200.0)
        mean = 0.5 * (h11 + h22)
        rad = np.sqrt(0.25 * (h11 - h22) ** 2 + h12 * h12)
        spec = np.maximum(np.abs(mean + rad), np.abs(mean - rad))
        self.lipschitz_L = 1.02 * self.scale * float(spec.max())

    def evaluate(self, z) -> float:
        x, y = float(z[0]), float(z[1])
        return self.scale * (100.0 * (y - x * x) ** 2 + (1.0 - x) ** 2)

    def gradient(self, z) -> np.ndarray:
        x, y = float(z[0]), float(z[1])
        gx = -400.0 * x * (y - x * x) - 2.0 * (1.0 - x)
        gy = 200.0 * (y - x * x)
        return self.scale * np.array([gx, gy])

    def sample(self, rng) -> np.ndarray:
        return np.array([rng.uniform(self.x_lo, self.x_hi),
                         rng.uniform(self.y_lo, self.y_hi)])

    def clip(self, z) -> np.ndarray:
        return np.array([min(max(float(z[0]), self.x_lo), self.x_hi),
                         min(max(float(z[1]), self.y_lo), self.y_hi)])


# ---------------------------------------------------------------------------
# noisy gradient oracles


def relative_noisy_gradient(oracle: "NoisyOracle", z, beta: float) -> np.ndarray:
    """Exact gradient plus a random error certified below beta * ||noisy||.

    The perturbation is rho * v with v uniform on the unit sphere and rho
    uniform in [0, beta ||g|| / (1 + beta)]; the reverse triangle
    inequality then gives ||noisy - g|| = rho <= beta ||noisy||. A zero
    gradient is returned unchanged (the bound forces zero error there).
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    g = oracle.base.gradient(z)
    gn = float(np.linalg.norm(g))
    if beta == 0.0 or gn == 0.0:
        return g
    v = oracle.rng.standard_normal(g.shape[0])
    v /= np.linalg.norm(v)
    rho = oracle.rng.uniform(0.0, beta * gn / (1.0 + beta))
    return g + rho * v


class NoisyOracle:
    """Gradient oracle with a certified error bound, relative or absolute.

    Exactly one of beta (relative mode, error <= beta * ||noisy||) or
    delta0 (absolute mode, error <= delta0 / (k+1)^2 at iteration k) must
    be given. Draws come from a seeded generator, so runs reproduce.
    """

    def __init__(self, base, beta: float | None = None,
                 delta0: float | None = None, seed: int = 0):
        if (beta is None) == (delta0 is None):
            raise ValueError("give exactly one of beta or delta0")
        if beta is not None and not 0.0 <= beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if delta0 is not None and delta0 < 0.0:
            raise ValueError("delta0 must be nonnegative")
        self.base = base
        self.beta = beta
        self.delta0 = delta0
        self.rng = np.random.default_rng(seed)

    @property
    def mode(self) -> str:
        return "relative" if self.beta is not None else "absolute"

    def delta_at(self, k: int) -> float:
        if self.delta0 is None:
            raise ValueError("delta_at applies to absolute mode only")
        return self.delta0 / (k + 1) ** 2

    def noisy_gradient(self, z, k: int = 0) -> tuple[np.ndarray, float]:
        """Return (noisy gradient, realized error norm)."""
        if self.beta is not None:
            g_bar = relative_noisy_gradient(self, z, self.beta)
            err = float(np.linalg.norm(g_bar - self.base.gradient(z)))
            return g_bar, err
        g = self.base.gradient(z)
        bound = self.delta_at(k)
        if bound == 0.0:
            return g, 0.0
        v = self.rng.standard_normal(g.shape[0])
        v /= np.linalg.norm(v)
        rho = self.rng.uniform(0.0, bound)
        return g + rho * v, rho


# ---------------------------------------------------------------------------
# the guaranteed-descent step interval


class DescentInterval:
    """Step sizes in (t_lower, t_upper) give guaranteed descent.

    Built by descent_interval() from the direction-condition constants,
    the smoothness constant, and the relative gradient-error level. The
    endpoints are the roots of the decrease polynomial; discriminant > 0
    iff the error level leaves a nonempty interval.
    """

    def __init__(self, t_lower, t_upper, discriminant, c1p, c2p, l_prime, relative_error):
        self.t_lower = float(t_lower)
        self.t_upper = float(t_upper)
        self.discriminant = float(discriminant)
        self.c1p = float(c1p)
        self.c2p = float(c2p)
        self.l_prime = float(l_prime)
        self.relative_error = float(relative_error)

    @property
    def width(self) -> float:
        return self.t_upper - self.t_lower

    def default_margin(self) -> float:
        """Interval margin used when shrinking to a closed safe range.

        Any value in (0, width/2] is admissible; width/4 keeps half the
        interval usable.
        """
        return 0.25 * self.width

    def safe_step_range(self, margin: float | None = None) -> tuple[float, float]:
        m = self.default_margin() if margin is None else float(margin)
        if not 0.0 < m <= 0.5 * self.width:
            raise ValueError("margin must lie in (0, width/2]")
        return self.t_lower + m, self.t_upper - m

    def guaranteed_decrease(self, t: float, grad_norm_sq: float) -> float:
        """Lower bound on the objective drop for one step of size t."""
        return (self.c2p**2 * 0.5 * self.l_prime
                * (t - self.t_lower) * (self.t_upper - t) * grad_norm_sq)

    def __repr__(self) -> str:
        return (f"DescentInterval(({self.t_lower:.6g}, {self.t_upper:.6g}), "
                f"relative_error={self.relative_error:g})")


def descent_interval(c1p: float, c2p: float, lipschitz_L: float,
                     relative_error: float) -> DescentInterval:
    """Step-size interval with guaranteed descent under relative error.

    With direction constants (c1p, c2p), smoothness constant L (the
    inexact analysis uses L' = L + 1), and gradient error below
    relative_error * ||noisy gradient||, every step in the open interval
    strictly decreases the objective. The interval is empty once
    relative_error reaches c1p / (sqrt(L') c2p); that raises ValueError.
    """
    if c1p <= 0 or c2p <= 0:
        raise ValueError("direction constants must be positive")
    if lipschitz_L < 0:
        raise ValueError("lipschitz_L must be nonnegative")
    if relative_error < 0:
        raise ValueError("relative_error must be nonnegative")
    l_prime = lipschitz_L + 1.0
    if relative_error >= c1p / (np.sqrt(l_prime) * c2p):
        raise ValueError(
            "relative_error leaves an empty descent interval "
            f"(needs < {c1p / (np.sqrt(l_prime) * c2p):.6g})"
        )
    disc = c1p**2 - l_prime * c2p**2 * relative_error**2
    # exact root at zero error so t_lower is exactly 0.0 there
    root = c1p if relative_error == 0.0 else float(np.sqrt(disc))
    denom = c2p**2 * l_prime
    return DescentInterval((c1p - root) / denom, (c1p + root) / denom,
                           disc, c1p, c2p, l_prime, relative_error)


# ---------------------------------------------------------------------------
# inequality sweeps


class VerificationReport:
    """Outcome of a numerical inequality sweep."""

    def __init__(self, name: str, trials: int, violations: int, details: dict):
        self.name = name
        self.trials = trials
        self.violations = violations
        self.details = details

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def __str__(self) -> str:
        lines = [f"{self.name}: {self.trials} trials, "
                 f"{self.violations} violations "
                 f"({'pass' if self.passed else 'FAIL'})"]
        for key, val in self.details.items():
            lines.append(f"  {key}: {val}")
        return "\n".join(lines)


# tiny absolute slack for float round-off in inequality comparisons
_SLACK = 1e-12


def verify_inexact_upper_bound(fn, oracle: NoisyOracle, trials: int,
                               seed: int = 0) -> VerificationReport:
    """Sweep the inexact quadratic upper bound over random point pairs.

    For random x, z checks
      F(x) <= F(z) + noisy_g(z)^T (x - z) + (L'/2)||x - z||^2 + err^2 / 2
    with err the oracle's realized error norm at z. Violations must be 0.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    l_prime = fn.lipschitz_L + 1.0
    violations = 0
    worst_margin = np.inf
    for _ in range(trials):
        z = fn.clip(fn.sample(rng))
        x = fn.clip(fn.sample(rng))
        g_bar, err = oracle.noisy_gradient(z)
        dx = x - z
        bound = (fn.evaluate(z) + float(g_bar @ dx)
                 + 0.5 * l_prime * float(dx @ dx) + 0.5 * err * err)
        margin = bound - fn.evaluate(x)
        worst_margin = min(worst_margin, margin)
        if margin < -_SLACK:
            violations += 1
    return VerificationReport(
        "inexact quadratic upper bound", trials, violations,
        {"worst_margin": worst_margin, "l_prime": l_prime},
    )


def verify_descent_inequality(fn, oracle: NoisyOracle, c1p: float, c2p: float,
                              step_grid, iterations: int = 500,
                              start=None, seed: int = 0) -> VerificationReport:
    """Run noisy steepest-descent and sweep the per-step decrease bound.

    For each step size t in step_grid (all must lie in the closed descent
    interval; the endpoints give guaranteed decrease zero, i.e. plain
    monotonicity), runs `iterations` steps z <- z - t * noisy_g and checks
      F(z_next) <= F(z) - c2p^2 (L'/2) (t - t_lower)(t_upper - t) ||noisy_g||^2
    at every one. With s = -noisy_g the direction conditions need
    c1p <= 1 <= c2p. Clipped steps (region-bounded functions) are skipped
    in the count and reported.
    """
    if oracle.mode != "relative":
        raise ValueError("the decrease bound needs a relative-error oracle")
    if not (0.0 < c1p <= 1.0 <= c2p):
        raise ValueError("steepest descent satisfies the direction "
                         "conditions only when c1p <= 1 <= c2p")
    interval = descent_interval(c1p, c2p, fn.lipschitz_L, oracle.beta)
    steps = [float(t) for t in step_grid]
    for t in steps:
        if not interval.t_lower <= t <= interval.t_upper:
            raise ValueError(f"step {t:g} is outside the descent interval "
                             f"[{interval.t_lower:.6g}, {interval.t_upper:.6g}]")
    rng = np.random.default_rng(seed)
    violations = 0
    checked = 0
    clipped = 0
    worst_margin = np.inf
    monotone = True
    for t in steps:
        z = fn.clip(fn.sample(rng))
        f_z = fn.evaluate(z)
        for _ in range(iterations):
            g_bar, _ = oracle.noisy_gradient(z)
            z_next = z - t * g_bar
            z_clipped = fn.clip(z_next)
            f_next = fn.evaluate(z_clipped)
            if not np.array_equal(z_clipped, z_next):
                clipped += 1
            else:
                gn2 = float(g_bar @ g_bar)
                margin = (f_z - interval.guaranteed_decrease(t, gn2)) - f_next
                worst_margin = min(worst_margin, margin)
                checked += 1
                if margin < -_SLACK:
                    violations += 1
            if f_next > f_z + _SLACK:
                monotone = False
            z, f_z = z_clipped, f_next
    return VerificationReport(
        "guaranteed descent inequality", checked, violations,
        {"steps": steps, "clipped": clipped, "monotone": monotone,
         "worst_margin": worst_margin,
         "interval": (interval.t_lower, interval.t_upper)},
    )


def verify_diminishing_convergence(fn, oracle: NoisyOracle, t0: float,
                                   horizon: int = 10_000,
                                   start=None, seed: int = 0,
                                   min_threshold: float = 1e-3,
                                   tail_threshold: float = 1e-2) -> VerificationReport:
    """Finite-horizon proxy for convergence under diminishing steps.

    Runs z <- z - t_k * noisy_g with t_k = t0 / (k+1) and absolute error
    bounds delta0 / (k+1)^2 (summable), then checks that min_k ||noisy_g||
    fell below min_threshold and that the mean over the last 10% of the
    horizon is below tail_threshold. Thresholds are documented test
    parameters standing in for the limit statement.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    if oracle.mode != "absolute":
        raise ValueError("diminishing-step analysis uses the absolute-error oracle")
    if horizon < 10:
        raise ValueError("horizon too short to have a 10% tail")
    rng = np.random.default_rng(seed)
    z = fn.clip(fn.sample(rng) if start is None else np.asarray(start, dtype=np.float64))
    norms = np.empty(horizon)
    for k in range(horizon):
        g_bar, _ = oracle.noisy_gradient(z, k=k)
        norms[k] = np.linalg.norm(g_bar)
        z = fn.clip(z - (t0 / (k + 1)) * g_bar)
    tail = norms[-max(1, horizon // 10):]
    ok_min = bool(norms.min() < min_threshold)
    ok_tail = bool(tail.mean() < tail_threshold)
    return VerificationReport(
        "diminishing-step convergence proxy", horizon,
        int(not (ok_min and ok_tail)),
        {"min_grad_norm": float(norms.min()),
         "tail_mean": float(tail.mean()),
         "min_threshold": min_threshold, "tail_threshold": tail_threshold,
         "final_grad_norm": float(norms[-1])},
    )


# ---------------------------------------------------------------------------
# the standard battery behind `deco-bench verify-theory`


def standard_test_functions() -> dict:
    """The three functions used by the verification battery and tests."""
    eigs = [2.2, 2.5, 2.8, 3.0, 3.3]
    return {
        "quadratic": ConvexQuadratic(eigs, seed=11),
        "quartic-bowl": QuarticBowl(eigs, quartic_weight=0.1, radius=3.0, seed=7),
        "rosenbrock": ScaledRosenbrock(),
    }


def verification_battery(pair_trials: int = 10_000) -> list[tuple[str, VerificationReport]]:
    """Run every numerical check at its documented strength.

    Returns (label, report) pairs; the suite passes iff every report
    does. This is what `deco-bench verify-theory` executes.
    """
    fns = standard_test_functions()
    out = []
    for name, fn in fns.items():
        for beta in (0.0, 0.1, 0.3):
            rep = verify_inexact_upper_bound(
                fn, NoisyOracle(fn, beta=beta, seed=5), trials=pair_trials, seed=17)
            out.append((f"upper bound / {name} / beta={beta}", rep))
    for name in ("quadratic", "quartic-bowl"):
        fn = fns[name]
        iv = descent_interval(1.0, 1.0, fn.lipschitz_L, 0.3)
        mid = 0.5 * (iv.t_lower + iv.t_upper)
        rep = verify_descent_inequality(
            fn, NoisyOracle(fn, beta=0.3, seed=9), 1.0, 1.0,
            [iv.t_lower, mid, iv.t_upper], iterations=500, seed=23)
        out.append((f"descent inequality / {name}", rep))

    # safe-range run: fixed step from the margin-shrunk interval, noisy
    # directions, exact objective monotone, exact gradient driven tiny
    quad = fns["quadratic"]
    iv = descent_interval(1.0, 1.0, quad.lipschitz_L, 0.1)
    lo, hi = iv.safe_step_range()
    orc = NoisyOracle(quad, beta=0.1, seed=4)
    rng = np.random.default_rng(8)
    z = quad.sample(rng)
    f_prev = quad.evaluate(z)
    mono_bad = 0
    for _ in range(500):
        g_bar, _ = orc.noisy_gradient(z)
        z = z - 0.5 * (lo + hi) * g_bar
        f_now = quad.evaluate(z)
        if f_now > f_prev + _SLACK:
            mono_bad += 1
        f_prev = f_now
    final_gn = float(np.linalg.norm(quad.gradient(z)))
    out.append(("monotone descent at safe step / quadratic", VerificationReport(
        "monotone descent at a safe fixed step", 500,
        mono_bad + int(final_gn >= 1e-6),
        {"final_exact_grad_norm": final_gn, "step_range": (lo, hi)})))

    rng = np.random.default_rng(101)
    ordering_bad = 0
    worst_width = np.inf
    for _ in range(1000):
        c1p = rng.uniform(0.05, 2.0)
        c2p = c1p * rng.uniform(1.0, 3.0)
        L = rng.uniform(0.1, 50.0)
        bound = c1p / (np.sqrt(L + 1.0) * c2p)
        beta = rng.uniform(0.05, 0.95) * bound
        iv = descent_interval(c1p, c2p, L, beta)
        cap = 2 * c1p / (c2p**2 * (L + 1.0))
        if not (0.0 <= iv.t_lower < iv.t_upper <= cap):
            ordering_bad += 1
        worst_width = min(worst_width, iv.width)
    out.append(("interval ordering / random tuples", VerificationReport(
        "interval endpoint ordering", 1000, ordering_bad,
        {"smallest_width": worst_width})))

    c1p, c2p, L = 1.0, 1.5, 2.0
    bound = c1p / (np.sqrt(L + 1.0) * c2p)
    widths = [descent_interval(c1p, c2p, L, b).width
              for b in np.linspace(0.0, 0.95 * bound, 50)]
    shrink_bad = sum(b >= a for a, b in zip(widths, widths[1:]))
    out.append(("interval width shrinks with error", VerificationReport(
        "interval width strictly decreasing in the error level",
        len(widths) - 1, shrink_bad,
        {"width_at_zero": widths[0], "width_at_max": widths[-1]})))

    rep = verify_diminishing_convergence(
        quad, NoisyOracle(quad, delta0=0.0, seed=13), t0=1.0, seed=29,
        min_threshold=1e-6)
    out.append(("diminishing steps / quadratic / exact", rep))
    for name, t0 in (("quadratic", 1.0), ("quartic-bowl", 1.0), ("rosenbrock", 1.8)):
        rep = verify_diminishing_convergence(
            fns[name], NoisyOracle(fns[name], delta0=0.1, seed=13), t0=t0, seed=29)
        out.append((f"diminishing steps / {name} / delta0=0.1", rep))
    return out
