"""Benchmark matrix for the three optimizer variants on both case studies.

Runs every requested (case, method, grid size, repetition) cell, times the
optimization loop on a monotonic clock (problem construction and reference
data generation excluded), aggregates medians over repetitions, computes
percent-reduction curves between methods, and writes the CSV/plot-script
artifacts. The command-line front end lives in decopt.cli.

Method settings: GD always solves both linear systems at fixed 1e-9
tolerances; IGD and IBFGS use the adaptive test-and-tighten controller.
The residual-factor defaults below are per case. The quasi-Newton secant
vectors difference successive gradients, which amplifies gradient error by
roughly the reciprocal of the step length, so IBFGS needs much tighter
factors than IGD on the boundary-control case (loose factors stall it
above the stopping threshold; see the notes in decopt.adjoint).
"""

from __future__ import annotations

import csv
import statistics
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import FixedTolerances, ToleranceSchedule
from .descent import IbfgsDirection, IgdDirection, ConstantStep, igdm_run
from .problems import LaplaceBoundaryControlProblem, OdeBoundaryValueProblem

__all__ = [
    "BenchConfig",
    "CellResult",
    "Reduction",
    "run_matrix",
    "percent_reduction",
    "emit_outputs",
    "check_invariants",
    "write_trace_csv",
    "summary_rows",
    "parse_config_file",
    "parse_grids",
    "DEFAULT_GRID",
    "METHOD_GAMMAS",
]

DEFAULT_GRID = (16, 32, 48, 64, 80, 96, 112, 128)
CASES = ("ode", "laplace")
METHODS = ("gd", "igd", "ibfgs")

# Per-case residual factors (gamma_state, gamma_adjoint).  The Laplace
# case needs tighter factors than the ODE case: its gradient-error
# constant grows roughly like 1/h as the grid refines, so factors that
# converge at M=64 stall by M=96.  For quasi-Newton runs the secant
# difference divides the gradient error by the step length, which is
# O(1/n_s) here, so those factors must be tighter still.
METHOD_GAMMAS = {
    ("ode", "igd"): (60.0, 3.0),
    ("ode", "ibfgs"): (1e-3, 1e-3),
    ("laplace", "igd"): (0.01, 0.01),
    ("laplace", "ibfgs"): (1e-3, 1e-3),
}


@dataclass
class BenchConfig:
    """One benchmark request: which cells to run and how."""

    case: str
    methods: tuple[str, ...] = METHODS
    grids: tuple[int, ...] = DEFAULT_GRID
    seed: int = 1234
    eps: float = 1e-6
    reps: int = 3
    out_dir: str | None = None
    serial: bool = True
    max_iter: int = 500_000
    discard_traces: bool = False  # drop per-iteration traces (timing-only runs)
    step: float | None = None  # None: the problem's published step length
    gd_tolerance: float = 1e-9
    igd_gammas: tuple[float, float] | None = None  # None: per-case default
    ibfgs_gammas: tuple[float, float] | None = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}")
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.methods:
            raise ValueError("at least one method required")
        self.grids = tuple(int(g) for g in self.grids)
        if any(g < 2 for g in self.grids):
            raise ValueError("grid sizes must be >= 2")
        if self.reps < 1:
            raise ValueError("repetitions must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.gd_tolerance <= 0:
            raise ValueError("gd_tolerance must be positive")

    def gammas_for(self, method: str) -> tuple[float, float]:
        override = {"igd": self.igd_gammas, "ibfgs": self.ibfgs_gammas}[method]
        return override if override is not None else METHOD_GAMMAS[(self.case, method)]


@dataclass
class CellResult:
    """Aggregated outcome of one (case, method, M) cell."""

    case: str
    method: str
    grid_size: int
    times: tuple[float, ...]
    iterations: int
    state_solves: int
    adjoint_solves: int
    final_grad_norm: float
    status: str
    bad_curvature_events: int = 0
    reset_events: int = 0
    fallback_events: int = 0
    record: object = field(default=None, repr=False)  # first-rep RunRecord
    trace_path: str | None = None
    final_z: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return self.status == "Converged"

    @property
    def median_time_s(self) -> float:
        return statistics.median(self.times)

    @property
    def reps(self) -> int:
        return len(self.times)


def make_problem(case: str, grid_size: int, seed: int):
    if case == "ode":
        return OdeBoundaryValueProblem(grid_size)
    return LaplaceBoundaryControlProblem(grid_size, seed=seed)


def _make_direction(method: str, dim: int):
    return IbfgsDirection(dim) if method == "ibfgs" else IgdDirection()


def _make_schedule(config: BenchConfig, method: str):
    if method == "gd":
        return FixedTolerances(config.gd_tolerance, config.gd_tolerance)
    return ToleranceSchedule(*config.gammas_for(method))


def run_cell(config: BenchConfig, method: str, grid_size: int,
             problem=None) -> CellResult:
    """Run one cell: `reps` identical repetitions, first trace kept."""
    if problem is None:
        problem = make_problem(config.case, grid_size, config.seed)
    step = ConstantStep(config.step if config.step is not None
                        else problem.default_step)
    times = []
    first = None
    for _ in range(config.reps):
        direction = _make_direction(method, problem.control_dim)
        rec = igdm_run(problem, problem.start_point, direction, step,
                       _make_schedule(config, method), eps=config.eps,
                       max_iter=config.max_iter)
        times.append(rec.total_time)
        if first is None:
            first = rec
    return CellResult(
        case=config.case, method=method, grid_size=grid_size,
        times=tuple(times), iterations=first.iterations,
        state_solves=first.state_solves, adjoint_solves=first.adjoint_solves,
        final_grad_norm=first.final_grad_norm, status=first.status,
        bad_curvature_events=first.bad_curvature_events,
        reset_events=first.reset_events, fallback_events=first.fallback_events,
        record=first,
        final_z=first.final_z.copy() if len(first.trace) else None,
    )


def _finish_cell(cell: CellResult, config: BenchConfig) -> CellResult:
    # stream the trace to disk as soon as the cell completes: full traces
    # of the gradient methods reach ~10^5 iterations and holding all of
    # them in memory at once is wasteful
    if config.out_dir is not None:
        path = Path(config.out_dir) / trace_filename(cell.case, cell.method,
                                                     cell.grid_size)
        write_trace_csv(cell.record, path)
        cell.trace_path = str(path)
        cell.record = None
    elif config.discard_traces:
        cell.record = None
    return cell


def run_matrix(config: BenchConfig, on_record=None) -> list[CellResult]:
    """Execute every (method, grid) cell of the config, in a fixed order.

    Serial mode (the default, required for publication-grade timing) runs
    cells one at a time. Parallel mode distributes independent cells over
    a small thread pool; timings then reflect contention and should only
    be used for smoke runs. `on_record(cell)` is invoked as each cell
    finishes. Non-converged cells are recorded, never raised.
    """
    if config.out_dir is not None:
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    cells = [(method, g) for g in config.grids for method in config.methods]
    results = []
    if config.serial:
        for method, g in cells:
            # one problem per (grid) would share solver memo caches across
            # methods and bias later cells; build per cell instead
            cell = _finish_cell(run_cell(config, method, g), config)
            results.append(cell)
            if on_record is not None:
                on_record(cell)
    else:
        with ThreadPoolExecutor(max_workers=min(4, len(cells))) as pool:
            futures = [pool.submit(run_cell, config, method, g)
                       for method, g in cells]
            for fut in futures:
                cell = _finish_cell(fut.result(), config)
                results.append(cell)
                if on_record is not None:
                    on_record(cell)
    return results


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class Reduction:
    """Percent-reduction curve of one method against a baseline."""

    case: str
    baseline: str
    method: str
    per_grid: list[tuple[int, float]]  # (M, percent)
    mean_over_range: float | None
    grid_range: tuple[int, int]


def percent_reduction(base_cells, new_cells, m_range=(64, 128)) -> list[Reduction]:
    """100 (t_base - t_new) / t_base on cell medians, per grid size.

    Only pairs where both cells converged enter the curve; unmatched or
    non-converged cells are dropped with a warning. The headline number
    is the mean over grid sizes inside m_range (inclusive), None when no
    pair lands in the range. One Reduction per case present in both sets.
    """
    base_by_key = {(c.case, c.grid_size): c for c in base_cells}
    curves: dict[tuple[str, str, str], list[tuple[int, float]]] = {}
    for new in new_cells:
        base = base_by_key.get((new.case, new.grid_size))
        if base is None:
            warnings.warn(f"no baseline cell for {new.case} M={new.grid_size}")
            continue
        if not (base.converged and new.converged):
            warnings.warn(f"skipping non-converged pair {new.case} M={new.grid_size}")
            continue
        pct = 100.0 * (base.median_time_s - new.median_time_s) / base.median_time_s
        key = (new.case, base.method, new.method)
        curves.setdefault(key, []).append((new.grid_size, pct))
    out = []
    lo, hi = m_range
    for (case, bmeth, nmeth), pts in sorted(curves.items()):
        pts.sort()
        in_range = [p for m, p in pts if lo <= m <= hi]
        mean = float(np.mean(in_range)) if in_range else None
        out.append(Reduction(case, bmeth, nmeth, pts, mean, (lo, hi)))
    return out


def summary_rows(cells) -> list[dict]:
    rows = []
    for c in sorted(cells, key=lambda c: (c.case, c.method, c.grid_size)):
        rows.append({
            "case": c.case, "method": c.method, "M": c.grid_size,
            "rep": c.reps, "median_time_s": c.median_time_s,
            "iterations": c.iterations, "state_solves": c.state_solves,
            "adjoint_solves": c.adjoint_solves,
            "final_grad_norm": c.final_grad_norm,
            "converged": int(c.converged),
        })
    return rows


SUMMARY_HEADER = ("case,method,M,rep,median_time_s,iterations,state_solves,"
                  "adjoint_solves,final_grad_norm,converged")
REDUCTION_HEADER = "case,baseline,method,M,percent_reduction"


def trace_filename(case: str, method: str, grid_size: int) -> str:
    return f"trace_{case}_{method}_M{grid_size}.csv"


def write_trace_csv(record, path) -> None:
    """Per-iteration trace as CSV; the timing column is last on purpose.

    All values print through %.17g, so identical runs produce identical
    bytes in every column except wall_time.
    """
    tr = record.trace
    m = tr.z.shape[1]
    names = (["iteration"] + [f"z{i}" for i in range(m)]
             + ["objective", "grad_norm", "step", "tau_state", "tau_adjoint",
                "state_residual", "adjoint_residual", "state_solves",
                "adjoint_solves", "direction_ok", "at_floor", "wall_time"])
    cols = [np.arange(len(tr), dtype=np.float64)]
    cols += [tr.z[:, i] for i in range(m)]
    cols += [tr.objective, tr.grad_norm, tr.step, tr.tau_state, tr.tau_adjoint,
             tr.state_residual, tr.adjoint_residual,
             tr.state_solves.astype(np.float64),
             tr.adjoint_solves.astype(np.float64),
             tr.direction_ok.astype(np.float64), tr.at_floor.astype(np.float64),
             tr.wall_time]
    data = np.column_stack(cols) if len(tr) else np.empty((0, len(names)))
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=",".join(names), comments="")


def emit_outputs(cells, reductions, out_dir) -> dict[str, str]:
    """Write the benchmark artifacts; returns {artifact name: path}.

    Artifacts: one per-iteration trace CSV per cell (skipped where
    run_matrix already streamed it), summary.csv, reduction.csv, and a
    standalone plot script that works from the CSVs alone.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {}
    for c in cells:
        if c.record is None:
            if c.trace_path is not None:
                paths[Path(c.trace_path).name] = c.trace_path
            continue
        p = out / trace_filename(c.case, c.method, c.grid_size)
        write_trace_csv(c.record, p)
        c.trace_path = str(p)
        paths[p.name] = str(p)
    sp = out / "summary.csv"
    with open(sp, "w", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        w = csv.writer(fh)
        for r in summary_rows(cells):
            w.writerow([r["case"], r["method"], r["M"], r["rep"],
                        "%.17g" % r["median_time_s"], r["iterations"],
                        r["state_solves"], r["adjoint_solves"],
                        "%.17g" % r["final_grad_norm"], r["converged"]])
    paths["summary.csv"] = str(sp)
    rp = out / "reduction.csv"
    with open(rp, "w", newline="") as fh:
        fh.write(REDUCTION_HEADER + "\n")
        w = csv.writer(fh)
        for red in reductions:
            for m, pct in red.per_grid:
                w.writerow([red.case, red.baseline, red.method, m, "%.17g" % pct])
    paths["reduction.csv"] = str(rp)
    pp = out / "plot_results.py"
    pp.write_text(PLOT_SCRIPT)
    paths["plot_results.py"] = str(pp)
    return paths


def check_invariants(cells) -> list[str]:
    """Violations of the benchmark-level properties; empty means pass.

    Checks: every cell converged; for each grid size >= 64 where both
    cells converged, median IGD beats GD and median IBFGS beats IGD; the
    adaptive methods use at most 3 linear solves per iteration on
    average.
    """
    bad = []
    by_key = {(c.case, c.method, c.grid_size): c for c in cells}
    for c in cells:
        if not c.converged:
            bad.append(f"{c.case}/{c.method}/M={c.grid_size}: status {c.status}")
        if c.method in ("igd", "ibfgs") and c.iterations > 0:
            ratio = (c.state_solves + c.adjoint_solves) / c.iterations
            if ratio > 3.0:
                bad.append(f"{c.case}/{c.method}/M={c.grid_size}: "
                           f"{ratio:.2f} solves per iteration (> 3)")
    for (case, method, g), c in by_key.items():
        if g < 64 or not c.converged:
            continue
        slower = by_key.get((case, {"igd": "gd", "ibfgs": "igd"}.get(method), g))
        if slower is not None and slower.converged \
                and c.median_time_s >= slower.median_time_s:
            bad.append(f"{case}/M={g}: median {method} time {c.median_time_s:.3f}s "
                       f"not below {slower.method} {slower.median_time_s:.3f}s")
    return bad


# ---------------------------------------------------------------------------
# configuration files


def parse_grids(text: str) -> tuple[int, ...]:
    """Grid list syntax: '16..128' (step 16), '16..128:8', or '16,48,96'."""
    text = text.strip()
    if ".." in text:
        span, _, step = text.partition(":")
        lo, _, hi = span.partition("..")
        step = int(step) if step else 16
        if step < 1:
            raise ValueError("grid step must be positive")
        return tuple(range(int(lo), int(hi) + 1, step))
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config_file(path) -> dict:
    """Flat key = value file; '#' starts a comment; keys mirror BenchConfig."""
    raw = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected 'key = value'")
        key, _, val = line.partition("=")
        raw[key.strip()] = val.strip()
    out = {}
    for key, val in raw.items():
        if key in ("case", "out"):
            out["out_dir" if key == "out" else key] = val
        elif key == "methods":
            out[key] = tuple(tok.strip() for tok in val.split(",") if tok.strip())
        elif key == "grids":
            out[key] = parse_grids(val)
        elif key in ("seed", "reps", "max_iter"):
            out[key] = int(val)
        elif key in ("eps", "step", "gd_tolerance"):
            out[key] = float(val)
        elif key == "serial":
            if val.lower() not in _BOOL:
                raise ValueError(f"{path}: serial must be true/false")
            out[key] = _BOOL[val.lower()]
        elif key in ("igd_gamma_state", "igd_gamma_adjoint",
                     "ibfgs_gamma_state", "ibfgs_gamma_adjoint"):
            out[key] = float(val)
        else:
            raise ValueError(f"{path}: unknown key {key!r}")
    for meth in ("igd", "ibfgs"):
        g1 = out.pop(f"{meth}_gamma_state", None)
        g2 = out.pop(f"{meth}_gamma_adjoint", None)
        if (g1 is None) != (g2 is None):
            raise ValueError(f"{path}: give both {meth}_gamma_state and "
                             f"{meth}_gamma_adjoint or neither")
        if g1 is not None:
            out[f"{meth}_gammas"] = (g1, g2)
    return out


PLOT_SCRIPT = '''\
"""Plot runtime-vs-grid and percent-reduction curves from the CSVs here.

Usage: python plot_results.py [directory]   (default: script's directory)
Requires matplotlib.
"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent

with open(root / "summary.csv", newline="") as fh:
    summary = list(csv.DictReader(fh))
with open(root / "reduction.csv", newline="") as fh:
    reduction = list(csv.DictReader(fh))

cases = sorted({r["case"] for r in summary})

fig, axes = plt.subplots(1, len(cases), figsize=(6 * len(cases), 4.5), squeeze=False)
for ax, case in zip(axes[0], cases):
    for method in ("gd", "igd", "ibfgs"):
        pts = sorted((int(r["M"]), float(r["median_time_s"]))
                     for r in summary if r["case"] == case and r["method"] == method)
        if pts:
            ax.plot([m for m, _ in pts], [t for _, t in pts],
                    marker="o", label=method.upper())
    ax.set_xlabel("grid size M")
    ax.set_ylabel("median wall time [s]")
    ax.set_yscale("log")
    ax.set_title(f"runtime vs grid size ({case})")
    ax.grid(True, alpha=0.3)
    ax.legend()
fig.tight_layout()
fig.savefig(root / "runtime_vs_grid.png", dpi=150)
print("wrote", root / "runtime_vs_grid.png")

if reduction:
    pairs = sorted({(r["case"], r["baseline"], r["method"]) for r in reduction})
    fig2, ax = plt.subplots(figsize=(7, 4.5))
    for case, base, method in pairs:
        pts = sorted((int(r["M"]), float(r["percent_reduction"])) for r in reduction
                     if (r["case"], r["baseline"], r["method"]) == (case, base, method))
        ax.plot([m for m, _ in pts], [p for _, p in pts], marker="s",
                label=f"{case}: {method.upper()} vs {base.upper()}")
    ax.set_xlabel("grid size M")
    ax.set_ylabel("runtime reduction [%]")
    ax.set_title("percent reduction of median runtime")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig2.tight_layout()
    fig2.savefig(root / "percent_reduction.png", dpi=150)
    print("wrote", root / "percent_reduction.png")
'''
