"""Command-line front end: `deco-bench run | verify-theory | reduce`.

`run` executes a benchmark matrix and writes the CSV artifacts, `reduce`
recomputes percent reductions from an existing summary.csv, and
`verify-theory` runs the numerical checks of the descent theory. Exit
code 0 means every requested run converged and every invariant/check
passed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

from .bench import (
    BenchConfig,
    DEFAULT_GRID,
    check_invariants,
    emit_outputs,
    parse_config_file,
    parse_grids,
    percent_reduction,
    run_matrix,
)
from .theory import verification_battery


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deco-bench",
        description="Benchmark inexact descent methods on the two case studies.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark matrix and write artifacts")
    run.add_argument("--case", choices=("ode", "laplace"),
                     help="case study (required unless given in --config)")
    run.add_argument("--methods", help="comma list from gd,igd,ibfgs")
    run.add_argument("--grids", help="grid sizes: '16..128', '16..128:8', or '16,64'")
    run.add_argument("--seed", type=int, help="reference-data seed")
    run.add_argument("--eps", type=float, help="stopping threshold on the gradient norm")
    run.add_argument("--reps", type=int, help="timing repetitions per cell")
    run.add_argument("--max-iter", type=int, help="iteration cap per run")
    run.add_argument("--out", help="output directory for CSVs and plot script")
    run.add_argument("--config", help="flat key=value config file; flags override it")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--serial", action="store_true", default=None,
                      help="run cells one at a time (default; publication timing)")
    mode.add_argument("--parallel", action="store_true",
                      help="overlap cells on a thread pool (smoke runs only)")

    sub.add_parser("verify-theory", help="run the descent-theory numerical checks")

    red = sub.add_parser("reduce", help="percent reduction between two methods")
    red.add_argument("--base", required=True, help="baseline method, e.g. gd")
    red.add_argument("--new", required=True, dest="new_method",
                     help="comparison method, e.g. igd")
    red.add_argument("--in", required=True, dest="in_dir",
                     help="directory containing summary.csv")
    return p


def _config_from_args(args) -> BenchConfig:
    values = parse_config_file(args.config) if args.config else {}
    if args.case is not None:
        values["case"] = args.case
    if args.methods is not None:
        values["methods"] = tuple(t.strip() for t in args.methods.split(",") if t.strip())
    if args.grids is not None:
        values["grids"] = parse_grids(args.grids)
    for key in ("seed", "eps", "reps"):
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    if args.max_iter is not None:
        values["max_iter"] = args.max_iter
    if args.out is not None:
        values["out_dir"] = args.out
    if args.serial:
        values["serial"] = True
    elif args.parallel:
        values["serial"] = False
    if "case" not in values:
        raise SystemExit("deco-bench run: --case is required (flag or config file)")
    values.setdefault("grids", DEFAULT_GRID)
    return BenchConfig(**values)


def _print_cell(cell) -> None:
    state = "ok" if cell.converged else cell.status
    print(f"[{cell.case} {cell.method:>5} M={cell.grid_size:>3}] {state:<9} "
          f"iters={cell.iterations:<7} median={cell.median_time_s:.3f}s "
          f"gn={cell.final_grad_norm:.2e}", flush=True)


def cmd_run(args) -> int:
    config = _config_from_args(args)
    cells = run_matrix(config, on_record=_print_cell)
    by_method = {m: [c for c in cells if c.method == m] for m in config.methods}
    reductions = []
    for base, new in (("gd", "igd"), ("igd", "ibfgs")):
        if base in by_method and new in by_method:
            reductions.extend(percent_reduction(by_method[base], by_method[new]))
    for red in reductions:
        mean = "n/a" if red.mean_over_range is None else f"{red.mean_over_range:.2f}%"
        print(f"reduction {red.case}: {red.method} vs {red.baseline}: "
              f"mean over M in {red.grid_range} = {mean}")
    if config.out_dir is not None:
        paths = emit_outputs(cells, reductions, config.out_dir)
        print(f"wrote {len(paths)} artifacts to {config.out_dir}")
    problems = check_invariants(cells)
    for line in problems:
        print(f"INVARIANT VIOLATION: {line}")
    if problems:
        return 1
    print("all runs converged; invariants hold")
    return 0


def cmd_verify_theory() -> int:
    battery = verification_battery()
    failures = 0
    for label, rep in battery:
        mark = "pass" if rep.passed else "FAIL"
        print(f"[{mark}] {label}: {rep.trials} trials, {rep.violations} violations")
        if not rep.passed:
            failures += 1
            for key, val in rep.details.items():
                print(f"       {key}: {val}")
    print(f"{len(battery) - failures}/{len(battery)} checks passed")
    return 0 if failures == 0 else 1


@dataclass
class _SummaryRow:
    case: str
    method: str
    grid_size: int
    median_time_s: float
    status: str

    @property
    def converged(self) -> bool:
        return self.status == "Converged"


def _read_summary(path: Path) -> list[_SummaryRow]:
    if not path.exists():
        raise SystemExit(f"deco-bench reduce: {path} not found")
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(_SummaryRow(
                case=r["case"], method=r["method"], grid_size=int(r["M"]),
                median_time_s=float(r["median_time_s"]),
                status="Converged" if r["converged"] == "1" else "NotConverged",
            ))
    return rows


def cmd_reduce(args) -> int:
    in_dir = Path(args.in_dir)
    rows = _read_summary(in_dir / "summary.csv")
    base_rows = [r for r in rows if r.method == args.base]
    new_rows = [r for r in rows if r.method == args.new_method]
    if not base_rows or not new_rows:
        print(f"no rows for methods {args.base!r} and {args.new_method!r} in summary.csv")
        return 1
    reductions = percent_reduction(base_rows, new_rows)
    if not reductions:
        print("no converged matching cells")
        return 1
    out = in_dir / f"reduction_{args.new_method}_vs_{args.base}.csv"
    with open(out, "w", newline="") as fh:
        fh.write("case,baseline,method,M,percent_reduction\n")
        w = csv.writer(fh)
        for red in reductions:
            for m, pct in red.per_grid:
                w.writerow([red.case, red.baseline, red.method, m, "%.17g" % pct])
    for red in reductions:
        for m, pct in red.per_grid:
            print(f"{red.case} M={m}: {pct:.2f}%")
        mean = "n/a" if red.mean_over_range is None else f"{red.mean_over_range:.2f}%"
        print(f"{red.case} mean over M in {red.grid_range}: {mean}")
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "verify-theory":
        return cmd_verify_theory()
    return cmd_reduce(args)


if __name__ == "__main__":
    sys.exit(main())
