"""Command line: solve hierarchies, sweep initial states, tabulate value functions.

Exit codes of ``solve``: 0 when some order produced a bound, 2 when the run
ended in an infeasibility certificate without any bound, 3 when every order
was inaccurate. Usage errors exit with 64, unreadable problems with 1.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import multiprocessing as mp
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import oracles, plotting
from .dualcert import extract_value_polynomial, value_gap_grid, write_gap_csv
from .problem import OcpProblem, canonicalize, degree_profile
from .problemfile import FileOptions, ProblemFileError, load
from .relaxation import RelaxationError, build_relaxation, describe, export_sdpa
from .sdpbackend import (
    HierarchyError,
    SolveOutcome,
    SolverSettings,
    Status,
    run_hierarchy,
    solve,
)

log = logging.getLogger("ocplmi")

EXIT_BOUND, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_INACCURATE, EXIT_USAGE = 0, 1, 2, 3, 64

TIME_ORACLES: dict[str, Callable[[Sequence[float]], float]] = {
    "double_integrator": oracles.double_integrator_time,
    "brockett": oracles.brockett_time,
}
VERDICT_ORACLES = {"zermelo": oracles.zermelo_unreachable}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(v)
    return "nan" if math.isnan(v) else f"{v:.10g}"


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class SweepSpec:
    axes: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        for lo, hi, count in self.axes:
            if count < 1:
                raise ValueError("grid counts must be at least 1")
            if lo > hi:
                raise ValueError(f"grid interval [{lo}, {hi}] is reversed")
            if count == 1 and lo != hi:
                raise ValueError("a single-point axis needs lo == hi")

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        """``lo:hi:count`` per coordinate, comma separated; a bare number fixes a coordinate."""
        axes = []
        for part in text.split(","):
            bits = part.strip().split(":")
            try:
                if len(bits) == 1:
                    v = float(bits[0])
                    axes.append((v, v, 1))
                elif len(bits) == 3:
                    axes.append((float(bits[0]), float(bits[1]), int(bits[2])))
                else:
                    raise ValueError
            except ValueError:
                raise ValueError(f"bad grid axis {part!r}; expected lo:hi:count or a number") from None
        return cls(tuple(axes))

    def points(self) -> list[tuple[float, ...]]:
        """Tensor grid, first coordinate varying slowest."""
        vals = [np.linspace(lo, hi, count) if count > 1 else np.array([lo]) for lo, hi, count in self.axes]
        return [tuple(float(v) for v in p) for p in itertools.product(*vals)]

    def check_within(self, problem: OcpProblem):
        if len(self.axes) != problem.n:
            raise ValueError(f"grid has {len(self.axes)} axes, state dimension is {problem.n}")
        for k, ((lo, hi, _), (blo, bhi)) in enumerate(zip(self.axes, problem.X.bounding_box)):
            if lo < blo or hi > bhi:
                raise ValueError(f"grid axis {k + 1} [{lo}, {hi}] leaves the X box [{blo}, {bhi}]")


# ---------------------------------------------------------------- settings

def _settings(args, fo: FileOptions) -> SolverSettings:
    s = SolverSettings()
    tol = args.tol if args.tol is not None else fo.tol
    if tol is not None:
        s = replace(s, tol_gap=float(tol), tol_feas=float(tol))
    thr = args.certificate_threshold if args.certificate_threshold is not None else fo.certificate_threshold
    if thr is not None:
        s = replace(s, certificate_threshold=float(thr))
    return replace(s, localize=args.localize, verbose=args.verbose > 1)


def _load(args) -> tuple[OcpProblem, FileOptions]:
    problem, fo = load(args.problem)
    if args.ball_constraint:
        problem = replace(problem, add_ball_constraint=True)
    return problem, fo


def _orders(args, fo: FileOptions, problem: OcpProblem) -> tuple[int, int]:
    prof = degree_profile(problem)
    r_min = args.r_min if args.r_min is not None else (fo.r_min or prof.r_min)
    r_max = args.r_max if args.r_max is not None else (fo.r_max or r_min)
    if r_min < prof.r_min:
        raise RelaxationError(f"r_min={r_min} is below the minimal admissible order {prof.r_min}")
    if r_max < r_min:
        raise RelaxationError(f"r_max={r_max} is below r_min={r_min}")
    return r_min, r_max


def _oracle_time(fo: FileOptions, x) -> float | None:
    fn = TIME_ORACLES.get(fo.oracle or "")
    if fn is None:
        return None
    try:
        return float(fn(x))
    except ValueError:
        return math.nan


def exit_code(outcomes: Sequence[SolveOutcome]) -> int:
    statuses = {o.status for o in outcomes}
    if Status.LOWER_BOUND in statuses:
        return EXIT_BOUND
    if Status.INFEASIBLE in statuses:
        return EXIT_INFEASIBLE
    return EXIT_INACCURATE


# ---------------------------------------------------------------- solve

SOLVE_HEADER = ["r", "status", "bound", "decision_length", "equalities", "largest_block"]


def cmd_solve(args) -> int:
    problem, fo = _load(args)
    settings = _settings(args, fo)
    r_min, r_max = _orders(args, fo, problem)
    outcomes = run_hierarchy(problem, r_min, r_max, settings)
    scaled, rec = canonicalize(problem)
    ref = _oracle_time(fo, problem.x0)
    rows = []
    print(f"{'r':>3} {'status':<22} {'bound':>14} {'time[s]':>9} {'size':>7} {'block':>6}")
    for o in outcomes:
        rep = describe(build_relaxation(scaled, o.order, rec, settings.localize))
        largest = max((side for _, side in rep.blocks), default=0)
        bound = o.bound if o.status in (Status.LOWER_BOUND, Status.INACCURATE) else None
        rows.append([o.order, o.status.value, bound, rep.decision_length, rep.equalities, largest])
        shown = "-" if bound is None else f"{bound:.6f}"
        print(f"{o.order:>3} {o.status.value:<22} {shown:>14} {o.solve_time:>9.2f} "
              f"{rep.decision_length:>7} {largest:>6}")
        if o.message:
            log.info("r=%d: %s", o.order, o.message)
    if ref is not None:
        print(f"exact value {ref:.6f}")
    if args.out:
        _write_csv(args.out, SOLVE_HEADER, rows)
        if not args.no_plot:
            plotting.plot_hierarchy([r[0] for r in rows if r[1] == Status.LOWER_BOUND.value],
                                    [r[2] for r in rows if r[1] == Status.LOWER_BOUND.value],
                                    plotting.figure_path(args.out), ref, problem.name)
    return exit_code(outcomes)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------- sweep

_SWEEP: dict = {}


def _sweep_setup(problem: OcpProblem, orders: Sequence[int], settings: SolverSettings):
    scaled, rec = canonicalize(problem)
    _SWEEP.update(rec=rec, settings=settings,
                  sdps=[build_relaxation(scaled, r, rec, settings.localize) for r in orders])


def _sweep_point(x: tuple[float, ...]) -> tuple[str, float | None, int]:
    """Solve the prepared orders at ``x``; stops at the first certificate."""
    xs = _SWEEP["rec"].state_to_scaled(x)
    last = None
    for sdp in _SWEEP["sdps"]:
        try:
            o = solve(sdp.with_initial_state(xs), _SWEEP["settings"])
        except Exception as exc:  # recorded in-row, the sweep continues
            return f"error: {exc}", None, sdp.order
        last = o
        if o.status == Status.INFEASIBLE:
            break
    return last.status.value, last.bound, last.order


SWEEP_HEADER_TAIL = ["status", "bound", "r", "oracle", "ratio"]


def run_sweep(problem: OcpProblem, spec: SweepSpec, orders: Sequence[int], settings: SolverSettings,
              workers: int = 1) -> list[tuple[tuple[float, ...], tuple[str, float | None, int]]]:
    spec.check_within(problem)
    pts = spec.points()
    _sweep_setup(problem, orders, settings)
    if workers <= 1:
        results = [_sweep_point(p) for p in pts]
    else:
        # forked workers inherit the prepared relaxations; map keeps grid order
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as ex:
            results = list(ex.map(_sweep_point, pts, chunksize=max(1, len(pts) // (8 * workers))))
    return list(zip(pts, results))


def cmd_sweep(args) -> int:
    problem, fo = _load(args)
    settings = _settings(args, fo)
    spec = SweepSpec.parse(args.grid)
    r = args.r if args.r is not None else (args.r_max or fo.r_max or degree_profile(problem).r_min)
    if args.mode == "certificate":
        r_min = args.r_min if args.r_min is not None else degree_profile(problem).r_min
        orders = list(range(r_min, r + 1))
    else:
        orders = [r]
    if min(orders) < degree_profile(problem).r_min:
        raise RelaxationError(f"order {min(orders)} is below the minimal admissible order")
    results = run_sweep(problem, spec, orders, settings, args.workers)
    names = problem.state_block.names
    verdict = VERDICT_ORACLES.get(fo.oracle or "")
    rows = []
    for x, (status, bound, order) in results:
        ref = _oracle_time(fo, x)
        if verdict is not None:
            ref_cell = verdict(x).value
        else:
            ref_cell = ref
        shown = "INFEASIBLE" if status == Status.INFEASIBLE.value else bound
        ok = status == Status.LOWER_BOUND.value and ref is not None and ref > 0
        ratio = bound / ref if ok and math.isfinite(ref) else None
        rows.append([*x, status, shown, order, ref_cell, ratio])
    out = args.out or "sweep.csv"
    _write_csv(out, [*names, *SWEEP_HEADER_TAIL], rows)
    n_inf = sum(1 for row in rows if row[problem.n] == Status.INFEASIBLE.value)
    n_bad = sum(1 for row in rows if row[problem.n] not in (Status.INFEASIBLE.value, Status.LOWER_BOUND.value))
    print(f"{len(rows)} points: {n_inf} certified unreachable, {n_bad} without a usable result -> {out}")
    if not args.no_plot:
        pts = np.array([x for x, _ in results])
        bounds = np.array([np.nan if b is None else b for _, (_, b, _) in results], dtype=float)
        infeas = np.array([s == Status.INFEASIBLE.value for _, (s, _, _) in results])
        ratio = np.array([np.nan if row[-1] is None else row[-1] for row in rows], dtype=float)
        has_ratio = fo.oracle in TIME_ORACLES
        plotting.plot_sweep(pts, bounds, infeas, plotting.figure_path(out), ratio if has_ratio else None,
                            names, f"{problem.name} r={r}".strip())
    return EXIT_BOUND


# ---------------------------------------------------------------- value

def cmd_value(args) -> int:
    problem, fo = _load(args)
    settings = _settings(args, fo)
    r = args.r if args.r is not None else (fo.r_max or degree_profile(problem).r_min)
    if r < degree_profile(problem).r_min:
        raise RelaxationError(f"order {r} is below the minimal admissible order {degree_profile(problem).r_min}")
    scaled, rec = canonicalize(problem)
    sdp = build_relaxation(scaled, r, rec, settings.localize)
    outcome = solve(sdp, settings)
    if outcome.status != Status.LOWER_BOUND:
        print(f"order {r}: {outcome.status.value}, no value function ({outcome.message})", file=sys.stderr)
        return exit_code([outcome])
    cert = extract_value_polynomial(outcome, sdp)
    spec = SweepSpec.parse(args.grid) if args.grid else SweepSpec(tuple((v, v, 1) for v in problem.x0))
    spec.check_within(problem)
    fn = TIME_ORACLES.get(fo.oracle or "", lambda x: math.nan)
    rows = value_gap_grid(cert, fn, spec.points())
    out = args.out or "value.csv"
    write_gap_csv(rows, out, problem.state_block.names)
    print(f"bound {outcome.bound:.6f}, Lambda(x0) {cert.dual_value:.6f}, {len(rows)} grid rows -> {out}")
    if not args.no_plot:
        pts = np.array([row.x for row in rows])
        plotting.plot_value_gap(pts, np.array([row.value for row in rows]),
                                np.array([row.gap for row in rows]), plotting.figure_path(out),
                                problem.state_block.names, f"{problem.name} r={r}".strip())
    return EXIT_BOUND


# ---------------------------------------------------------------- export

def cmd_export(args) -> int:
    problem, fo = _load(args)
    r = args.r if args.r is not None else (fo.r_min or degree_profile(problem).r_min)
    scaled, rec = canonicalize(problem)
    sdp = build_relaxation(scaled, r, rec, args.localize)
    export_sdpa(sdp, args.out)
    for line in describe(sdp).lines():
        print(line)
    return EXIT_BOUND


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ocplmi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, orders=True):
        sp.add_argument("problem", help="YAML problem file")
        sp.add_argument("--tol", type=float, help="solver gap and feasibility tolerance")
        sp.add_argument("--certificate-threshold", type=float)
        sp.add_argument("--ball-constraint", action="store_true",
                        help="append the redundant ball inequality to the normalized sets")
        sp.add_argument("--localize", choices=("marginal", "full"), default="marginal")
        sp.add_argument("--no-plot", action="store_true", help="skip the PNG next to the CSV")
        if orders:
            sp.add_argument("--r-min", type=int)
            sp.add_argument("--r-max", type=int)

    s = sub.add_parser("solve", help="run the hierarchy r_min..r_max")
    common(s)
    s.add_argument("--out", help="CSV output path")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="solve over a grid of initial states")
    common(s)
    s.add_argument("--grid", required=True, help="lo:hi:count per coordinate, comma separated")
    s.add_argument("--r", type=int, help="relaxation order (top order in certificate mode)")
    s.add_argument("--mode", choices=("bounds", "certificate"), default="bounds")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", help="CSV output path (default sweep.csv)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("value", help="tabulate the dual value polynomial on a grid")
    common(s, orders=False)
    s.add_argument("--r", type=int)
    s.add_argument("--grid")
    s.add_argument("--out", help="CSV output path (default value.csv)")
    s.set_defaults(func=cmd_value)

    s = sub.add_parser("export-sdp", help="write one relaxation in SDPA sparse format")
    common(s, orders=False)
    s.add_argument("--r", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    try:
        return args.func(args)
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (RelaxationError, HierarchyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
