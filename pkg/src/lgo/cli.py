"""``lgo`` command-line interface.

Exit codes: 0 ok, 1 input error, 2 no convergence, 3 certificate or check
failure, 4 barrier-condition failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import analysis, formats, levelset, problems
from .errors import ConfigError, InputError, NumericalDivergenceError, UnsupportedCombinationError
from .metric import MetricKind
from .solver import (
    Solution,
    SolverParams,
    dual_energy,
    extract_certificate,
    primal_energy,
    energy_floor,
    relative_gap,
    solve_relaxed,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_CHECK_FAILED = 3
EXIT_BARRIER = 4

log = logging.getLogger("lgo")


class Reporter:
    """Collects key=value lines, prints them and optionally writes them to a file."""

    def __init__(self, path=None):
        self.path = path
        self.lines = []

    def add(self, *lines):
        for line in lines:
            self.lines.append(line)
            print(line)

    def close(self):
        if self.path:
            with open(self.path, "w") as fh:
                fh.write("\n".join(self.lines) + "\n")


def _params(args, grid):
    overrides = {}
    for key in ("max_iters", "tau", "sigma"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "tol", None) is not None:
        overrides["tol_gap"] = args.tol
    return SolverParams.for_grid(grid, **overrides)


def _load_solution(problem, path):
    (nx, ny, h, _), sec, footer = formats.read_solution(path)
    grid = problem.grid
    if (ny, nx) != grid.shape or h != grid.h:
        raise InputError(f"{path}: grid does not match the problem")
    u, T = sec["u"], (sec["Tx"], sec["Ty"])
    P = primal_energy(problem, u)
    D = dual_energy(problem, T)
    return Solution(u, T, P, D, relative_gap(P, D, energy_floor(problem)), footer["iters"], footer["converged"])


def _solve_or_load(problem, args, path):
    if path:
        return _load_solution(problem, path)
    return solve_relaxed(problem, _params(args, problem.grid))


# -- verbs ---------------------------------------------------------------------------


def cmd_solve(args, rep):
    problem = formats.read_problem(args.problem)
    sol = solve_relaxed(problem, _params(args, problem.grid))
    formats.write_solution(args.out, problem.grid, sol)
    rep.add(
        f"energy={formats.fmt_float(sol.primal_energy)}",
        f"dual={formats.fmt_float(sol.dual_energy)}",
        f"gap={sol.gap:.6e}",
        f"iters={sol.iters}",
        f"converged={int(sol.converged)}",
    )
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def cmd_verify(args, rep):
    problem = formats.read_problem(args.problem)
    sol = _load_solution(problem, args.solution)
    report = extract_certificate(problem, sol, tol_contact=args.tol_contact)
    rep.add(f"gap={sol.gap:.6e}", *report.as_lines())
    failed = report.failures()
    rep.add(f"failures={','.join(failed) if failed else 'none'}")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def _stencil(args, problem):
    if args.stencil is not None:
        return args.stencil
    return 4 if problem.metric.kind is MetricKind.ELL1 else 8


def cmd_levelset(args, rep):
    problem = formats.read_problem(args.problem)
    args.stencil = _stencil(args, problem)
    E, value = levelset.solve_levelset(problem, args.t, args.stencil, return_value=True)
    rep.add(
        f"t={formats.fmt_float(args.t)}",
        f"stencil={args.stencil}",
        f"cut_value={formats.fmt_float(value)}",
        f"cells_in_set={int(E[problem.grid.interior].sum())}",
        f"stencil_bias={levelset.angular_bias(problem.metric, args.stencil):.6e}",
    )
    if args.out:
        formats.write_field(args.out, problem.grid, "E", E, binary=True)
    return EXIT_OK


def _thresholds(spec):
    if ":" in spec:
        lo, hi, n = spec.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    return np.array([float(t) for t in spec.split(",")])


def cmd_stack(args, rep):
    problem = formats.read_problem(args.problem)
    try:
        ts = _thresholds(args.thresholds)
    except ValueError as exc:
        raise InputError(f"bad --thresholds: {exc}") from None
    args.stencil = _stencil(args, problem)
    res = levelset.stack_levelsets(problem, ts, args.stencil)
    rep.add(f"thresholds={len(ts)}", f"stencil={args.stencil}", f"violations={res.violations}")
    if args.solution:
        sol = _load_solution(problem, args.solution)
        inner = problem.grid.interior
        dist = float(np.abs(res.u - sol.u)[inner].max(initial=0.0))
        rep.add(f"sup_distance_to_solution={dist:.6e}")
    if args.out:
        formats.write_field(args.out, problem.grid, "u", res.u)
    return EXIT_OK


def cmd_compare(args, rep):
    p1 = formats.read_problem(args.problem)
    p2 = formats.read_problem(args.problem2)
    s1 = _solve_or_load(p1, args, args.solution)
    s2 = _solve_or_load(p2, args, args.solution2)
    report = analysis.check_comparison(p1, p2, s1, s2)
    rep.add(*report.as_lines())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_barrier_check(args, rep):
    problem = formats.read_problem(args.problem)
    report = analysis.barrier_condition_check(problem, args.samples, args.seed)
    rep.add(*report.as_lines())
    return EXIT_OK if report.verdict == "satisfied" else EXIT_BARRIER


def cmd_modulus(args, rep):
    problem = formats.read_problem(args.problem)
    sol = _solve_or_load(problem, args, args.solution)
    target = None
    if args.alpha is not None:
        target = (1 + args.alpha) / 2 if args.lipschitz_data else args.alpha / 2
    report = analysis.holder_modulus(sol.u, problem.grid, target_exponent=target)
    rep.add(*report.as_lines())
    return EXIT_OK if report.meets_target else EXIT_CHECK_FAILED


EXAMPLES = {
    "constant": lambda n, m: problems.constant_problem(n, metric=m),
    "step": lambda n, m: problems.step_problem(n, metric=m),
    "block": lambda n, m: problems.block_problem(n, metric=m),
    "square": lambda n, m: problems.constant_problem(n, value=0.0, metric=m),
    "disk": lambda n, m: problems.disk_problem(lambda X, Y: X, n, metric=m),
}


def cmd_example(args, rep):
    problem = EXAMPLES[args.name](args.n, args.metric)
    formats.write_problem(args.out, problem)
    rep.add(f"wrote={args.out}", f"cells={problem.grid.nx}x{problem.grid.ny}", f"h={formats.fmt_float(problem.grid.h)}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="lgo", description="Anisotropic obstacle least-gradient solver")
    parser.add_argument("--report", help="also write the report lines to this file")
    parser.add_argument("--seed", type=int, default=42, help="RNG seed for sampling-based checks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_flags(p):
        p.add_argument("--max-iters", type=int, dest="max_iters")
        p.add_argument("--tol", type=float, help="relative duality-gap tolerance")
        p.add_argument("--tau", type=float)
        p.add_argument("--sigma", type=float)

    p = sub.add_parser("solve", help="solve the relaxed problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check the structure certificate of a solution")
    p.add_argument("--problem", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--tol-contact", type=float, dest="tol_contact")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("levelset", help="min-cut solution of one level-set problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--stencil", type=int, choices=(4, 8), help="default: 4 for ell1 metrics, 8 otherwise")
    p.add_argument("--out")
    p.set_defaults(func=cmd_levelset)

    p = sub.add_parser("stack", help="rebuild u from stacked level sets")
    p.add_argument("--problem", required=True)
    p.add_argument("--thresholds", required=True, help="comma list or lo:hi:count; write --thresholds=-1:1:9 when the list starts with a minus sign")
    p.add_argument("--stencil", type=int, choices=(4, 8), help="default: 4 for ell1 metrics, 8 otherwise")
    p.add_argument("--solution", help="solution file to compare against")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("compare", help="comparison principle for two data sets")
    p.add_argument("--problem", required=True)
    p.add_argument("--problem2", required=True)
    p.add_argument("--solution")
    p.add_argument("--solution2")
    solver_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("barrier-check", help="sample the barrier condition along the boundary")
    p.add_argument("--problem", required=True)
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_barrier_check)

    p = sub.add_parser("modulus", help="fit a Hoelder exponent to a solution")
    p.add_argument("--problem", required=True)
    p.add_argument("--solution")
    p.add_argument("--alpha", type=float, help="Hoelder exponent of the datum")
    p.add_argument("--lipschitz-data", action="store_true", help="datum is C^{1,alpha}: target (1+alpha)/2")
    solver_flags(p)
    p.set_defaults(func=cmd_modulus)

    p = sub.add_parser("example", help="write one of the built-in reference problems")
    p.add_argument("name", choices=sorted(EXAMPLES))
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--metric", default="euclidean-weighted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    rep = Reporter(args.report)
    try:
        code = args.func(args, rep)
    except (InputError, ConfigError, UnsupportedCombinationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    except NumericalDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NOT_CONVERGED
    rep.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
