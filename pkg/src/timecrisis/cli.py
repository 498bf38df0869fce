"""Command-line front end: simulate / solve / verify / report.

Exit codes: 0 success, 2 usage error, 3 solver non-convergence (artifacts
still written), 4 assumption violation (tangential crossing, missing
transversality, broken structure).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .catalog import catalog, catalog_init, catalog_names, load_problem
from .errors import NonTransverseError, StructureError, TimeCrisisError
from .fileio import fmt17, write_json
from .multipliers import build_certificate, certificate_to_json, costate_to_csv
from .problem import ProblemSpec
from .simulate import ControlSignal, crisis_cost, crossings_to_json, detect_crossings, integrate, trajectory_to_csv
from .solve import Solution, SolverOptions, solve_fixed_structure, solve_time_crisis
from .verify import FirstOrderTols, VerificationReport, verify_solution

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_ASSUMPTION = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", help=f"catalog problem ({', '.join(catalog_names())})")
    p.add_argument("--config", help="path to a JSON problem config")
    p.add_argument("--out", default=".", help="output directory (default: cwd)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-arc", type=int, default=500, help="normalized cells per arc")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--n-cells", type=int, default=2000, help="physical control cells")
    p.add_argument("--eq-tol", type=float, default=1e-8)
    p.add_argument("--kkt-tol", type=float, default=1e-6)
    p.add_argument("--pontry-samples", type=int, default=101)
    p.add_argument("--omega-samples", type=int, default=200)
    p.add_argument("--no-timestamp", action="store_true", help="suppress timestamp headers")


def _load_spec(args) -> ProblemSpec:
    if bool(args.problem) == bool(args.config):
        raise UsageError("exactly one of --problem/--config is required")
    if args.problem:
        try:
            return catalog(args.problem)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
    return load_problem(args.config)


class UsageError(Exception):
    pass


def _parse_control(text: str, spec: ProblemSpec, n_cells: int) -> ControlSignal:
    """Constant shorthand ("0.5" or "0.5,-0.2") or "csv:PATH" with one row of
    u_1..u_m per cell."""
    if text.startswith("csv:"):
        rows = []
        with open(text[4:], "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line[0].isalpha() or line.startswith("u_"):
                    continue
                rows.append([float(v) for v in line.split(",")])
        vals = np.asarray(rows, dtype=float)
        if vals.shape[1] != spec.m:
            raise UsageError(f"control CSV has {vals.shape[1]} columns, expected {spec.m}")
        return ControlSignal(vals, 0.0, spec.T)
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse control {text!r}") from exc
    if len(vals) != spec.m:
        raise UsageError(f"constant control needs {spec.m} components, got {len(vals)}")
    return ControlSignal.constant(vals, n_cells, 0.0, spec.T)


def _opts(args) -> SolverOptions:
    return SolverOptions(
        n_arc=args.n_arc,
        substeps=args.substeps,
        n_phys=args.n_cells,
        eq_tol=args.eq_tol,
        kkt_tol=args.kkt_tol,
    )


def cmd_simulate(args) -> int:
    spec = _load_spec(args)
    if not args.control:
        raise UsageError("simulate requires --control")
    control = _parse_control(args.control, spec, args.n_cells)
    traj = integrate(spec, control, args.substeps)
    crossings = detect_crossings(spec, traj)
    cost = crisis_cost(spec, traj, crossings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = not args.no_timestamp
    trajectory_to_csv(spec, traj, out / "trajectory.csv", timestamp=stamp)
    crossings_to_json(crossings, out / "crossings.json", timestamp=stamp, cost=cost)
    print(f"crisis_cost = {fmt17(cost)}")
    print(f"crossings: r = {crossings.r} at " + ", ".join(fmt17(t) for t in crossings.times))
    return EXIT_OK


def _default_solve(spec: ProblemSpec, args) -> Solution:
    opts = _opts(args)
    if args.init_tau:
        tau = tuple(float(v) for v in args.init_tau.split(","))
        if args.init_control:
            u0 = float(args.init_control.split(",")[0])
        else:
            u0 = 0.5
        r = len(tau)
        control = ControlSignal.constant(
            [u0] * spec.m, (r + 1) * opts.n_arc, 0.0, float(r + 1), "normalized"
        )
        return solve_fixed_structure(spec, r, control, tau, opts)
    if args.init_control:
        control = _parse_control(args.init_control, spec, args.n_cells)
        return solve_time_crisis(spec, control, opts)
    if spec.name in catalog_names():
        init = catalog_init(spec.name)
        if init.kind == "normalized":
            r = len(init.tau)
            control = ControlSignal.constant(
                [init.u_const] * spec.m, (r + 1) * opts.n_arc, 0.0, float(r + 1), "normalized"
            )
            return solve_fixed_structure(spec, r, control, init.tau, opts)
        control = ControlSignal.from_pieces(init.pieces, args.n_cells, 0.0, spec.T)
        return solve_time_crisis(spec, control, opts)
    raise UsageError("solve needs --init-control and/or --init-tau for config problems")


def cmd_solve(args) -> int:
    spec = _load_spec(args)
    sol = _default_solve(spec, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = not args.no_timestamp
    write_json(out / "solution.json", sol.to_dict(), timestamp=stamp)
    sol.iteration_log_to_csv(out / "iterations.csv", timestamp=stamp)
    print(f"objective = {fmt17(sol.objective)}")
    print(f"tau = [" + ", ".join(fmt17(t) for t in sol.cv.tau) + "]")
    print(f"converged = {sol.converged}, structure_consistent = {sol.structure_consistent}")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _load_or_solve(spec: ProblemSpec, args) -> tuple[Solution, int]:
    out = Path(args.out)
    sol_path = out / "solution.json"
    if sol_path.exists():
        with open(sol_path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        if d.get("problem") and spec.name and d["problem"] != spec.name:
            raise UsageError(
                f"solution artifact is for problem {d['problem']!r}, not {spec.name!r}"
            )
        return Solution.from_dict(spec, d), EXIT_OK
    sol = _default_solve(spec, args)
    out.mkdir(parents=True, exist_ok=True)
    stamp = not args.no_timestamp
    write_json(sol_path, sol.to_dict(), timestamp=stamp)
    sol.iteration_log_to_csv(out / "iterations.csv", timestamp=stamp)
    return sol, EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def cmd_verify(args) -> int:
    spec = _load_spec(args)
    sol, code = _load_or_solve(spec, args)
    cert = build_certificate(spec, sol)
    report = verify_solution(
        spec,
        sol,
        cert,
        omega_count=args.omega_samples,
        seed=args.seed,
        pontry_samples=args.pontry_samples,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = not args.no_timestamp
    certificate_to_json(cert, out / "certificate.json", timestamp=stamp)
    costate_to_csv(spec, sol, cert, out / "costate.csv", timestamp=stamp)
    report.to_json(out / "verification.json", timestamp=stamp)
    print(report.table())
    if code != EXIT_OK:
        return code
    if report.passed:
        return EXIT_OK
    return EXIT_ASSUMPTION if not report.entry("lig_margin").passed else 1


def cmd_report(args) -> int:
    spec = _load_spec(args)
    sol, code = _load_or_solve(spec, args)
    cert = build_certificate(spec, sol)
    report = verify_solution(
        spec,
        sol,
        cert,
        omega_count=args.omega_samples,
        seed=args.seed,
        pontry_samples=args.pontry_samples,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    lines.append(f"problem: {spec.name}")
    lines.append(f"objective = {fmt17(sol.objective)}")
    lines.append("tau = [" + ", ".join(fmt17(t) for t in sol.cv.tau) + "]")
    lines.append("gamma = [" + ", ".join(fmt17(g) for g in cert.gamma) + "]")
    lines.append("H_arc = [" + ", ".join(fmt17(h) for h in cert.H_arc) + "]")
    lines.append(f"H0 = {fmt17(cert.H0)}")
    lines.append(f"converged = {sol.converged}, structure_consistent = {sol.structure_consistent}")
    lines.append("")
    lines.append(report.table())
    text = "\n".join(lines) + "\n"
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        if not args.no_timestamp:
            from .fileio import timestamp_line

            fh.write(f"# generated {timestamp_line()}\n")
        fh.write(text)
    print(text, end="")
    if code != EXIT_OK:
        return code
    return EXIT_OK if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timecrisis",
        description="Crossing-structure solver and optimality-certificate checker "
        "for finite-horizon time-crisis optimal control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_sim = sub.add_parser("simulate", help="integrate a control, detect crossings, report the cost")
    _add_common(p_sim)
    p_sim.add_argument("--control", help='constant shorthand ("1.0") or "csv:PATH"')
    p_sim.set_defaults(func=cmd_simulate)

    p_solve = sub.add_parser("solve", help="solve the crossing-structure-fixed problem")
    _add_common(p_solve)
    p_solve.add_argument("--init-control", help="initial control (shorthand or csv:PATH)")
    p_solve.add_argument("--init-tau", help="comma-separated initial crossing times (normalized init)")
    p_solve.set_defaults(func=cmd_solve)

    p_ver = sub.add_parser("verify", help="build and verify the optimality certificate")
    _add_common(p_ver)
    p_ver.add_argument("--init-control")
    p_ver.add_argument("--init-tau")
    p_ver.set_defaults(func=cmd_verify)

    p_rep = sub.add_parser("report", help="merged human-readable summary with pass/fail table")
    _add_common(p_rep)
    p_rep.add_argument("--init-control")
    p_rep.add_argument("--init-tau")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonTransverseError, StructureError) as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except TimeCrisisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
