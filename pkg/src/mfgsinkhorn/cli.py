"""Command-line entry point.

Four subcommands: ``solve`` runs a configuration and writes frames plus a
manifest, ``verify-oracle`` cross-checks the message machinery against the
dense tensor route on a built-in randomized suite, ``diagnose`` re-derives
the energy breakdown of a finished run from its on-disk artifacts, and
``describe`` prints the fully resolved configuration.

Exit codes for ``solve``: 0 converged, 2 iteration budget exhausted,
3 diverged, 1 configuration or I/O error (the output directory then holds
an ``INCOMPLETE`` marker naming the failure).
"""

from __future__ import annotations

import argparse
import sys

from ._version import __version__
from .bruteforce import run_oracle_suite
from .config import ConfigError, describe_json, parse_config, parse_config_dict
from .diagnostics import energy_breakdown
from .frames import (
    load_manifest,
    read_frame_stack,
    verify_checksums,
    write_incomplete_marker,
    write_run,
)
from .messages import MarginalSet, PotentialStack
from .solver import solve

STATUS_EXIT = {"converged": 0, "max_iter": 2, "diverged": 3}
DIAGNOSE_ENERGY_TOL = 1e-12


def _add_solve_flags(parser, *, with_output=True):
    parser.add_argument("--config", required=True, help="path to a run configuration")
    parser.add_argument("--tol", type=float, help="override solver.tol")
    parser.add_argument("--max-iter", type=int, help="override solver.max_iter")
    parser.add_argument(
        "--sweep",
        choices=["gauss-seidel", "jacobi"],
        help="override solver.sweep",
    )
    parser.add_argument(
        "--log-domain",
        choices=["auto", "on", "off"],
        help="override solver.log_domain",
    )
    if with_output:
        parser.add_argument("--out", help="override output.out_dir")
        parser.add_argument(
            "--frame-stride", type=int, help="override output.frame_stride"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgsinkhorn",
        description="coupled-population entropic transport solver",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a configuration and write frames")
    _add_solve_flags(p_solve)
    p_solve.add_argument("--quiet", action="store_true", help="suppress the summary")

    p_desc = sub.add_parser("describe", help="print the resolved configuration")
    _add_solve_flags(p_desc)

    p_oracle = sub.add_parser(
        "verify-oracle", help="run the dense cross-check suite"
    )
    p_oracle.add_argument("--instances", type=int, default=20)
    p_oracle.add_argument("--seed", type=int, default=20240)
    p_oracle.add_argument("--quiet", action="store_true")

    p_diag = sub.add_parser(
        "diagnose", help="recompute energies of a finished run from disk"
    )
    p_diag.add_argument("--out", required=True, help="run directory with a manifest")
    p_diag.add_argument("--quiet", action="store_true")
    return parser


def _collect_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "tol", None) is not None:
        overrides["solver.tol"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        overrides["solver.max_iter"] = args.max_iter
    if getattr(args, "sweep", None) is not None:
        overrides["solver.sweep"] = args.sweep.replace("-", "_")
    if getattr(args, "log_domain", None) is not None:
        overrides["solver.log_domain"] = args.log_domain
    if getattr(args, "out", None) is not None:
        overrides["output.out_dir"] = args.out
    if getattr(args, "frame_stride", None) is not None:
        overrides["output.frame_stride"] = args.frame_stride
    return overrides


def _cmd_solve(args) -> int:
    try:
        resolved = parse_config(args.config, overrides=_collect_overrides(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = resolved.output["out_dir"]
    try:
        marginals, potentials, report = solve(resolved.problem, **resolved.solver)
        energies = energy_breakdown(resolved.problem, marginals, potentials)
    except FloatingPointError as exc:
        print(f"error: solve failed: {exc}", file=sys.stderr)
        write_incomplete_marker(out_dir, f"solve failed: {exc}")
        return 1
    try:
        write_run(
            out_dir,
            resolved_config=resolved.canonical,
            config_hash=resolved.config_hash,
            solver_version=__version__,
            problem=resolved.problem,
            marginals=marginals,
            potentials=potentials,
            report=report,
            energies=energies,
            frame_stride=resolved.output["frame_stride"],
            emit_diagnostics=resolved.output["emit_diagnostics"],
        )
    except OSError as exc:
        print(f"error: writing outputs failed: {exc}", file=sys.stderr)
        write_incomplete_marker(out_dir, f"writing outputs failed: {exc}")
        return 1
    if not args.quiet:
        print(
            f"status {report.status} after {report.n_sweeps} sweeps"
            f" (error {report.final_error:.3e}, {report.elapsed:.1f}s)"
        )
        print(f"objective {energies.total:.6f}")
        print(f"outputs in {out_dir}")
    return STATUS_EXIT[report.status]


def _cmd_describe(args) -> int:
    try:
        resolved = parse_config(args.config, overrides=_collect_overrides(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(describe_json(resolved.canonical))
    return 0


def _cmd_verify_oracle(args) -> int:
    report = run_oracle_suite(n_instances=args.instances, seed=args.seed)
    if not args.quiet:
        for line in report.summary_lines():
            print(line)
    return 0 if report.passed else 1


def _cmd_diagnose(args) -> int:
    try:
        manifest = load_manifest(args.out)
    except OSError as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return 1
    failures = []
    for msg in verify_checksums(manifest, args.out):
        failures.append(msg)
    try:
        resolved = parse_config_dict(manifest["config"], base_dir=args.out)
    except ConfigError as exc:
        failures.append(f"embedded config invalid: {exc}")
        resolved = None
    rho = u = None
    if resolved is not None:
        for kind, label in (("frames", "density"), ("potential_frames", "potential")):
            try:
                stack = read_frame_stack(manifest, args.out, kind=kind)
            except (OSError, ValueError) as exc:
                failures.append(f"{label} frames unreadable: {exc}")
                continue
            if kind == "frames":
                rho = stack
            else:
                u = stack
    if failures:
        for msg in failures:
            print(f"error: {msg}", file=sys.stderr)
        return 1

    problem = resolved.problem
    marginals = MarginalSet(rho, problem.grid)
    potentials = PotentialStack(u, problem.grid)
    fresh = energy_breakdown(problem, marginals, potentials).as_dict()
    stored = manifest["energies"]
    worst = 0.0
    for key in ("interaction_total", "final_cost_total", "total"):
        worst = max(worst, abs(fresh[key] - stored[key]))
    for a, b in zip(
        fresh["entropic_per_population"], stored["entropic_per_population"]
    ):
        worst = max(worst, abs(a - b))
    mass_dev = max(
        abs(float(rho[i, k].sum()) - 1.0)
        for i in range(problem.n_populations)
        for k in range(problem.n_steps + 1)
    )
    ok = worst <= DIAGNOSE_ENERGY_TOL
    if not args.quiet:
        print(f"checksums                  all {len(manifest['frames'])} density frames clean")
        print(f"max frame mass deviation   {mass_dev:.3e}")
        print(f"energy recompute deviation {worst:.3e}  (tol {DIAGNOSE_ENERGY_TOL:.0e})")
        print(f"stored objective           {stored['total']:.6f}")
        print(f"verdict                    {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "solve": _cmd_solve,
        "describe": _cmd_describe,
        "verify-oracle": _cmd_verify_oracle,
        "diagnose": _cmd_diagnose,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
