"""
Command line interface.

Subcommands
-----------
solve         solve one problem instance, write a solution summary, the
              sampled boundary control, the mesh and a control figure
study         run a convergence study, write the rate table and figure
oracle-check  compare the iterative solver against the dense oracle on a
              small mesh
operators     per-level report of the boundary operator pair and the
              enrichment orthogonality

Exit codes: 0 success, 2 usage error, 3 solver failure, 4 acceptance
threshold violated.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import harness, report
from .assembly import AssemblyError
from .control_ops import BoxBounds
from .linalg import SolverError
from .mesh import MeshError, export_text
from .optimizer import (OptimizationError, ProblemSpec, qp_oracle,
                        solve_control)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_THRESHOLD = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crbc",
        description="Nonconforming finite elements for box-constrained "
                    "Dirichlet boundary control of the Poisson equation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--domain", nargs="+", default=["square"],
                       metavar=("NAME", "FILE"),
                       help="square | pentagon | polygon CORNER_FILE")
        p.add_argument("--levels", type=int, default=3,
                       help="number of study levels / refinement level")
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--bounds", nargs=2, type=float, default=None,
                       metavar=("UA", "UB"))
        p.add_argument("--problem", nargs="+", default=["inactive"],
                       metavar=("NAME", "FILE"),
                       help="inactive | active | custom PROBLEM_FILE")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n0", type=int, default=4,
                       help="base cells per side of the square family")
        p.add_argument("--max-iter", type=int, default=50000)
        p.add_argument("--clip-fraction", type=float, default=0.5)
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    for name in ("solve", "study", "oracle-check", "operators"):
        common(sub.add_parser(name))
    return parser


def _parse_domain(args):
    spec = args.domain
    name = spec[0]
    if name in ("square", "pentagon"):
        if len(spec) != 1:
            raise ValueError("domain %s takes no file argument" % name)
        return harness.MeshFamily(name, n0=args.n0)
    if name == "polygon":
        if len(spec) != 2:
            raise ValueError("usage: --domain polygon CORNER_FILE")
        corners = np.loadtxt(spec[1], ndmin=2)
        return harness.MeshFamily("polygon", n0=args.n0, corners=corners)
    raise ValueError("unknown domain %r" % name)


def _expression_function(expr):
    ns = {"pi": np.pi, "sin": np.sin, "cos": np.cos, "exp": np.exp,
          "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "log": np.log}
    code = compile(expr, "<problem-file>", "eval")

    def func(p):
        p = np.asarray(p, dtype=float)
        local = dict(ns)
        local["x1"] = p[..., 0]
        local["x2"] = p[..., 1]
        val = eval(code, {"__builtins__": {}}, local)
        return np.broadcast_to(np.asarray(val, dtype=float),
                               p[..., 0].shape).copy()
    return func


def _parse_problem(args):
    spec = args.problem
    name = spec[0]
    if name == "inactive":
        problem = harness.manufactured_inactive(args.alpha)
    elif name == "active":
        problem = harness.manufactured_active(
            args.alpha, clip_fraction=args.clip_fraction)
    elif name == "custom":
        if len(spec) != 2:
            raise ValueError("usage: --problem custom PROBLEM_FILE")
        with open(spec[1]) as fh:
            data = json.load(fh)
        problem = ProblemSpec(
            None,
            data.get("alpha", args.alpha),
            BoxBounds(data.get("u_a", -1.0), data.get("u_b", 1.0)),
            f=_expression_function(data["f"]) if data.get("f") else None,
            y_d=_expression_function(data["y_d"]) if data.get("y_d") else None,
            name="custom")
    else:
        raise ValueError("unknown problem %r" % name)
    if args.bounds is not None:
        problem = ProblemSpec(problem.mesh, problem.alpha,
                              BoxBounds(*args.bounds), problem.f, problem.y_d,
                              problem.exact, problem.name)
    return problem


def _ensure_outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_solve(args):
    family = _parse_domain(args)
    problem = _parse_problem(args)
    mesh = family.mesh(max(args.levels - 1, 0))
    p = problem.with_mesh(mesh)
    sol = solve_control(p, tol=args.tol, max_iter=args.max_iter)
    outdir = _ensure_outdir(args)

    breaks, vals = sol.control.arclength_segments()
    rows = [{"edge": int(k), "s_mid": 0.5 * (breaks[k] + breaks[k + 1]),
             "length": breaks[k + 1] - breaks[k], "control": float(v)}
            for k, v in enumerate(vals)]
    names = ["edge", "s_mid", "length", "control"]
    meta = report.make_meta(args, seed=args.seed)
    summary = {
        "problem": problem.name, "alpha": problem.alpha,
        "bounds": [problem.bounds.u_a, problem.bounds.u_b],
        "h": mesh.h, "n_boundary_edges": mesh.n_boundary_edges,
        "objective": sol.objective, "kkt_residual": sol.kkt_residual,
        "iterations": sol.iterations,
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump({"meta": meta, "summary": summary}, fh, indent=2)
    if args.format == "json":
        with open(os.path.join(outdir, "control.json"), "w") as fh:
            fh.write(report.rows_to_json(rows, meta))
    else:
        with open(os.path.join(outdir, "control.csv"), "w") as fh:
            fh.write(report.rows_to_csv(rows, names))
    with open(os.path.join(outdir, "mesh.txt"), "w") as fh:
        fh.write(export_text(mesh))
    if not args.no_figures:
        exact_s = problem.exact.control if problem.exact else None
        report.render_control_figure(
            sol.control, os.path.join(outdir, "control.png"),
            exact_s=exact_s, flux=sol.flux)
        report.render_mesh_figure(mesh, os.path.join(outdir, "mesh.png"))
    print("solve: objective=%.6e kkt=%.3e iterations=%d -> %s"
          % (sol.objective, sol.kkt_residual, sol.iterations, outdir))
    return EXIT_OK


def cmd_study(args):
    family = _parse_domain(args)
    problem = _parse_problem(args)
    table = harness.convergence_study(
        problem, args.levels, domain=family.domain, n0=args.n0,
        tol=args.tol, max_iter=args.max_iter,
        progress=lambda msg: print("  " + msg))
    outdir = _ensure_outdir(args)
    meta = report.make_meta(args, seed=args.seed)
    if args.format == "json":
        path = os.path.join(outdir, "study.json")
        with open(path, "w") as fh:
            fh.write(report.table_to_json(table, meta))
    else:
        path = os.path.join(outdir, "study.csv")
        with open(path, "w") as fh:
            fh.write(report.table_to_csv(table))
    if not args.no_figures:
        report.render_convergence_figure(
            table, os.path.join(outdir, "convergence.png"))
    print(report.table_to_csv(table))
    print("study written to %s" % path)
    return EXIT_OK


def cmd_oracle_check(args):
    family = _parse_domain(args)
    problem = _parse_problem(args)
    mesh = family.mesh(0)
    p = problem.with_mesh(mesh)
    sol = solve_control(p, tol=1e-11, max_iter=args.max_iter)
    u_oracle = qp_oracle(p)
    dev = harness.control_error_vs_control(sol.control, u_oracle)
    j_solver = sol.objective
    j_oracle = p.workspace().objective(u_oracle)
    j_gap = abs(j_solver - j_oracle)
    outdir = _ensure_outdir(args)
    payload = {
        "meta": report.make_meta(args, seed=args.seed),
        "n_boundary_edges": mesh.n_boundary_edges,
        "control_deviation_l2": dev,
        "objective_solver": j_solver,
        "objective_oracle": j_oracle,
        "objective_gap": j_gap,
    }
    with open(os.path.join(outdir, "oracle.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
    print("oracle-check: max control deviation %.3e, objective gap %.3e"
          % (dev, j_gap))
    ok = dev <= 1e-8 and j_gap <= 1e-12 * (1.0 + abs(j_solver))
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_operators(args):
    family = _parse_domain(args)
    rows = harness.operator_report(args.levels, family=family,
                                   seed=args.seed)
    outdir = _ensure_outdir(args)
    names = ["level", "h", "n_boundary", "orthogonality", "round_trip",
             "p1_norm"]
    meta = report.make_meta(args, seed=args.seed)
    if args.format == "json":
        path = os.path.join(outdir, "operators.json")
        with open(path, "w") as fh:
            fh.write(report.rows_to_json(rows, meta))
    else:
        path = os.path.join(outdir, "operators.csv")
        with open(path, "w") as fh:
            fh.write(report.rows_to_csv(rows, names))
    if not args.no_figures:
        report.render_operator_figure(
            rows, os.path.join(outdir, "operators.png"))
    for r in rows:
        print("level %d: orthogonality %.3e, round trip %.3e, "
              "lift norm %.4f" % (r["level"], r["orthogonality"],
                                  r["round_trip"], r["p1_norm"]))
    ok = all(r["orthogonality"] <= 1e-11 and r["round_trip"] <= 1e-12
             for r in rows)
    return EXIT_OK if ok else EXIT_THRESHOLD


def cli_main(argv=None):
    """Entry point returning the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    np.random.seed(args.seed)
    handlers = {
        "solve": cmd_solve,
        "study": cmd_study,
        "oracle-check": cmd_oracle_check,
        "operators": cmd_operators,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, MeshError) as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, OptimizationError, AssemblyError,
            harness.StudyError) as err:
        print("solver failure: %s" % err, file=sys.stderr)
        return EXIT_SOLVER


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
