"""Command-line entry point.

Subcommands::

    solve         positive, negative and nodal solutions with certificates
    flow          one descent trajectory from a field file (or a scaled bump)
    project       cone projection of a field file
    linear-check  sign of linear solutions for random nonnegative loads
    oracle        projection solver against exhaustive active-set enumeration

Exit status: 0 success, 2 configuration error, 3 bracketing failure,
4 nodal-search failure, 5 flow budget exhausted, 6 results computed but not
certified.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cli_io
from .cli_io import (
    EXIT_BUDGET,
    EXIT_OK,
    EXIT_UNCERTIFIED,
    ConfigError,
    RunConfig,
    load_config,
    read_field,
    write_trajectory,
)
from .fields import default_seeds, random_field, random_load
from .flow import Tag, integrate
from .moreau import enumerate_projection, project_onto_cone
from .radial_space import build_grid, build_structure, solve_linear_positivity

log = logging.getLogger("biharmonic_nodal")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, cfg) -> Path:
    out = Path(args.out if args.out else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _field_arg(args, problem):
    if args.field:
        r, u = read_field(args.field)
        problem.grid.check_field(u, str(args.field))
        if r is not None and not np.allclose(r, problem.grid.radii, rtol=1e-12, atol=0):
            raise ConfigError([f"{args.field}: radii do not match the configured grid"])
        return u
    u = default_seeds(problem.grid)[0]
    return args.scale * u / problem.norm(u)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(cli_io._jsonable(doc), indent=2, sort_keys=True) + "\n")


def cmd_solve(args) -> int:
    cfg = _config(args)
    summary = cli_io.run(cfg, _out(args, cfg))
    checks = summary.checks
    for name, ok in checks.items():
        log.info("%-20s %s", name, "ok" if ok else "FAILED")
    if summary.error:
        print(f"{summary.error['phase']}: {summary.error['message']}", file=sys.stderr)
    else:
        for name, rec in summary.solutions.items():
            rep = rec["report"]
            print(f"{name:9s} energy={rep['energy']:.10g} residual={rep['residual']:.2e} "
                  f"min={rep['census']['min_value']:.4g} max={rep['census']['max_value']:.4g}")
        failed = [k for k, v in checks.items() if not v]
        print("certified" if not failed else "not certified: " + ", ".join(failed))
    return summary.exit_code


def cmd_flow(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    u0 = _field_arg(args, problem)
    out = _out(args, cfg)
    outcome, rec = integrate(problem, u0, cfg.flow, monitor=True)
    write_trajectory(out / "trajectory.csv", rec, cfg.output.stride)
    cli_io.write_solution(out / "terminal.csv", problem, outcome.terminal)
    _write_json(out / "outcome.json", {
        "tag": outcome.tag.value,
        "steps": outcome.steps,
        "terminal_energy": outcome.terminal_energy,
        "terminal_grad_norm": outcome.terminal_grad_norm,
        "terminal_norm": outcome.terminal_norm,
    })
    print(f"{outcome.tag.value} after {outcome.steps} steps, energy {outcome.terminal_energy:.10g}")
    return EXIT_BUDGET if outcome.tag is Tag.UNDETERMINED else EXIT_OK


def cmd_project(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    u = _field_arg(args, problem)
    out = _out(args, cfg)
    split = project_onto_cone(problem.structure, u)
    cols = {"r": problem.grid.radii, "u": u, "positive": split.positive,
            "dual": split.dual, "multiplier": split.multipliers}
    with open(out / "projection.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*cols.values()):
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")
    _write_json(out / "projection.json", {
        "method": split.method,
        "iterations": split.iterations,
        "active_nodes": int(np.sum(split.active)),
        "orth_residual": split.orth_residual,
        "kkt_scaled": split.kkt_scaled,
        "compl_scaled": split.compl_scaled,
        "distance_to_cone": problem.norm(split.dual),
    })
    print(f"{split.method}: {split.iterations} iterations, kkt={split.kkt_scaled:.2e}, "
          f"orth={split.orth_residual:.2e}, active={int(np.sum(split.active))}")
    return EXIT_OK


def cmd_linear_check(args) -> int:
    cfg = _config(args)
    problem = cfg.build_problem()
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(args.count):
        v, rep = solve_linear_positivity(problem.structure, problem.weights, random_load(problem.grid, rng))
        rows.append({"load": k, "min": rep.min_value, "max": rep.max_value,
                     "relative_min": rep.relative_min, "argmin_r": float(problem.grid.radii[np.argmin(v)]),
                     "positive": rep.positive})
    n_fail = sum(not r["positive"] for r in rows)
    worst = min(r["relative_min"] for r in rows)
    _write_json(_out(args, cfg) / "linear_check.json", {"loads": rows, "failures": n_fail, "worst_relative_min": worst})
    print(f"{args.count - n_fail}/{args.count} loads give nonnegative solutions; worst min/max = {worst:.3e}")
    return EXIT_OK if n_fail == 0 else EXIT_UNCERTIFIED


def cmd_oracle(args) -> int:
    cfg = _config(args)
    rng = np.random.default_rng(cfg.seed)
    results = []
    for n in args.nodes:
        t0 = time.perf_counter()
        grid = build_grid(cfg.grid.dim_n, cfg.grid.r_max, n)
        s = build_structure(grid, cfg.potential.values[0] if cfg.potential.kind == "constant" else 1.0)
        fields = np.array([random_field(grid, rng) for _ in range(args.count)])
        exact = enumerate_projection(s.dense_gram(), fields)
        errs = []
        for u, p in zip(fields, exact):
            d = project_onto_cone(s, u).positive - p
            errs.append(float(np.sqrt(d @ (s.gram @ d))))
        results.append({"n": n, "samples": args.count, "max_error": max(errs),
                        "seconds": time.perf_counter() - t0})
        print(f"n={n:3d}: max gram-norm error {max(errs):.2e} over {args.count} fields")
    _write_json(_out(args, cfg) / "oracle.json", results)
    return EXIT_OK if all(r["max_error"] <= args.tol for r in results) else EXIT_UNCERTIFIED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="configuration file (default: reference problem)")
    common.add_argument("--out", type=Path, help="output directory (default: [output] directory)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="biharmonic-nodal", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="positive, negative and nodal solutions")
    for name, helptext in (("flow", "one descent trajectory"), ("project", "cone projection of a field")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--field", type=Path, help="CSV with columns r,u (default: scaled positive bump)")
        p.add_argument("--scale", type=float, default=50.0, help="gram norm of the default bump")
    p = sub.add_parser("linear-check", parents=[common], help="positivity of linear solves")
    p.add_argument("--count", type=int, default=100)
    p = sub.add_parser("oracle", parents=[common], help="projection vs exhaustive enumeration")
    p.add_argument("--nodes", type=int, nargs="+", default=[6, 8, 10, 12])
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    return parser


COMMANDS = {
    "solve": cmd_solve,
    "flow": cmd_flow,
    "project": cmd_project,
    "linear-check": cmd_linear_check,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
