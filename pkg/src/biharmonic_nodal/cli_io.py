"""Run configuration, orchestration and export.

Configuration files are flat sectioned ``key = value`` text::

    [grid]
    dim_n = 5
    r_max = 20.0
    n_nodes = 400

    [potential]
    kind = constant        # or: table (values = comma separated, one per node)
    values = 1.0

    [nonlinearity]
    term1 = 1.0 2.0        # coefficient exponent; term2, term3, ... add terms

    [flow]   FlowConfig fields
    [solver] SolverConfig fields
    [output] directory, stride, monitor_samples
    [run]    seed

Every section and key is optional except that unknown ones are rejected;
omitted values take the defaults below.  All floats are written with 17
significant digits so that files re-read bit for bit.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import default_seeds, random_field, random_load
from .flow import FlowConfig, TrajectoryRecord, invariance_probe
from .model import Problem, build_problem
from .moreau import check_dual_sign, project_onto_cone
from .radial_space import MIN_DIM, MIN_NODES, solve_linear_positivity
from .solver import (
    CriticalPoint,
    SolutionBundle,
    SolverConfig,
    SolverError,
    bundle_checks,
    find_nodal,
    find_signed_solutions,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BRACKET = 3
EXIT_NODAL = 4
EXIT_BUDGET = 5
EXIT_UNCERTIFIED = 6

SOLUTION_COLUMNS = ("r", "u", "laplacian_u")
TRAJECTORY_COLUMNS = ("step", "energy", "grad_norm", "dist_plus", "dist_minus")
SOLUTION_NAMES = ("positive", "negative", "nodal")


class ConfigError(ValueError):
    """All problems found in a configuration; ``violations`` lists them."""

    exit_code = EXIT_CONFIG

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


def _g(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class GridBlock:
    dim_n: int = 5
    r_max: float = 20.0
    n_nodes: int = 400


@dataclass(frozen=True)
class PotentialBlock:
    kind: str = "constant"
    values: tuple = (1.0,)

    def tabulate(self, n_nodes: int):
        return self.values[0] if self.kind == "constant" else np.asarray(self.values)


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    stride: int = 1
    monitor_samples: int = 20


@dataclass(frozen=True)
class RunConfig:
    grid: GridBlock = GridBlock()
    potential: PotentialBlock = PotentialBlock()
    terms: tuple = ((1.0, 2.0),)
    flow: FlowConfig = FlowConfig()
    solver: SolverConfig = SolverConfig()
    output: OutputBlock = OutputBlock()
    seed: int = 0

    def build_problem(self) -> Problem:
        g = self.grid
        return build_problem(g.dim_n, g.r_max, g.n_nodes, self.potential.tabulate(g.n_nodes), self.terms)


_SCALAR_SECTIONS = {
    "grid": GridBlock,
    "flow": FlowConfig,
    "solver": SolverConfig,
    "output": OutputBlock,
}


def _field_types(cls):
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def _convert(raw: str, kind, where: str, errors: list):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        errors.append(f"{where}: cannot read {raw!r} as {kind.__name__}")
        return None


def _read_block(cp, section, cls, errors):
    if not cp.has_section(section):
        return cls(), True
    types = _field_types(cls)
    values = {}
    for key, raw in cp.items(section):
        if key not in types:
            errors.append(f"[{section}] unknown key {key!r}")
            continue
        v = _convert(raw, types[key], f"[{section}] {key}", errors)
        if v is not None:
            values[key] = v
    try:
        return cls(**values), True
    except (TypeError, ValueError) as exc:
        errors.append(f"[{section}] {exc}")
        return cls(), False


def _parse_floats(raw, where, errors):
    try:
        return tuple(float(x) for x in raw.replace(",", " ").split())
    except ValueError:
        errors.append(f"{where}: expected numbers, got {raw!r}")
        return ()


def parse_config(text: str) -> RunConfig:
    """Parse and range-check a configuration; every violation is reported together."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        msg = exc.message if hasattr(exc, "message") else str(exc)
        raise ConfigError([f"syntax error at line {line}: {msg.strip()}"]) from exc

    errors = []
    known = set(_SCALAR_SECTIONS) | {"potential", "nonlinearity", "run"}
    for sec in cp.sections():
        if sec not in known:
            errors.append(f"unknown section [{sec}]")

    grid, _ = _read_block(cp, "grid", GridBlock, errors)
    if int(grid.dim_n) < MIN_DIM:
        errors.append(f"[grid] dim_n = {grid.dim_n}: need N >= {MIN_DIM} so that 2_* = 2N/(N-4) is finite")
    if not (math.isfinite(grid.r_max) and grid.r_max > 0):
        errors.append(f"[grid] r_max = {grid.r_max}: must be positive")
    if grid.n_nodes < MIN_NODES:
        errors.append(f"[grid] n_nodes = {grid.n_nodes}: need at least {MIN_NODES}")
    flow, _ = _read_block(cp, "flow", FlowConfig, errors)
    solver, _ = _read_block(cp, "solver", SolverConfig, errors)
    output, _ = _read_block(cp, "output", OutputBlock, errors)
    if output.stride < 1 or output.monitor_samples < 0:
        errors.append("[output] need stride >= 1 and monitor_samples >= 0")

    potential = PotentialBlock()
    if cp.has_section("potential"):
        sec = cp["potential"]
        for key in sec:
            if key not in ("kind", "values"):
                errors.append(f"[potential] unknown key {key!r}")
        kind = sec.get("kind", "constant")
        values = _parse_floats(sec.get("values", "1.0"), "[potential] values", errors)
        if kind not in ("constant", "table"):
            errors.append(f"[potential] kind must be 'constant' or 'table', got {kind!r}")
        elif kind == "constant" and len(values) != 1:
            errors.append("[potential] a constant potential takes exactly one value")
        elif kind == "table" and len(values) != grid.n_nodes:
            errors.append(f"[potential] table has {len(values)} values for {grid.n_nodes} nodes")
        if values and not all(math.isfinite(v) and v > 0 for v in values):
            errors.append("[potential] values must be finite and bounded below by V0 > 0")
        potential = PotentialBlock(kind, values)

    terms = ((1.0, 2.0),)
    if cp.has_section("nonlinearity"):
        sec = cp["nonlinearity"]
        parsed = []
        keys = sorted(sec, key=lambda k: (len(k), k))
        for key in keys:
            if not (key.startswith("term") and key[4:].isdigit()):
                errors.append(f"[nonlinearity] unknown key {key!r}; use term1, term2, ...")
                continue
            nums = _parse_floats(sec[key], f"[nonlinearity] {key}", errors)
            if len(nums) != 2:
                errors.append(f"[nonlinearity] {key}: expected 'coefficient exponent'")
                continue
            coef, p = nums
            if not coef > 0 or not math.isfinite(coef):
                errors.append(f"[nonlinearity] {key}: coefficient must be positive, got {coef}")
            if grid.dim_n > 4:
                pmax = 2.0 * grid.dim_n / (grid.dim_n - 4) - 2.0
                if not 0 < p < pmax:
                    errors.append(
                        f"[nonlinearity] {key}: exponent {p:g} violates 0 < p < 2_* - 2 = {pmax:g} for N = {grid.dim_n}"
                    )
            parsed.append((coef, p))
        if not parsed and not errors:
            errors.append("[nonlinearity] at least one term is required")
        terms = tuple(parsed)

    seed = 0
    if cp.has_section("run"):
        for key, raw in cp.items("run"):
            if key != "seed":
                errors.append(f"[run] unknown key {key!r}")
            else:
                seed = _convert(raw, int, "[run] seed", errors) or 0

    if errors:
        raise ConfigError(errors)
    return RunConfig(grid, potential, terms, flow, solver, output, seed)


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config`."""

    def val(v):
        return _g(v) if isinstance(v, float) else str(v)

    def block(name, obj):
        lines = [f"[{name}]"]
        lines += [f"{f.name} = {val(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
        return lines

    out = block("grid", cfg.grid)
    out += ["", "[potential]", f"kind = {cfg.potential.kind}",
            "values = " + ", ".join(_g(v) for v in cfg.potential.values)]
    out += ["", "[nonlinearity]"]
    out += [f"term{k + 1} = {_g(c)} {_g(p)}" for k, (c, p) in enumerate(cfg.terms)]
    for name, obj in (("flow", cfg.flow), ("solver", cfg.solver), ("output", cfg.output)):
        out += [""] + block(name, obj)
    out += ["", "[run]", f"seed = {cfg.seed}", ""]
    return "\n".join(out)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config(text)


# -- export ----------------------------------------------------------------------


def write_solution(path, problem: Problem, u) -> Path:
    path = Path(path)
    lap = problem.structure.laplacian @ u
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SOLUTION_COLUMNS)
        for row in zip(problem.grid.radii, u, lap):
            w.writerow([_g(x) for x in row])
    return path


def read_field(path):
    """Radii and values from a CSV with at least the columns ``r`` and ``u``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "u" not in rows[0]:
        raise ValueError(f"{path}: expected a CSV with a 'u' column")
    r = np.array([float(x["r"]) for x in rows]) if "r" in rows[0] else None
    return r, np.array([float(x["u"]) for x in rows])


def write_plot_data(path, problem: Problem, u) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# r u\n")
        for r, x in zip(problem.grid.radii, u):
            fh.write(f"{_g(r)} {_g(x)}\n")
    return path


def write_trajectory(path, record: TrajectoryRecord | None, stride: int = 1) -> Path:
    path = Path(path)
    n = 0 if record is None else len(record)
    keep = list(range(0, n, stride))
    if n and keep[-1] != n - 1:
        keep.append(n - 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k in keep:
            w.writerow([str(k)] + [_g(x) for x in (
                record.energies[k], record.grad_norms[k], record.dist_plus[k], record.dist_minus[k])])
    return path


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.repr}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def export(bundle: SolutionBundle, problem: Problem, out_dir, stride: int = 1) -> list[Path]:
    """Solution CSVs, plot data and trajectory CSVs for the three solutions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name in SOLUTION_NAMES:
        cp: CriticalPoint = getattr(bundle, name)
        files.append(write_solution(out / f"solution_{name}.csv", problem, cp.field))
        files.append(write_plot_data(out / f"solution_{name}.dat", problem, cp.field))
        files.append(write_trajectory(out / f"trajectory_{name}.csv", cp.trajectory, stride))
    return files


# -- orchestration ------------------------------------------------------------------


@dataclass
class RunSummary:
    config: str
    solutions: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    monitors: dict = field(default_factory=dict)
    status: str = "ok"
    error: dict | None = None
    timings: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return self.error["exit_code"]
        return EXIT_OK if self.checks and all(self.checks.values()) else EXIT_UNCERTIFIED

    def to_json(self) -> str:
        """Deterministic document; wall-clock timings are kept out of it."""
        doc = {
            "config": self.config,
            "status": self.status,
            "exit_code": self.exit_code,
            "error": self.error,
            "solutions": self.solutions,
            "checks": self.checks,
            "monitors": self.monitors,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        doc = json.loads(text)
        return cls(doc["config"], doc["solutions"], doc["checks"], doc["monitors"],
                   doc["status"], doc["error"])


def _solution_record(cp: CriticalPoint) -> dict:
    return {"report": _jsonable(cp.report), "provenance": _jsonable(cp.provenance)}


def run_monitors(problem: Problem, bundle: SolutionBundle, cfg: RunConfig) -> dict:
    """Dual-sign, invariance and linear-positivity statistics."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.output.monitor_samples
    structure = problem.structure
    dual_flags, dual_worst = 0, 0.0
    for _ in range(n):
        split = project_onto_cone(structure, random_field(problem.grid, rng))
        rep = check_dual_sign(split)
        dual_flags += int(rep.nonpositive)
        dual_worst = max(dual_worst, rep.max_dual / rep.scale)
    pos_flags, pos_worst = 0, 0.0
    for _ in range(n):
        _, rep = solve_linear_positivity(structure, problem.weights, random_load(problem.grid, rng))
        pos_flags += int(rep.positive)
        pos_worst = min(pos_worst, rep.relative_min)
    traj = bundle.positive.trajectory
    inv = invariance_probe(traj) if traj is not None and len(traj) else None
    return {
        "dual_sign": {"samples": n, "holds": dual_flags, "worst_relative_max": dual_worst},
        "linear_positivity": {"samples": n, "positive": pos_flags, "worst_relative_min": pos_worst},
        "invariance": None if inv is None else _jsonable(inv) | {"holds": inv.holds},
    }


def run(cfg: RunConfig, out_dir=None) -> RunSummary:
    """Full pipeline; writes into ``out_dir`` (default ``cfg.output.directory``).

    A failing phase is recorded in the summary with its exit code; whatever
    was computed before it is still written.
    """
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    summary = RunSummary(format_config(cfg))
    phase = "assemble"
    t0 = time.perf_counter()
    problem = pos = neg = nod = None
    try:
        problem = cfg.build_problem()
        summary.timings[phase] = time.perf_counter() - t0
        u_plus, v_minus = default_seeds(problem.grid)

        phase, t0 = "signed", time.perf_counter()
        pos, neg = find_signed_solutions(problem, cfg.flow, cfg.solver, seed=u_plus)
        summary.solutions["positive"] = _solution_record(pos)
        summary.solutions["negative"] = _solution_record(neg)
        summary.timings[phase] = time.perf_counter() - t0

        phase, t0 = "nodal", time.perf_counter()
        search = find_nodal(problem, u_plus, v_minus, cfg.flow, cfg.solver)
        nod = search.solution
        summary.solutions["nodal"] = _solution_record(nod) | {"labels": search.labels}
        summary.timings[phase] = time.perf_counter() - t0

        phase, t0 = "verify", time.perf_counter()
        fields = (pos.field, neg.field, nod.field)
        reports = (pos.report, neg.report, nod.report)
        bundle = SolutionBundle(pos, neg, nod, bundle_checks(problem, fields, reports, cfg.flow, cfg.solver))
        summary.checks = bundle.checks
        export(bundle, problem, out, cfg.output.stride)
        summary.timings[phase] = time.perf_counter() - t0

        phase, t0 = "monitors", time.perf_counter()
        summary.monitors = run_monitors(problem, bundle, cfg)
        summary.timings[phase] = time.perf_counter() - t0
        summary.status = "certified" if bundle.certified else "uncertified"
    except (SolverError, ValueError, FloatingPointError) as exc:
        code = getattr(exc, "exit_code", 1)
        summary.status = "failed"
        summary.error = {"phase": phase, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
        log.error("phase %s failed: %s", phase, exc)
        if problem is not None:
            for name, cp in (("positive", pos), ("negative", neg), ("nodal", nod)):
                if cp is not None:
                    write_solution(out / f"solution_{name}.csv", problem, cp.field)
    (out / "summary.json").write_text(summary.to_json())
    (out / "timings.json").write_text(json.dumps(summary.timings, indent=2, sort_keys=True) + "\n")
    (out / "config.ini").write_text(summary.config)
    return summary


def default_config_text() -> str:
    return format_config(RunConfig())


__all__ = [
    "ConfigError",
    "RunConfig",
    "RunSummary",
    "parse_config",
    "format_config",
    "load_config",
    "run",
    "export",
    "read_field",
    "write_solution",
    "write_trajectory",
]
