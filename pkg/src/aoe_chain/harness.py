"""Scenario files, parameter sweeps, convergence traces and CSV output.

Scenario files are TOML with top-level keys ``id``, ``description`` and
``policies`` and the tables ``[params]``, ``[solver]``, ``[sim]``,
``[policy]``, ``[sweep]`` (``param`` + ``values``) and an optional
``[[convergence]]`` array of ``{id, <param overrides>}`` cases.  Built-in
scenarios ``fig1`` .. ``fig4`` ship in ``aoe_chain/scenarios``.
"""

from __future__ import annotations

import csv
import io
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .model import ScenarioParams
from .policies import POLICY_NAMES, make_policy
from .simulator import SimConfig, simulate
from .solver import SolveConfig, bellman_residual, evaluate_policy_exact, rvi_solve

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

CSV_VERSION_LINE = "# aoe-chain v1"
SWEEP_HEADER = (
    "scenario_id", "sweep_param", "sweep_value", "policy", "avg_aoe_exact", "avg_aoe_mc",
    "mc_stderr", "rvi_iterations", "bellman_residual", "wall_time_ms",
)
CONVERGENCE_HEADER = ("case_id", "iteration", "max_abs_change", "span", "gain_estimate")
BUILTIN_SCENARIOS = ("fig1", "fig2", "fig3", "fig4")
SWEEPABLE = ("p_L", "p_sw", "m_star", "delta_max", "tau", "T2")


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ScenarioFile:
    id: str
    params: ScenarioParams
    solver: SolveConfig = field(default_factory=SolveConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    policies: tuple[str, ...] = POLICY_NAMES
    sweep_param: str | None = None
    sweep_values: tuple = ()
    wur_strict_wait: bool = True
    convergence: tuple[tuple[str, dict], ...] = ()
    description: str = ""

    def points(self) -> list[tuple[object, ScenarioParams]]:
        if not self.sweep_param:
            return [(None, self.params)]
        return [(v, self.params.replace(**{self.sweep_param: v})) for v in self.sweep_values]


def _build(cls, table: dict, what: str, **extra):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{what}]: {sorted(unknown)}")
    try:
        return cls(**{**table, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{what}]: {exc}") from None


def parse_scenario(doc: dict, seed: int | None = None) -> ScenarioFile:
    allowed = {"id", "description", "policies", "params", "solver", "sim", "policy", "sweep", "convergence"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "params" not in doc:
        raise ConfigError("scenario needs a [params] table")
    params = _build(ScenarioParams, doc["params"], "params")
    solver_tab = dict(doc.get("solver", {}))
    if "ref_state" in solver_tab:
        solver_tab["ref_state"] = tuple(solver_tab["ref_state"])
    solver = _build(SolveConfig, solver_tab, "solver")
    sim_tab = dict(doc.get("sim", {}))
    if seed is not None:
        sim_tab["base_seed"] = seed
    if "initial_state" in sim_tab:
        sim_tab["initial_state"] = tuple(sim_tab["initial_state"])
    sim = _build(SimConfig, sim_tab, "sim")

    policies = tuple(doc.get("policies", POLICY_NAMES))
    bad = [p for p in policies if p not in POLICY_NAMES]
    if bad or not policies:
        raise ConfigError(f"policies must be a non-empty subset of {POLICY_NAMES}, got {list(policies)}")
    policy_tab = doc.get("policy", {})
    if set(policy_tab) - {"wur_strict_wait"}:
        raise ConfigError(f"unknown key(s) in [policy]: {sorted(set(policy_tab) - {'wur_strict_wait'})}")

    sweep = doc.get("sweep", {})
    sweep_param = sweep.get("param")
    values = tuple(sweep.get("values", ()))
    if sweep_param is not None:
        if sweep_param not in SWEEPABLE:
            raise ConfigError(f"sweep param must be one of {SWEEPABLE}, got {sweep_param!r}")
        if not values:
            raise ConfigError("sweep needs a non-empty 'values' list")
        for v in values:
            try:
                params.replace(**{sweep_param: v})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"sweep value {sweep_param}={v!r} is invalid: {exc}") from None

    cases = []
    for case in doc.get("convergence", []):
        case = dict(case)
        cid = str(case.pop("id", f"case{len(cases)}"))
        try:
            params.replace(**case)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"convergence case {cid!r} is invalid: {exc}") from None
        cases.append((cid, case))

    return ScenarioFile(
        id=str(doc.get("id", "scenario")),
        params=params,
        solver=solver,
        sim=sim,
        policies=policies,
        sweep_param=sweep_param,
        sweep_values=values,
        wur_strict_wait=bool(policy_tab.get("wur_strict_wait", True)),
        convergence=tuple(cases),
        description=str(doc.get("description", "")),
    )


def load_scenario(source: str | Path, seed: int | None = None) -> ScenarioFile:
    """Load a scenario from a TOML path or a built-in name (``fig1`` .. ``fig4``)."""
    if str(source) in BUILTIN_SCENARIOS:
        text = resources.files("aoe_chain").joinpath("scenarios", f"{source}.toml").read_text("utf-8")
    else:
        try:
            text = Path(source).read_text("utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file {source}: {exc}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return parse_scenario(doc, seed)


@dataclass
class ResultRow:
    scenario_id: str
    sweep_param: str
    sweep_value: object
    policy: str
    avg_aoe_exact: float
    avg_aoe_mc: float
    mc_stderr: float
    rvi_iterations: int | None
    bellman_residual: float | None
    wall_time_ms: float | None
    converged: bool = True

    def csv_fields(self) -> list[str]:
        return [
            self.scenario_id,
            self.sweep_param,
            _fmt(self.sweep_value),
            self.policy,
            _fmt(self.avg_aoe_exact),
            _fmt(self.avg_aoe_mc),
            _fmt(self.mc_stderr),
            _fmt(self.rvi_iterations),
            _fmt(self.bellman_residual),
            _fmt(self.wall_time_ms),
        ]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _check_range(row: ResultRow, params: ScenarioParams) -> None:
    for name in ("avg_aoe_exact", "avg_aoe_mc"):
        v = getattr(row, name)
        if not 1.0 - 1e-9 <= v <= params.delta_max + 1e-9:
            raise InvariantViolation(f"{name}={v} outside [1, {params.delta_max}] for {row.policy} at {row.sweep_value}")


def _run_point(scenario: ScenarioFile, value, params: ScenarioParams, record_timing: bool) -> list[ResultRow]:
    rows = []
    solved = None
    if "rvi" in scenario.policies:
        t0 = time.perf_counter()
        solved = rvi_solve(params, scenario.solver)
        solve_ms = (time.perf_counter() - t0) * 1e3
        if not solved.converged:
            logger.warning("%s: RVI did not converge at %s=%s", scenario.id, scenario.sweep_param, value)
    for name in scenario.policies:
        t0 = time.perf_counter()
        policy = make_policy(name, params, solved, scenario.wur_strict_wait)
        exact = evaluate_policy_exact(params, policy).avg_aoe
        mc = simulate(params, policy, scenario.sim)
        elapsed = (time.perf_counter() - t0) * 1e3
        is_rvi = name == "rvi"
        row = ResultRow(
            scenario_id=scenario.id,
            sweep_param=scenario.sweep_param or "",
            sweep_value=value,
            policy=name,
            avg_aoe_exact=exact,
            avg_aoe_mc=mc.avg_aoe,
            mc_stderr=mc.stderr,
            rvi_iterations=solved.iterations if is_rvi else None,
            bellman_residual=bellman_residual(params, solved) if is_rvi else None,
            wall_time_ms=(elapsed + (solve_ms if is_rvi else 0.0)) if record_timing else None,
            converged=solved.converged if is_rvi else True,
        )
        _check_range(row, params)
        rows.append(row)
    return rows


def run_sweep(scenario: ScenarioFile, jobs: int = 1, record_timing: bool = False) -> list[ResultRow]:
    """Solve, evaluate exactly and simulate every (sweep value, policy) pair.

    Rows come back ordered by sweep value then policy, in file order,
    whatever the completion order of parallel jobs.  ``wall_time_ms`` is left
    empty unless ``record_timing`` is set, so output stays byte-reproducible.
    """
    points = scenario.points()
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_point, scenario, v, p, record_timing) for v, p in points]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_run_point(scenario, v, p, record_timing) for v, p in points]
    return [row for chunk in chunks for row in chunk]


@dataclass
class ConvergenceRow:
    case_id: str
    iteration: int
    max_abs_change: float
    span: float
    gain_estimate: float

    def csv_fields(self) -> list[str]:
        return [self.case_id, str(self.iteration), _fmt(self.max_abs_change), _fmt(self.span), _fmt(self.gain_estimate)]


def convergence_cases(scenario: ScenarioFile) -> list[tuple[str, ScenarioParams]]:
    if not scenario.convergence:
        return [(scenario.id, scenario.params)]
    return [(cid, scenario.params.replace(**over)) for cid, over in scenario.convergence]


def run_convergence(scenario: ScenarioFile) -> tuple[list[ConvergenceRow], dict[str, bool]]:
    """RVI trace per convergence case; also returns each case's convergence flag."""
    rows: list[ConvergenceRow] = []
    status = {}
    for cid, params in convergence_cases(scenario):
        res = rvi_solve(params, scenario.solver)
        status[cid] = res.converged
        if not res.converged:
            logger.warning("%s: RVI did not converge for case %s", scenario.id, cid)
        rows.extend(
            ConvergenceRow(cid, t.iteration, t.max_abs_change, t.span, t.gain_estimate) for t in res.trace
        )
    return rows, status


def rows_to_csv(rows, header) -> str:
    buf = io.StringIO()
    buf.write(CSV_VERSION_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row.csv_fields())
    return buf.getvalue()


def write_csv(rows, header, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows, header))
    return path


def read_csv(path: str | Path) -> tuple[tuple[str, ...], list[dict]]:
    """Read a CSV produced by this package; returns the header and the data rows.

    Raises :class:`ConfigError` naming the 1-based file line of the first
    malformed row.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    start = 1 if lines and lines[0].startswith("#") else 0
    body = [ln for ln in lines[start:]]
    reader = csv.reader(body)
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ConfigError(f"{path}: empty CSV") from None
    if header not in (SWEEP_HEADER, CONVERGENCE_HEADER):
        raise ConfigError(f"{path}: line {start + 1}: unrecognised header {list(header)}")
    numeric = {
        SWEEP_HEADER: ("avg_aoe_exact", "avg_aoe_mc", "mc_stderr"),
        CONVERGENCE_HEADER: ("iteration", "max_abs_change", "span", "gain_estimate"),
    }[header]
    rows = []
    for lineno, rec in enumerate(reader, start=start + 2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ConfigError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
        row = dict(zip(header, rec))
        try:
            for k in numeric:
                row[k] = float(row[k])
            if header == SWEEP_HEADER:
                row["sweep_value"] = float(row["sweep_value"]) if row["sweep_value"] else None
        except ValueError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from None
        rows.append(row)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return header, rows
