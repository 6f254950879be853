"""Command-line entry point: ``aoe-chain <command> [options]``."""

from __future__ import annotations

import argparse
import ast
import csv
import logging
import sys
from pathlib import Path

from .harness import (
    BUILTIN_SCENARIOS,
    CONVERGENCE_HEADER,
    SWEEP_HEADER,
    ConfigError,
    InvariantViolation,
    ScenarioFile,
    load_scenario,
    run_convergence,
    run_sweep,
    write_csv,
)
from .model import ACTIONS, InadmissibleActionError, fidelity, state_index
from .policies import POLICY_NAMES, make_policy
from .simulator import replay, simulate, write_trajectory
from .solver import (
    SolverError,
    bellman_residual,
    check_unichain_reachability,
    evaluate_policy_exact,
    policy_iteration_solve,
    rvi_solve,
)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_INVARIANT = 0, 2, 3, 4


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default="fig1", help="scenario TOML file or built-in name (fig1..fig4)")
    p.add_argument("--seed", type=int, default=None, help="override the Monte Carlo base seed")
    p.add_argument("--out-dir", default=".", help="directory for CSV and plot output")
    p.add_argument("--format", choices=["csv"], default="csv")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a [params] value, e.g. --set p_L=0.3")
    p.add_argument("--strict", action="store_true", help="exit with status 3 if RVI does not converge")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="aoe-chain", description="Age-of-Entanglement control of a satellite repeater chain.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve the scenario for an AoE-optimal policy")
    p.add_argument("--method", choices=["rvi", "pi"], default="rvi")
    p.add_argument("--save-policy", action="store_true", help="write the policy table to <out-dir>/<id>_policy.csv")

    for name, helptext in (("evaluate", "exact long-run average AoE of a policy"),
                           ("simulate", "Monte Carlo estimate of a policy's average AoE")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--policy", choices=POLICY_NAMES, default="rvi")
        if name == "simulate":
            p.add_argument("--trajectory", metavar="FILE", help="also dump a replayed trajectory")
            p.add_argument("--trajectory-slots", type=int, default=1000)

    p = sub.add_parser("sweep", parents=[common], help="run the scenario's parameter sweep")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--record-timing", action="store_true", help="fill the wall_time_ms column")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("convergence", parents=[common], help="write RVI convergence traces")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("plot", parents=[common], help="render a sweep or convergence CSV")
    p.add_argument("csv")

    p = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's CSV and plot")
    p.add_argument("figure", choices=BUILTIN_SCENARIOS)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--record-timing", action="store_true")
    p.add_argument("--no-plot", action="store_true")
    return parser


def _scenario(args) -> ScenarioFile:
    source = args.figure if args.command == "reproduce" else args.config
    scenario = load_scenario(source, seed=args.seed)
    if args.set:
        changes = {}
        for item in args.set:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            try:
                changes[key.strip()] = ast.literal_eval(raw.strip())
            except (ValueError, SyntaxError):
                raise ConfigError(f"--set {key}: cannot parse value {raw!r}") from None
        try:
            scenario.params = scenario.params.replace(**changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"--set: {exc}") from None
    return scenario


def _plot(csv_path: Path, out_dir: Path) -> None:
    from .plots import emit_plots

    for path in emit_plots(csv_path, out_dir):
        print(f"wrote {path}")


def _solve(args, scenario: ScenarioFile) -> int:
    params = scenario.params
    solve = rvi_solve if args.method == "rvi" else policy_iteration_solve
    res = solve(params, scenario.solver)
    reach = check_unichain_reachability(params)
    print(f"scenario       {scenario.id}")
    print(f"method         {res.method}")
    print(f"converged      {res.converged}")
    print(f"iterations     {res.iterations}")
    print(f"gain           {res.gain!r}")
    print(f"avg_aoe        {res.avg_aoe!r}")
    print(f"bellman_resid  {bellman_residual(params, res)!r}")
    print(f"unichain_check {reach.reachable} (premise {'ok' if reach.premise_ok else 'failed: ' + ', '.join(reach.failed_premises)})")
    print(f"fidelity(m*)   {fidelity(params.m_star, params.T2)!r}")
    if args.save_policy:
        out = Path(args.out_dir) / f"{scenario.id}_policy.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        idx = state_index(params)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v12", "v23", "m12", "m23", "delta_e", "a12", "a23", "a_sw"])
            for i, s in enumerate(idx.states):
                w.writerow([*s, *ACTIONS[res.policy[i]]])
        print(f"wrote {out}")
    if args.strict and not res.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK


def _policy(args, scenario: ScenarioFile):
    solved = rvi_solve(scenario.params, scenario.solver) if args.policy == "rvi" else None
    if solved is not None and args.strict and not solved.converged:
        return None, EXIT_NONCONVERGED
    return make_policy(args.policy, scenario.params, solved, scenario.wur_strict_wait), EXIT_OK


def run(args) -> int:
    out_dir = Path(args.out_dir)
    if args.command == "plot":
        _plot(Path(args.csv), out_dir if args.out_dir != "." else Path(args.csv).parent)
        return EXIT_OK

    scenario = _scenario(args)
    if args.command == "solve":
        return _solve(args, scenario)

    if args.command in ("evaluate", "simulate"):
        policy, code = _policy(args, scenario)
        if policy is None:
            return code
        if args.command == "evaluate":
            print(f"{scenario.id} {args.policy} avg_aoe_exact {evaluate_policy_exact(scenario.params, policy).avg_aoe!r}")
        else:
            rep = simulate(scenario.params, policy, scenario.sim)
            print(f"{scenario.id} {args.policy} avg_aoe_mc {rep.avg_aoe!r} stderr {rep.stderr!r} "
                  f"swap_success_rate {rep.swap_success_rate!r} mean_reset_value {rep.mean_reset_value!r}")
            if args.trajectory:
                write_trajectory(replay(scenario.params, policy, scenario.sim.base_seed, args.trajectory_slots),
                                 args.trajectory)
                print(f"wrote {args.trajectory}")
        return EXIT_OK

    if args.command == "convergence" or (args.command == "reproduce" and scenario.convergence):
        rows, status = run_convergence(scenario)
        path = write_csv(rows, CONVERGENCE_HEADER, out_dir / f"{scenario.id}.csv")
        print(f"wrote {path}")
        if not args.no_plot:
            _plot(path, out_dir)
        return EXIT_NONCONVERGED if args.strict and not all(status.values()) else EXIT_OK

    rows = run_sweep(scenario, jobs=args.jobs, record_timing=args.record_timing)
    path = write_csv(rows, SWEEP_HEADER, out_dir / f"{scenario.id}.csv")
    print(f"wrote {path}")
    if not args.no_plot:
        _plot(path, out_dir)
    return EXIT_NONCONVERGED if args.strict and not all(r.converged for r in rows) else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, SolverError, InadmissibleActionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
