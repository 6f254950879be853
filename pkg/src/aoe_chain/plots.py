"""Render sweep and convergence CSVs as SVG line charts plus gnuplot data files."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import CONVERGENCE_HEADER, SWEEP_HEADER, read_csv  # noqa: E402

_LABELS = {"rvi": "RVI", "greedy": "Greedy Gen+Swap ASAP", "wur": "Wait-Until-Ready"}
_AXIS = {"p_L": "elementary link generation probability $p_L$", "p_sw": "swap success probability $p_{sw}$"}


def _save(fig, path: Path) -> None:
    with plt.rc_context({"svg.hashsalt": "aoe-chain"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _sweep_plots(rows: list[dict], out_dir: Path) -> list[Path]:
    written = []
    by_scenario: dict[str, dict[str, list[dict]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        by_scenario[r["scenario_id"]][r["policy"]].append(r)
    for sid, series in by_scenario.items():
        param = next(iter(series.values()))[0]["sweep_param"] or "sweep"
        fig, ax = plt.subplots(figsize=(6, 4))
        dat = [f"# scenario {sid}: {param} avg_aoe_exact avg_aoe_mc mc_stderr; one block per policy"]
        for policy, pts in series.items():
            pts = sorted(pts, key=lambda r: r["sweep_value"] or 0.0)
            x = [p["sweep_value"] or 0.0 for p in pts]
            ax.plot(x, [p["avg_aoe_exact"] for p in pts], marker="o", label=_LABELS.get(policy, policy))
            ax.errorbar(x, [p["avg_aoe_mc"] for p in pts], yerr=[p["mc_stderr"] for p in pts],
                        fmt="none", ecolor="gray", capsize=2)
            dat.append(f"# policy {policy}")
            dat += [f"{p['sweep_value']} {p['avg_aoe_exact']!r} {p['avg_aoe_mc']!r} {p['mc_stderr']!r}" for p in pts]
            dat += ["", ""]
        ax.set_xlabel(_AXIS.get(param, param))
        ax.set_ylabel("average AoE (slots)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        svg = out_dir / f"{sid}.svg"
        _save(fig, svg)
        datp = out_dir / f"{sid}.dat"
        datp.write_text("\n".join(dat) + "\n", encoding="utf-8")
        written += [svg, datp]
    return written


def _convergence_plot(rows: list[dict], out_dir: Path, stem: str) -> list[Path]:
    series: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        series[r["case_id"]].append(r)
    fig, ax = plt.subplots(figsize=(6, 4))
    dat = ["# iteration max_abs_change span gain_estimate; one block per case"]
    for cid, pts in series.items():
        ax.semilogy([p["iteration"] for p in pts], [max(p["max_abs_change"], 1e-300) for p in pts], label=cid)
        dat.append(f"# case {cid}")
        dat += [f"{int(p['iteration'])} {p['max_abs_change']!r} {p['span']!r} {p['gain_estimate']!r}" for p in pts]
        dat += ["", ""]
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\max_s |h^{(k)}(s) - h^{(k-1)}(s)|$")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    svg = out_dir / f"{stem}.svg"
    _save(fig, svg)
    datp = out_dir / f"{stem}.dat"
    datp.write_text("\n".join(dat) + "\n", encoding="utf-8")
    return [svg, datp]


def emit_plots(csv_path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Write one SVG chart and one gnuplot ``.dat`` file per figure in ``csv_path``.

    Sweep CSVs give one chart per scenario (average AoE against the sweep
    parameter, one series per policy); convergence CSVs give a log-scale
    chart of the RVI change per iteration.
    """
    csv_path = Path(csv_path)
    out = Path(out_dir) if out_dir is not None else csv_path.parent
    out.mkdir(parents=True, exist_ok=True)
    header, rows = read_csv(csv_path)
    if header == SWEEP_HEADER:
        return _sweep_plots(rows, out)
    assert header == CONVERGENCE_HEADER
    return _convergence_plot(rows, out, csv_path.stem)
