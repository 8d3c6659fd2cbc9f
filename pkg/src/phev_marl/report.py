"""Tables and figures built from logs already on disk.

Nothing here trains or simulates. Derived metric columns (SoC error, fuel
saving) are recomputed from the raw columns every time a table is rendered.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .environment import fuel_saving  # noqa: E402
from .trainer import MetricsRow, RunLog, moving_average, read_metrics, write_learning_curves, write_metrics  # noqa: E402

AGENT_COLUMNS = {"agent1": "reward_agent1", "agent2": "reward_agent2", "combined": "combined_reward"}


def with_savings(rows) -> list[MetricsRow]:
    """Attach the saving column to every multi-agent row that has a single-agent
    row with the same initial SoC; everything else keeps an empty saving."""
    baseline = {r.initial_soc: r.fuel_l_per_100km for r in rows if r.method == "Single"}
    out = []
    for r in rows:
        saving = None
        if r.method != "Single" and r.initial_soc in baseline:
            saving = fuel_saving(baseline[r.initial_soc], r.fuel_l_per_100km)
        out.append(MetricsRow(r.initial_soc, r.method, r.end_soc, r.fuel_l_per_100km, saving))
    return out


def format_table(rows) -> str:
    header = ("Initial SoC", "Method", "End SoC", "SoC error (%)", "Fuel (L/100km)", "Saving (%)")
    body = []
    for r in rows:
        body.append((
            f"{r.initial_soc * 100:.0f}%",
            r.method,
            f"{r.end_soc * 100:.1f}%",
            f"{r.soc_error_pct:.2f}",
            f"{r.fuel_l_per_100km:.3f}",
            "" if r.saving_pct is None else f"{r.saving_pct:.3f}",
        ))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), rule, *(line(b) for b in body)]) + "\n"


def metrics_report(metrics_csv, out_dir) -> dict:
    """Render the comparison table as text and CSV next to each other."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = with_savings(read_metrics(metrics_csv))
    text = format_table(rows)
    (out / "table.txt").write_text(text)
    write_metrics(rows, out / "table.csv")
    return {"table_txt": str(out / "table.txt"), "table_csv": str(out / "table.csv"), "rows": len(rows),
            "savings": [r.saving_pct for r in rows if r.saving_pct is not None]}


def load_sweep_logs(sweep_dir) -> tuple[dict, int]:
    """Read every successful cell listed in a sweep manifest."""
    root = Path(sweep_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    logs: dict[float, dict[int, RunLog]] = {float(r): {} for r in manifest["ratios"]}
    for cell in manifest["cells"]:
        if cell["status"] == "ok":
            logs[float(cell["ratio"])][int(cell["seed"])] = RunLog.from_json(root / cell["runlog_json"])
    return logs, int(manifest["config"]["episodes"])


def plot_learning_curves(logs, path, agent: str = "combined", title: str | None = None) -> Path:
    """Smoothed mean episode reward per ratio, with the seed range shaded."""
    col = AGENT_COLUMNS[agent]
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    cmap = plt.get_cmap("viridis")
    ratios = sorted(logs)
    for k, ratio in enumerate(ratios):
        runs = [lg.column(col) for _, lg in sorted(logs[ratio].items())]
        if not runs:
            continue
        raw = np.array(runs)
        episodes = np.arange(raw.shape[1])
        color = cmap(k / max(1, len(ratios) - 1))
        ax.fill_between(episodes, moving_average(raw.min(axis=0)), moving_average(raw.max(axis=0)),
                        color=color, alpha=0.15, linewidth=0)
        ax.plot(episodes, moving_average(raw.mean(axis=0)), color=color, label=f"R_ind = {ratio:g}")
    ax.set_xlabel("Episode")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("Episode reward")
    ax.set_title(title or f"Learning curves ({agent})")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_soc_comparison(rows, path) -> Path:
    """End SoC against initial SoC for each method, with the charge-sustaining diagonal."""
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    methods = sorted({r.method for r in rows})
    for method, marker in zip(methods, "os^v"):
        pts = sorted((r.initial_soc, r.end_soc) for r in rows if r.method == method)
        ax.plot([p[0] * 100 for p in pts], [p[1] * 100 for p in pts], marker=marker, label=method)
    lo = min(min(r.initial_soc, r.end_soc) for r in rows) * 100 - 1
    hi = max(max(r.initial_soc, r.end_soc) for r in rows) * 100 + 1
    ax.plot([lo, hi], [lo, hi], color="0.6", linestyle=":", linewidth=1)
    ax.set_xlabel("Initial SoC (%)")
    ax.set_ylabel("End SoC (%)")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sweep_report(sweep_dir, out_dir) -> dict:
    """Curve CSVs (raw per seed plus smoothed mean) and one figure per agent."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logs, episodes = load_sweep_logs(sweep_dir)
    csvs = write_learning_curves(logs, out / "curves", episodes)
    figures = [plot_learning_curves(logs, out / f"learning_{agent}.png", agent) for agent in AGENT_COLUMNS]
    summary = final_rewards(logs)
    with (out / "final_rewards.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "seed", "final10_combined_reward"])
        for (ratio, seed), value in sorted(summary.items()):
            w.writerow([repr(ratio), seed, repr(value)])
    return {"curves": [str(p) for p in csvs], "figures": [str(p) for p in figures],
            "final_rewards": str(out / "final_rewards.csv"), "best_ratio_by_seed": best_ratio_by_seed(logs)}


def final_rewards(logs, last: int = 10) -> dict:
    return {(ratio, seed): lg.final_mean("combined_reward", last)
            for ratio, by_seed in logs.items() for seed, lg in by_seed.items()}


def best_ratio_by_seed(logs, last: int = 10) -> dict[int, float]:
    """For each seed, the ratio whose cell has the highest final mean combined reward."""
    table = final_rewards(logs, last)
    seeds = sorted({seed for _, seed in table})
    best = {}
    for seed in seeds:
        cells = [(value, ratio) for (ratio, s), value in table.items() if s == seed]
        best[seed] = max(cells)[1]
    return best
