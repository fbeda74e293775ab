"""Figure rendering for evaluation, benchmark and trajectory reports.

Every CSV the toolkit writes can be accompanied by matplotlib figures saved
next to it; nothing here is needed by the decision stack itself.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from dualdrive.core import EpisodeOutcome
from dualdrive.environment import ScenarioKind, build_scenario

_OUTCOME_COLORS = {
    EpisodeOutcome.SUCCESS: "#2a9d8f",
    EpisodeOutcome.COLLISION: "#e76f51",
    EpisodeOutcome.DEADLOCK: "#e9c46a",
    EpisodeOutcome.TIMEOUT: "#8d99ae",
}


def render_eval_figures(report, base_path) -> list[str]:
    """PET histogram and outcome bars for one evaluation run; returns the
    written figure paths."""
    base = Path(base_path)
    written = []

    pets = [p for p in report.pets if p is not None]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    if pets:
        ax.hist(pets, bins=20, color="#457b9d", edgecolor="white")
    ax.set_xlabel("post-encroachment time (s)")
    ax.set_ylabel("episodes")
    ax.set_title(f"PET distribution (dangerous rate {report.dangerous_rate:.1%})")
    pet_path = base.with_name(base.stem + "_pet.png")
    fig.tight_layout()
    fig.savefig(pet_path, dpi=120)
    plt.close(fig)
    written.append(str(pet_path))

    counts = {o: report.outcomes.count(o) for o in EpisodeOutcome}
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    labels = [o.value for o in EpisodeOutcome]
    values = [counts[o] for o in EpisodeOutcome]
    colors = [_OUTCOME_COLORS[o] for o in EpisodeOutcome]
    ax.bar(labels, values, color=colors)
    ax.set_ylabel("episodes")
    ax.set_title(f"Outcomes over {report.episodes} episodes "
                 f"(success {report.success_rate:.1%})")
    out_path = base.with_name(base.stem + "_outcomes.png")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    written.append(str(out_path))
    return written


def render_bench_figure(rows, base_path) -> str:
    """Mean retrieval latency vs store size, one line per mode."""
    base = Path(base_path)
    by_mode: dict[str, list] = {}
    for r in rows:
        by_mode.setdefault(r.mode, []).append(r)
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for mode, mode_rows in sorted(by_mode.items()):
        mode_rows = sorted(mode_rows, key=lambda r: r.n_units)
        ax.plot([r.n_units for r in mode_rows], [r.mean_us for r in mode_rows],
                marker="o", label=mode)
        ax.fill_between([r.n_units for r in mode_rows],
                        [r.mean_us for r in mode_rows],
                        [r.p95_us for r in mode_rows], alpha=0.15)
    ax.set_xlabel("stored memories")
    ax.set_ylabel("retrieval latency (µs)")
    ax.set_title("Retrieval latency: partitioned vs pooled")
    ax.legend()
    path = base.with_name(base.stem + "_latency.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_trajectory_figure(trajectory_rows, kind: ScenarioKind, seed: int,
                             n_hv: int, base_path) -> str:
    """Top-down view: paths, conflict zones and the driven traces."""
    base = Path(base_path)
    world = build_scenario(kind, seed, n_hv)
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for pid, path in world.paths.items():
        style = "-" if pid == 0 else "--"
        ax.plot(path.polyline[:, 0], path.polyline[:, 1], style,
                color="#adb5bd", linewidth=1.0)
    for zone in world.zones.values():
        circle = plt.Circle(zone.center, zone.radius, fill=False,
                            color="#e76f51", linestyle=":")
        ax.add_patch(circle)
    traces: dict[int, list] = {}
    for row in trajectory_rows:
        parts = row.split(",")
        vid = int(parts[1])
        traces.setdefault(vid, []).append((float(parts[3]), float(parts[4])))
    for vid, points in sorted(traces.items()):
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        color = "#1d3557" if vid == 0 else "#2a9d8f"
        ax.plot(xs, ys, color=color, linewidth=2.0,
                label="ego" if vid == 0 else f"opponent {vid}")
        ax.plot(xs[-1], ys[-1], "o", color=color)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"{kind.value} seed {seed}")
    ax.legend(loc="upper left", fontsize=8)
    path = base.with_name(base.stem + "_trajectory.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
