"""Optional rendering of a simulation run directory (requires matplotlib).

Not part of the package or its acceptance surface; the pipeline's own
outputs are plot-ready CSVs. Usage:

    python tools/plot_run.py runs/small --scenario src/fleetsched/scenarios/small_grid.json
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load_csv(path: Path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir")
    parser.add_argument("--scenario", default=None, help="scenario JSON for the map background")
    args = parser.parse_args()
    run_dir = Path(args.run_dir)

    # delay vs node sequence, one series per robot
    rows = load_csv(run_dir / "delay_series.csv")
    fig, ax = plt.subplots(figsize=(7, 4))
    by_vehicle: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        by_vehicle.setdefault(row["vehicle"], []).append((int(row["seq_index"]), float(row["delay_s"])))
    for vid in sorted(by_vehicle):
        series = sorted(by_vehicle[vid])
        ax.plot([s for s, _ in series], [d for _, d in series], marker="o", label=vid)
    ax.set_xlabel("node sequence index")
    ax.set_ylabel("delay [s]")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(run_dir / "delays.png", dpi=130)

    # trajectories over the map
    trace = load_csv(run_dir / "trace.csv")
    fig, ax = plt.subplots(figsize=(7, 6))
    if args.scenario:
        doc = json.loads(Path(args.scenario).read_text())
        for poly in doc.get("obstacles", []):
            xs = [p[0] for p in poly] + [poly[0][0]]
            ys = [p[1] for p in poly] + [poly[0][1]]
            ax.fill(xs, ys, color="0.85", edgecolor="0.6", linewidth=0.5)
        for node in doc["nodes"]:
            marker = "s" if node["kind"] == "depot" else "."
            ax.plot(node["x"], node["y"], marker, color="tab:orange", markersize=4)
    tracks: dict[str, list[tuple[float, float]]] = {}
    for row in trace:
        tracks.setdefault(row["vehicle"], []).append((float(row["x"]), float(row["y"])))
    for vid in sorted(tracks):
        xs, ys = zip(*tracks[vid])
        ax.plot(xs, ys, linewidth=1.0, label=vid)
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(run_dir / "trajectories.png", dpi=130)
    print(f"wrote {run_dir}/delays.png and {run_dir}/trajectories.png")
    return 0


if __name__ == "__main__":
    sys.exit(main())
