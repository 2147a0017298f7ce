"""Optional SVG of the GMV/QPS trade-off (needs matplotlib)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path


def gmv_qps_svg(rows: list[dict], path: str | Path) -> None:
    """Mean GMV per session against mean QPS, one line per strategy."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "adarequest"
    import matplotlib.pyplot as plt

    cells = defaultdict(list)
    for r in rows:
        cells[(r["strategy"], r["theta"])].append((r["qps"], r["gmv"] / max(r["sessions"], 1)))
    lines = defaultdict(list)
    for (name, theta), pts in cells.items():
        n = len(pts)
        lines[name].append((sum(p[0] for p in pts) / n, sum(p[1] for p in pts) / n))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in sorted(lines):
        pts = sorted(lines[name])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax.set_xlabel("QPS (refreshes per exposure)")
    ax.set_ylabel("GMV per session")
    ax.legend(fontsize=7)
    fig.tight_layout()
    # no timestamp, so the file is reproducible
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
