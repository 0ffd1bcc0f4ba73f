"""Optional cut-plot rendering from the per-point export (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

from .metrics import read_point_errors


def render_cuts(points_csv: str | Path, out_png: str | Path) -> Path:
    """Power versus theta, one line per (phi, r) cut, measured solid and reference dashed."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_point_errors(points_csv)
    cuts: dict[tuple[float, float], list[dict[str, float]]] = {}
    for row in rows:
        cuts.setdefault((row["phi"], row["r"]), []).append(row)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (phi, r), pts in sorted(cuts.items()):
        pts.sort(key=lambda p: p["theta"])
        th = [p["theta"] for p in pts]
        line, = ax.plot(th, [p["measured_dbm"] for p in pts], marker="o", ms=3, label=f"phi={phi:g} r={r:g}")
        ax.plot(th, [p["reference_dbm"] for p in pts], ls="--", color=line.get_color(), lw=0.8)
    ax.set_xlabel("theta (deg)")
    ax.set_ylabel("power (dBm)")
    ax.grid(True, alpha=0.3)
    if len(cuts) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
