"""SVG line charts of sweep summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

from siminv.errors import ParameterError


@dataclass
class PlotSeries:
    x: list[float]
    y: list[float]
    path: Path
    argmin: tuple[float, float] | None = None


def _finite(points):
    return [(x, y) for x, y in points if math.isfinite(y)]


def _save(fig: Figure, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "siminv", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def emit_plots(record, out_dir) -> dict[str, PlotSeries]:
    """Reconstruction error against w_s and step gap against step count.

    Points are the summary means, so they match ``summary.csv`` exactly.
    The smallest reconstruction error is drawn as a separate marker.
    """
    if not record.rows:
        raise ParameterError("cannot plot an empty record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = record.summary()
    series: dict[str, PlotSeries] = {}

    sim = _finite(sorted((r["w_s"], r["mean_delta_pp"]) for r in summary
                         if r["kind"] == "edit" and r["mode"] == "siminversion"))
    if sim:
        xs, ys = [p[0] for p in sim], [p[1] for p in sim]
        best = min(sim, key=lambda p: p[1])
        fig = Figure(figsize=(5, 3.5))
        ax = fig.add_subplot()
        ax.plot(xs, ys, "o-", color="tab:blue", label="symmetric source scale", gid="delta_pp")
        ax.plot([best[0]], [best[1]], "*", color="tab:red", markersize=12, label="minimum", gid="delta_pp_min")
        for r in summary:
            if r["kind"] == "edit" and r["mode"] == "asymmetric_ddim" and math.isfinite(r["mean_delta_pp"]):
                ax.axhline(r["mean_delta_pp"], color="tab:gray", linestyle="--",
                           label=f"asymmetric baseline (w_t={r['w_s']:g})", gid="delta_pp_baseline")
        ax.set_xlabel("source guidance scale w_s")
        ax.set_ylabel("mean reconstruction error")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out / "delta_pp_vs_ws.svg"
        _save(fig, path)
        series["delta_pp_vs_ws"] = PlotSeries(xs, ys, path, best)

    steps = _finite(sorted((float(r["n_steps"]), r["mean_step_gap"]) for r in summary if r["kind"] == "steps"))
    if steps:
        xs, ys = [p[0] for p in steps], [p[1] for p in steps]
        fig = Figure(figsize=(5, 3.5))
        ax = fig.add_subplot()
        ax.plot(xs, ys, "s-", color="tab:green", gid="step_gap")
        ax.set_xscale("log")
        ax.set_xlabel("denoising steps")
        ax.set_ylabel("mean relative step gap")
        fig.tight_layout()
        path = out / "step_gap_vs_steps.svg"
        _save(fig, path)
        series["step_gap_vs_steps"] = PlotSeries(xs, ys, path)

    if not series:
        raise ParameterError("record has no finite series to plot")
    return series
