"""Seeded sweeps over source scales and step counts, written as stable CSV."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from siminv.analysis import error_report, step_gap
from siminv.ddim import generate, invert
from siminv.editing import GuidanceConfig, TransferHook, edit, reconstruction_error
from siminv.errors import ParameterError
from siminv.harness.config import ExperimentConfig, RasterSpec
from siminv.metrics import ImageGrid, mse, psnr, ssim
from siminv.predictor import AnalyticMixture, CountingPredictor, GaussianMixture, text

SCHEMA_VERSION = 1
BEST_MODE = "siminversion_best"

RESULT_FIELDS = [
    "schema_version", "cell", "kind", "mode", "instance", "w_s", "w_t", "n_steps", "inversion_mode",
    "delta_pp", "w_star_pooled", "delta_at_ws_mean", "bound_at_ws_mean", "step_gap", "mse", "psnr", "ssim",
    "error",
]
ANALYSIS_FIELDS = ["schema_version", "cell", "instance", "mode", "w_s", "t", "w", "delta", "bound", "w_star"]
SUMMARY_FIELDS = [
    "schema_version", "kind", "mode", "w_s", "n_steps", "count", "errors", "mean_delta_pp", "mean_w_star_pooled",
    "mean_step_gap", "mean_mse", "mean_psnr", "mean_ssim",
]


def fmt(value: Any) -> str:
    """Shortest round-trip text for floats so reruns are byte-identical."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def rasterize(z: np.ndarray, spec: RasterSpec) -> ImageGrid:
    """A latent as a toy image.

    Latents with exactly width*height entries are reshaped row-major with
    ``[-extent, extent]`` mapped onto ``[0, 1]``; anything else is drawn as a
    Gaussian blob at its first two coordinates.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    n = spec.width * spec.height
    if z.size == n:
        vals = (z + spec.extent) / (2.0 * spec.extent)
    else:
        xs = np.linspace(-spec.extent, spec.extent, spec.width)
        ys = np.linspace(spec.extent, -spec.extent, spec.height)
        gx, gy = np.meshgrid(xs, ys)
        py = z[1] if z.size > 1 else 0.0
        vals = np.exp(-((gx - z[0]) ** 2 + (gy - py) ** 2) / (2.0 * spec.blob ** 2)).ravel()
    return ImageGrid(vals, spec.width, spec.height)


@dataclass(frozen=True)
class Cell:
    index: int
    kind: str  # "edit" or "steps"
    mode: str
    instance: int
    w_s: float
    n_steps: int


@dataclass
class RunRecord:
    config_hash: str
    rows: list[dict[str, Any]]
    analysis_rows: list[dict[str, Any]] = field(default_factory=list)
    elapsed: float = 0.0

    def summary(self) -> list[dict[str, Any]]:
        return summarize(self.rows)

    def write(self, out_dir, cfg: ExperimentConfig | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "results.csv", RESULT_FIELDS, self.rows)
        write_csv(out / "summary.csv", SUMMARY_FIELDS, self.summary())
        if self.analysis_rows:
            write_csv(out / "analysis.csv", ANALYSIS_FIELDS, self.analysis_rows)
        if cfg is not None:
            write_run_json(out, cfg, elapsed=self.elapsed)

    @classmethod
    def from_csv(cls, path) -> "RunRecord":
        rows = read_csv(path)
        for row in rows:
            for key in ("cell", "instance", "n_steps", "schema_version"):
                row[key] = int(row[key])
            for key in RESULT_FIELDS:
                if key not in ("cell", "instance", "n_steps", "schema_version", "kind", "mode",
                               "inversion_mode", "error"):
                    row[key] = float(row[key])
        return cls(config_hash="", rows=rows)


def write_csv(path, fields: list[str], rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([fmt(row.get(f, "")) for f in fields])


def read_csv(path) -> list[dict[str, Any]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_run_json(out: Path, cfg: ExperimentConfig, **extra) -> None:
    payload = {"config": cfg.normalized(), "config_hash": cfg.config_hash(), **extra}
    with open(out / "run.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _nanmean(values):
    vals = [v for v in values if isinstance(v, float) and math.isfinite(v)]
    return float(np.mean(vals)) if vals else math.nan


def summarize(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Means per (kind, mode, w_s, n_steps) in first-appearance order; errored cells are counted, not averaged.

    A final ``siminversion_best`` row (``w_s`` = nan) averages, per step count,
    each instance's symmetric-scale cell with the smallest reconstruction error.
    """
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["kind"], row["mode"], row["w_s"], row["n_steps"])
        groups.setdefault(key, []).append(row)
    out = [_summary_row(kind, mode, w_s, n_steps, members)
           for (kind, mode, w_s, n_steps), members in groups.items()]

    # per instance, the symmetric scale with the smallest reconstruction error
    best: dict[tuple, dict] = {}
    for row in rows:
        if row["kind"] != "edit" or row["mode"] != "siminversion" or row["error"]:
            continue
        key = (row["instance"], row["n_steps"])
        if key not in best or row["delta_pp"] < best[key]["delta_pp"]:
            best[key] = row
    for n_steps in dict.fromkeys(k[1] for k in best):
        members = [r for k, r in best.items() if k[1] == n_steps]
        out.append(_summary_row("edit", BEST_MODE, math.nan, n_steps, members))
    return out


def _summary_row(kind, mode, w_s, n_steps, members) -> dict[str, Any]:
    ok = [m for m in members if not m["error"]]
    return {
        "schema_version": SCHEMA_VERSION, "kind": kind, "mode": mode, "w_s": w_s, "n_steps": n_steps,
        "count": len(ok), "errors": len(members) - len(ok),
        "mean_delta_pp": _nanmean(m["delta_pp"] for m in ok),
        "mean_w_star_pooled": _nanmean(m["w_star_pooled"] for m in ok),
        "mean_step_gap": _nanmean(m["step_gap"] for m in ok),
        "mean_mse": _nanmean(m["mse"] for m in ok),
        "mean_psnr": _nanmean(m["psnr"] for m in ok),
        "mean_ssim": _nanmean(m["ssim"] for m in ok),
    }


def plan_cells(cfg: ExperimentConfig) -> list[Cell]:
    sw = cfg.sweep
    cells: list[Cell] = []
    for i in range(sw.instances):
        for w in sw.w_values:
            cells.append(Cell(len(cells), "edit", "siminversion", i, float(w), cfg.schedule.n_steps))
        if sw.include_baseline:
            # baseline rows record the scale their source branch is generated at
            cells.append(Cell(len(cells), "edit", "asymmetric_ddim", i, float(sw.w_t), cfg.schedule.n_steps))
        for n in sw.step_counts:
            cells.append(Cell(len(cells), "steps", "siminversion", i, float(sw.step_gap_w), int(n)))
    return cells


def instance_source(cfg: ExperimentConfig, instance: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, instance])
    mix = cfg.mixture.build()
    return mix.sample(rng, 1, cfg.mixture.condition(cfg.sweep.source_condition))[0]


class _Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.schedules = {n: cfg.schedule.build(n) for n in {cfg.schedule.n_steps, *cfg.sweep.step_counts}}
        self.predictors = {n: cfg.build_predictor(s) for n, s in self.schedules.items()}
        self.c_s = cfg.mixture.condition(cfg.sweep.source_condition)
        self.c_t = cfg.mixture.condition(cfg.sweep.target_condition)

    def __call__(self, cell: Cell):
        sw = self.cfg.sweep
        row = {f: math.nan for f in RESULT_FIELDS}
        row.update(schema_version=SCHEMA_VERSION, cell=cell.index, kind=cell.kind, mode=cell.mode,
                   instance=cell.instance, w_s=cell.w_s, w_t=float(sw.w_t), n_steps=cell.n_steps,
                   inversion_mode=sw.inversion_mode, error="")
        analysis: list[dict] = []
        try:
            schedule = self.schedules[cell.n_steps]
            predictor = self.predictors[cell.n_steps]
            z0 = instance_source(self.cfg, cell.instance)
            gcfg = GuidanceConfig(cell.w_s, sw.w_t, cell.mode)
            result = edit(z0, self.c_s, self.c_t, gcfg, TransferHook(), predictor, schedule, sw.inversion_mode)
            row["delta_pp"] = reconstruction_error(result, z0)
            row["step_gap"] = step_gap(result.inversion)
            a, b = rasterize(z0, sw.raster), rasterize(result.source, sw.raster)
            row.update(mse=mse(a, b), psnr=psnr(a, b), ssim=ssim(a, b))
            if cell.kind == "edit":
                w_inv = gcfg.inversion_scale
                ws = sorted(set(float(w) for w in sw.delta_ws) | {w_inv})
                report = error_report(result.inversion, predictor, self.c_s, ws)
                row["w_star_pooled"] = report.pooled_w_star
                row["delta_at_ws_mean"] = report.mean_delta[w_inv]
                row["bound_at_ws_mean"] = report.mean_bound[w_inv]
                for step in report.steps:
                    for w in ws:
                        analysis.append({
                            "schema_version": SCHEMA_VERSION, "cell": cell.index, "instance": cell.instance,
                            "mode": cell.mode, "w_s": cell.w_s, "t": step.t, "w": w,
                            "delta": step.deltas[w], "bound": step.bounds[w], "w_star": step.w_star,
                        })
        except Exception as exc:  # one bad cell must not void the sweep
            row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            analysis = []
        return row, analysis


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> RunRecord:
    """Execute every cell (concurrently if ``workers > 1``); row order is the cell order regardless."""
    start = time.perf_counter()
    cells = plan_cells(cfg)
    runner = _Runner(cfg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(runner, cells))
    else:
        results = [runner(c) for c in cells]
    rows = [r for r, _ in results]
    analysis = [a for _, rows_ in results for a in rows_]
    return RunRecord(cfg.config_hash(), rows, analysis, time.perf_counter() - start)


def timing_mixture(dim: int, seed: int) -> GaussianMixture:
    rng = np.random.default_rng([seed, dim])
    return GaussianMixture([0.5, 0.5], rng.standard_normal((2, dim)), [0.3, 0.3])


def timing_report(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """Source-branch generation cost per mode: predictor calls and best-of-N wall-clock.

    Modes: ``siminv_binary`` (w_s = 1), ``siminv_float`` (w_s = 0.5) and the
    asymmetric baseline (source regenerated at w_t).
    """
    spec = cfg.timing
    schedule = cfg.schedule.build(spec.n_steps)
    mix = timing_mixture(spec.dim, cfg.seed)
    base = AnalyticMixture(mix, schedule)
    c_s = text(0)
    z0 = mix.sample(np.random.default_rng([cfg.seed, 7]), 1, c_s)[0]
    modes = [
        ("siminv_binary", GuidanceConfig(1.0, cfg.sweep.w_t)),
        ("siminv_float", GuidanceConfig(0.5, cfg.sweep.w_t)),
        ("asymmetric_ddim", GuidanceConfig(0.5, cfg.sweep.w_t, "asymmetric_ddim")),
    ]
    rows = []
    for name, g in modes:
        z_T = invert(z0, base, schedule, g.inversion_scale, c_s).end
        counter = CountingPredictor(base)
        best = math.inf
        for _ in range(max(1, spec.repeats)):
            counter.reset()
            t0 = time.perf_counter()
            generate(z_T, counter, schedule, g.source_scale, c_s)
            best = min(best, time.perf_counter() - t0)
        rows.append({"mode": name, "w_source": g.source_scale, "n_steps": spec.n_steps,
                     "source_eps_calls": counter.calls, "seconds": best})
    calls = {r["mode"]: r["source_eps_calls"] for r in rows}
    if calls["siminv_binary"] != spec.n_steps or calls["siminv_float"] != 2 * spec.n_steps:
        raise RuntimeError(f"unexpected predictor call counts {calls}")
    return rows
