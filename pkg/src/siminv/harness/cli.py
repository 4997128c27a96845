"""Command line: ``siminv {train,invert,edit,sweep,analyze,plot,timing} --config PATH``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from siminv.analysis import error_report, step_gap
from siminv.ddim import Trajectory, invert
from siminv.editing import GuidanceConfig, TransferHook, edit, reconstruction_error
from siminv.errors import ParameterError
from siminv.harness.config import EditSpec, ExperimentConfig, load_config
from siminv.harness.plots import emit_plots
from siminv.harness.sweep import (
    SCHEMA_VERSION, RunRecord, fmt, rasterize, run_sweep, timing_report, write_csv, write_run_json,
)
from siminv.metrics import mse, psnr, ssim

log = logging.getLogger("siminv")

EDIT_FIELDS = ["schema_version", "name", "mode", "w_s", "w_t", "inversion_mode", "hook", "delta_pp",
               "step_gap", "mse", "psnr", "ssim", "error"]
TRAJECTORY_ANALYSIS_FIELDS = ["schema_version", "name", "t", "w", "delta", "bound", "w_star"]
TRAJECTORY_SUMMARY_FIELDS = ["schema_version", "name", "n_states", "step_gap", "w_star_pooled"]


def _edit_source(cfg: ExperimentConfig, index: int, spec: EditSpec) -> np.ndarray:
    return cfg.source_latent(spec.source, np.random.default_rng([cfg.seed, 1_000_000 + index]))


def _guidance(spec: EditSpec) -> GuidanceConfig:
    return GuidanceConfig(spec.w_s, spec.w_t, spec.baseline_mode)


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> None:
    from siminv.trainable import TrainConfig, save_params, train_denoiser

    tcfg = TrainConfig(cfg.train.learning_rate, cfg.train.batch_size, cfg.train.iterations, cfg.seed)
    schedule = cfg.schedule.build()
    params = train_denoiser(cfg.mixture.build(), schedule, tcfg, hidden=cfg.train.hidden)
    save_params(params, out / "weights.bin")
    write_csv(out / "train_loss.csv", ["schema_version", "iteration", "loss"],
              [{"schema_version": SCHEMA_VERSION, "iteration": i, "loss": loss}
               for i, loss in enumerate(params.losses)])
    write_run_json(out, cfg)
    log.info("final batch loss %.6f, weights in %s", params.losses[-1] if params.losses else float("nan"),
             out / "weights.bin")


def cmd_invert(cfg: ExperimentConfig, out: Path, args) -> None:
    schedule = cfg.schedule.build()
    predictor = cfg.build_predictor(schedule)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for k, spec in enumerate(cfg.edits):
        z0 = _edit_source(cfg, k, spec)
        g = _guidance(spec)
        traj = invert(z0, predictor, schedule, g.inversion_scale, cfg.mixture.condition(spec.source_condition),
                      spec.inversion_mode)
        traj.to_csv(traj_dir / f"{spec.name}_inversion.csv")
    write_run_json(out, cfg)


def cmd_edit(cfg: ExperimentConfig, out: Path, args) -> None:
    schedule = cfg.schedule.build()
    predictor = cfg.build_predictor(schedule)
    traj_dir = out / "trajectories"
    img_dir = out / "images"
    traj_dir.mkdir(exist_ok=True)
    img_dir.mkdir(exist_ok=True)
    rows = []
    for k, spec in enumerate(cfg.edits):
        row = {"schema_version": SCHEMA_VERSION, "name": spec.name, "mode": spec.baseline_mode, "w_s": spec.w_s,
               "w_t": spec.w_t, "inversion_mode": spec.inversion_mode, "hook": spec.hook.kind, "error": ""}
        try:
            z0 = _edit_source(cfg, k, spec)
            hook = TransferHook(spec.hook.kind, spec.hook.lam, spec.hook.mask)
            result = edit(z0, cfg.mixture.condition(spec.source_condition),
                          cfg.mixture.condition(spec.target_condition), _guidance(spec), hook, predictor,
                          schedule, spec.inversion_mode)
            result.inversion.to_csv(traj_dir / f"{spec.name}_inversion.csv")
            result.source_trajectory.to_csv(traj_dir / f"{spec.name}_source.csv")
            result.target_trajectory.to_csv(traj_dir / f"{spec.name}_target.csv")
            raster = cfg.sweep.raster
            a, b = rasterize(z0, raster), rasterize(result.source, raster)
            a.to_pgm(img_dir / f"{spec.name}_input.pgm")
            b.to_pgm(img_dir / f"{spec.name}_reconstruction.pgm")
            rasterize(result.target, raster).to_pgm(img_dir / f"{spec.name}_edited.pgm")
            row.update(delta_pp=reconstruction_error(result, z0), step_gap=step_gap(result.inversion),
                       mse=mse(a, b), psnr=psnr(a, b), ssim=ssim(a, b))
        except (ParameterError, ArithmeticError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    write_csv(out / "edits.csv", EDIT_FIELDS, rows)
    write_run_json(out, cfg)


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> None:
    record = run_sweep(cfg, workers=args.workers)
    record.write(out, cfg)
    emit_plots(record, out)
    failed = sum(1 for r in record.rows if r["error"])
    log.info("%d cells (%d failed) in %.2fs -> %s", len(record.rows), failed, record.elapsed, out)


def cmd_analyze(cfg: ExperimentConfig, out: Path, args) -> None:
    schedule = cfg.schedule.build()
    predictor = cfg.build_predictor(schedule)
    ws = sorted(set(cfg.sweep.delta_ws))
    rows, summary = [], []
    for spec in cfg.edits:
        path = out / "trajectories" / f"{spec.name}_inversion.csv"
        if not path.exists():
            raise ParameterError(f"{path} not found; run 'invert' or 'edit' first")
        traj = Trajectory.from_csv(path)
        report = error_report(traj, predictor, cfg.mixture.condition(spec.source_condition), ws)
        for step in report.steps:
            for w in ws:
                rows.append({"schema_version": SCHEMA_VERSION, "name": spec.name, "t": step.t, "w": w,
                             "delta": step.deltas[w], "bound": step.bounds[w], "w_star": step.w_star})
        summary.append({"schema_version": SCHEMA_VERSION, "name": spec.name, "n_states": len(traj.steps),
                        "step_gap": step_gap(traj), "w_star_pooled": report.pooled_w_star})
    write_csv(out / "trajectory_analysis.csv", TRAJECTORY_ANALYSIS_FIELDS, rows)
    write_csv(out / "trajectory_summary.csv", TRAJECTORY_SUMMARY_FIELDS, summary)


def cmd_plot(cfg: ExperimentConfig, out: Path, args) -> None:
    path = out / "results.csv"
    if not path.exists():
        raise ParameterError(f"{path} not found; run 'sweep' first")
    emit_plots(RunRecord.from_csv(path), out)


def cmd_timing(cfg: ExperimentConfig, out: Path, args) -> None:
    rows = timing_report(cfg)
    # wall-clock is a measurement, not a function of (config, seed): keep it out of the CSV
    write_csv(out / "timing.csv", ["schema_version", "mode", "w_source", "n_steps", "source_eps_calls"],
              [{"schema_version": SCHEMA_VERSION, **r} for r in rows])
    with open(out / "timing.json", "w") as fh:
        json.dump({"config_hash": cfg.config_hash(), "seconds": {r["mode"]: r["seconds"] for r in rows}},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in rows:
        print(f"{r['mode']:<16} calls={r['source_eps_calls']:<4} seconds={fmt(r['seconds'])}")


COMMANDS = {
    "train": (cmd_train, "fit the MLP regressor and write weights.bin"),
    "invert": (cmd_invert, "invert each configured source and dump its trajectory"),
    "edit": (cmd_edit, "run each configured dual-branch edit"),
    "sweep": (cmd_sweep, "run the w_s / step-count grid and write results.csv, summary.csv, plots"),
    "analyze": (cmd_analyze, "recompute delta(w), w* and step gaps from stored inversion trajectories"),
    "plot": (cmd_plot, "redraw plots from an existing results.csv"),
    "timing": (cmd_timing, "count predictor calls and time the source branch per guidance mode"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siminv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="override the output directory")
        p.add_argument("--workers", type=int, default=1, help="concurrent sweep cells")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output = str(args.out)
        out = Path(cfg.output) if args.out is not None else cfg.resolve(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, out, args)
    except ParameterError as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
