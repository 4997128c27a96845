"""Experiment runner: configs, sweeps, plots and the command line."""

from siminv.harness.config import ExperimentConfig, load_config
from siminv.harness.sweep import RunRecord, run_sweep, timing_report
from siminv.harness.plots import emit_plots

__all__ = ["ExperimentConfig", "RunRecord", "emit_plots", "load_config", "run_sweep", "timing_report"]
