"""End-to-end acceptance checks; each prints one PASS/FAIL line (also shown in the terminal summary)."""

import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE_LINES
from test_metrics import ssim_reference
from test_trainable import fd_gradient_check

from siminv.analysis import (
    ErrorVectors, bound_delta, check_orthogonal_scale, check_bound_minimum, delta, jacobian_norm, optimal_w, step_gap,
)
from siminv.ddim import exact_inversion_step, generate, generation_step, invert
from siminv.harness.cli import main
from siminv.harness.config import config_from_dict
from siminv.harness.sweep import run_sweep, timing_report
from siminv.metrics import ImageGrid, psnr, ssim
from siminv.predictor import NULL, AnalyticMixture, GaussianMixture, MixtureBatch, guidance, random_mixture, text
from siminv.schedule import make_linear_schedule, subsample
from siminv.trainable import init_params, training_batch


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_symmetric_recovery():
    sched = subsample(make_linear_schedule(), 50)
    rng = np.random.default_rng(101)
    mixtures = [random_mixture(rng) for _ in range(100)]
    z0 = np.stack([m.sample(rng, 1, text(0))[0] for m in mixtures])
    pred = MixtureBatch(mixtures, sched)
    start = time.perf_counter()
    worst = {}
    for w in (0.0, 0.5, 1.0, 7.5):
        z_T = invert(z0, pred, sched, w, text(0), mode="exact").end
        z_hat = generate(z_T, pred, sched, w, text(0)).end
        worst[w] = float(np.max(np.linalg.norm(z_hat - z0, axis=1) / np.linalg.norm(z0, axis=1)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and elapsed < 10.0
    report(1, "symmetric recovery", ok,
           "max rel err " + ", ".join(f"w={w:g}:{e:.1e}" for w, e in worst.items()) + f"; {elapsed:.2f}s")


def _row_guidance(pred, w, cond):
    """Guided prediction with a separate scale per batch row."""
    return lambda z, t: w[:, None] * pred(z, t, cond) + (1 - w)[:, None] * pred(z, t, NULL)


def test_02_one_step_gap_identity():
    # First steps t1 in {1, 2, 5, 10}, 250 draws each. Sources come from the component the guidance does
    # not point at, so the conditional and null predictions disagree and the gap is measurable in float64.
    base = make_linear_schedule()
    rng = np.random.default_rng(202)
    worst, count = 0.0, 0
    for n_steps in (1000, 500, 200, 100):
        sched = subsample(base, n_steps)
        t1 = sched.inference_steps[1]
        mixtures = [random_mixture(rng) for _ in range(250)]
        pred = MixtureBatch(mixtures, sched)
        z0 = np.stack([m.sample(rng, 1, text(1))[0] for m in mixtures])
        w_i, w_g = rng.uniform(0, 8, size=250), rng.uniform(0, 8, size=250)
        z1 = exact_inversion_step(z0, t1, 0, _row_guidance(pred, w_i, text(0)), sched, tol=1e-14)
        z0_hat = generation_step(z1, t1, 0, _row_guidance(pred, w_g, text(0)), sched)
        measured = np.linalg.norm(z0_hat - z0, axis=1)
        a0, a1 = sched.alpha(0), sched.alpha(t1)
        coef = np.sqrt(a0) * abs(np.sqrt(1 / a1 - 1) - np.sqrt(1 / a0 - 1))
        closed = coef * np.abs(w_g - w_i) * np.linalg.norm(pred(z1, t1, text(0)) - pred(z1, t1, NULL), axis=1)
        worst = max(worst, float(np.max(np.abs(measured - closed) / closed)))
        count += len(mixtures)
    report(2, "one-step gap identity", worst <= 1e-10 and count == 1000, f"{count} draws, max rel dev {worst:.1e}")


def test_03_optimal_scale_grid():
    rng = np.random.default_rng(303)
    grid = -3.0 + 1e-4 * np.arange(70001)
    worst_gap, min_ok = 0.0, True
    for _ in range(1000):
        v = ErrorVectors(rng.normal(size=16), rng.normal(size=16))
        w_star = optimal_w(v)
        deltas = np.linalg.norm(grid[:, None] * (v.x_c - v.x_null)[None, :] + v.x_null[None, :], axis=1)
        # a convex quadratic's grid minimiser sits at the clipped vertex
        worst_gap = max(worst_gap, abs(grid[np.argmin(deltas)] - np.clip(w_star, -3.0, 4.0)))
        min_ok &= bool(delta(w_star, v) <= deltas.min() * (1 + 1e-12))
    report(3, "optimal scale vs grid", worst_gap <= 2e-4 and min_ok,
           f"max |argmin - w*| {worst_gap:.1e}, delta(w*) <= grid min: {min_ok}")


def test_04_orthogonal_scale():
    rep = check_orthogonal_scale(10_000, 8, seed=404)
    report(4, "orthogonal errors give |w*| <= 1", rep.ok,
           f"max |w*| {rep.max_abs_w_orthogonal:.6f} over {rep.trials} pairs; "
           f"non-orthogonal counterexample w* = {rep.non_orthogonal_w:.3f}")


def test_05_bound_minimum():
    rng = np.random.default_rng(505)
    violations, endpoint_ok = 0, True
    for _ in range(10_000):
        d = int(rng.integers(1, 9))
        v = ErrorVectors(rng.normal(size=d) * rng.exponential(), rng.normal(size=d) * rng.exponential())
        w = float(rng.exponential(2.0)) if rng.random() < 0.9 else float(rng.uniform(0, 1))
        violations += len(check_bound_minimum(v, [w]).violations)
        # the better endpoint attains the floor exactly
        ends = [bound_delta(0.0, v), bound_delta(1.0, v)]
        endpoint_ok &= bound_delta(float(np.argmin(ends)), v) == min(ends)
    tie = ErrorVectors([3.0, 0.0], [0.0, 3.0])
    endpoint_ok &= bound_delta(0.0, tie) == bound_delta(1.0, tie) == 3.0
    report(5, "bound minimised at w in {0,1}", violations == 0 and endpoint_ok,
           f"{violations} violations in 10000 samples; endpoint equality: {endpoint_ok}")


def test_06_lipschitz_scaling():
    sched = subsample(make_linear_schedule(), 50)
    mix = GaussianMixture([0.5, 0.5], [[-1.5, 1.0], [1.5, -0.5]], [0.25, 0.35])
    pred = AnalyticMixture(mix, sched)
    rng = np.random.default_rng(606)
    worst, pairs = 0.0, 0
    for w in (0.0, 0.5, 1.0, 7.5, 0.0, 0.5, 1.0, 7.5, 2.0, 0.8):
        eps = guidance(pred, w, text(0))
        traj = invert(mix.sample(rng, 1, text(0))[0], pred, sched, w, text(0))
        zs = {t: z for t, z in zip(traj.steps, traj.latents)}
        steps = sorted(zs)
        for t_prev, t in zip(steps, steps[1:]):
            ratio = np.linalg.norm(eps(zs[t], t) - eps(zs[t_prev], t)) / np.linalg.norm(zs[t] - zs[t_prev])
            worst = max(worst, float(ratio / jacobian_norm(eps, zs[t_prev], t)))
            pairs += 1
    report(6, "prediction error scales with step", worst <= 2.0 and pairs == 500,
           f"max ratio / Jacobian norm {worst:.3f} over {pairs} pairs")


def _preservation_config(**sweep):
    base = dict(w_values=[0, 0.5, 1, 2], step_counts=[], instances=50, include_baseline=True,
                inversion_mode="standard")
    base.update(sweep)
    return config_from_dict({"seed": 7, "sweep": base})


def test_07_preservation_trend():
    rec = run_sweep(_preservation_config(), workers=4)
    means = {(r["mode"], r["w_s"]): r["mean_delta_pp"] for r in rec.summary()}
    baseline = means[("asymmetric_ddim", 7.5)]
    sym = {w: means[("siminversion", w)] for w in (0.0, 0.5, 1.0, 2.0)}
    ok = all(sym[w] < baseline for w in (0.0, 0.5, 1.0)) and sym[2.0] > sym[0.5]
    report(7, "preservation trend", ok,
           " ".join(f"w_s={w:g}:{d:.4f}" for w, d in sym.items()) + f" baseline:{baseline:.4f}")


def test_08_step_gap_trend():
    mix = GaussianMixture([0.5, 0.5], [[-1.5, 1.0], [1.5, -0.5]], [0.25, 0.35])
    z0 = mix.sample(np.random.default_rng(808), 1, text(0))[0]
    gaps = {}
    for n in (10, 50, 100, 500):
        sched = subsample(make_linear_schedule(), n)
        gaps[n] = step_gap(invert(z0, AnalyticMixture(mix, sched), sched, 0.5, text(0)))
    ok = gaps[500] < gaps[100] < gaps[50] < gaps[10]
    report(8, "step gap shrinks with steps", ok, " ".join(f"{n}:{g:.4f}" for n, g in gaps.items()))


def test_09_efficiency():
    cfg = config_from_dict({"timing": {"dim": 256, "n_steps": 50, "repeats": 7}})
    rows = {r["mode"]: r for r in timing_report(cfg)}
    b, f = rows["siminv_binary"], rows["siminv_float"]
    ok = b["source_eps_calls"] == 50 and f["source_eps_calls"] == 100 and b["seconds"] < f["seconds"]
    report(9, "binary scale halves predictor calls", ok,
           f"calls {b['source_eps_calls']} vs {f['source_eps_calls']}; "
           f"{b['seconds'] * 1e3:.2f} ms vs {f['seconds'] * 1e3:.2f} ms at d=256")


def test_10_metric_sanity():
    rng = np.random.default_rng(1010)
    a = ImageGrid.from_array(rng.random((16, 16)))
    b = ImageGrid.from_array(rng.random((16, 16)))
    self_ssim = ssim(a, a)
    sentinel = psnr(a, a)
    oracle_dev = abs(ssim(a, b) - ssim_reference(a, b)) / abs(ssim_reference(a, b))
    mix = GaussianMixture([0.3, 0.7], [[1.0, 0.0], [-1.0, 0.5]], [0.2, 0.4])
    conds = [NULL, text(0), text(1)]
    grad_dev = fd_gradient_check(init_params(2, 1000, conds, (5, 4), seed=10),
                                 training_batch(mix, make_linear_schedule(), conds, 16, 10, 0))
    ok = self_ssim == 1.0 and sentinel == float("inf") and oracle_dev <= 1e-10 and grad_dev <= 1e-4
    report(10, "metric sanity", ok,
           f"ssim(a,a)={self_ssim!r}, psnr(a,a)={sentinel}, ssim oracle dev {oracle_dev:.1e}, "
           f"gradient check dev {grad_dev:.1e}")


def _cli_round(cfg_path: Path, out: Path):
    base = ["--config", str(cfg_path), "--out", str(out)]
    codes = [main(["train"] + base), main(["invert"] + base), main(["edit"] + base), main(["analyze"] + base),
             main(["sweep"] + base + ["--workers", "3"]), main(["timing"] + base)]
    return codes, {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


def test_11_cli_determinism(tmp_path):
    data = yaml.safe_load((Path(__file__).resolve().parents[1] / "configs" / "default.yaml").read_text())
    data["train"].update(iterations=30, batch_size=32, hidden=[8, 8])
    data["sweep"].update(instances=2, step_counts=[10, 50])
    data["timing"].update(dim=16, repeats=1)
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(data))
    codes_a, a = _cli_round(cfg_path, tmp_path / "a")
    codes_b, b = _cli_round(cfg_path, tmp_path / "b")
    ok = codes_a == codes_b == [0] * 6 and a == b and len(a) >= 10
    differing = sorted(k for k in a if a.get(k) != b.get(k))
    report(11, "CLI determinism", ok, f"{len(a)} CSV files byte-identical across reruns"
           if ok else f"exit codes {codes_a}/{codes_b}, differing: {differing}")
