import numpy as np
import pytest

from siminv.errors import ParameterError, TrainingError
from siminv.predictor import NULL, AnalyticMixture, GaussianMixture, text
from siminv.schedule import make_linear_schedule
from siminv.trainable import (
    RegressorParams, TrainConfig, eval_regressor, init_params, load_params, loss_and_grad, save_params,
    train_denoiser, training_batch,
)

SCHED = make_linear_schedule()
SINGLE = GaussianMixture([1.0], [[0.5, -0.5]], [0.5])
CONDS = [NULL, text(0)]


def batch_loss(pred, batch, conds):
    out = np.empty_like(batch.noise)
    for k, c in enumerate(conds):
        rows = np.flatnonzero(batch.tag == k)
        for t in np.unique(batch.t[rows]):
            r = rows[batch.t[rows] == t]
            out[r] = pred(batch.z_t[r], int(t), c)
    return float(np.mean((out - batch.noise) ** 2))


def fd_gradient_check(params, batch, h=1e-6):
    _, gw, gb = loss_and_grad(params, batch)
    worst = 0.0
    for arrs, grads in ((params.weights, gw), (params.biases, gb)):
        for a, g in zip(arrs, grads):
            for idx in np.ndindex(a.shape):
                orig = a[idx]
                a[idx] = orig + h
                up = loss_and_grad(params, batch)[0]
                a[idx] = orig - h
                down = loss_and_grad(params, batch)[0]
                a[idx] = orig
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    return worst


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(batch_size=0), dict(iterations=-1), dict(seed=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            TrainConfig(**kw)


class TestEval:
    def test_zero_weights(self):
        p = init_params(2, 1000, CONDS, (8, 8))
        p = RegressorParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases], 1000, CONDS)
        np.testing.assert_array_equal(p(np.array([1.0, 2.0]), 10, NULL), [0.0, 0.0])

    def test_shapes_and_repeatable(self, rng):
        p = init_params(3, 1000, CONDS, (8,))
        z = rng.normal(size=(5, 3))
        out = eval_regressor(p, z, 100, text(0))
        assert out.shape == (5, 3)
        np.testing.assert_array_equal(out, eval_regressor(p, z, 100, text(0)))
        np.testing.assert_allclose(out[2], eval_regressor(p, z[2], 100, text(0)), rtol=1e-12, atol=1e-15)

    def test_condition_changes_output(self, rng):
        p = init_params(2, 1000, CONDS, (8,))
        z = rng.normal(size=2)
        assert not np.array_equal(p(z, 5, NULL), p(z, 5, text(0)))

    def test_errors(self):
        p = init_params(2, 1000, CONDS, (8,))
        with pytest.raises(ParameterError):
            p(np.zeros(3), 1, NULL)
        with pytest.raises(ParameterError):
            p(np.zeros(2), 1, text(5))


class TestGradient:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        mix = GaussianMixture([0.3, 0.7], [[1.0, 0.0], [-1.0, 0.5]], [0.2, 0.4])
        conds = [NULL, text(0), text(1)]
        p = init_params(2, 1000, conds, (5, 4), seed=seed)
        rng = np.random.default_rng(seed)
        for b in p.biases:
            b += 0.1 * rng.normal(size=b.shape)
        batch = training_batch(mix, SCHED, conds, 16, seed, 0)
        assert fd_gradient_check(p, batch) <= 1e-4


class TestTraining:
    def test_zero_iterations(self):
        cfg = TrainConfig(iterations=0, seed=4)
        p = train_denoiser(SINGLE, SCHED, cfg, CONDS, hidden=(8,))
        init = init_params(2, SCHED.T, CONDS, (8,), seed=4)
        for a, b in zip(p.weights + p.biases, init.weights + init.biases):
            np.testing.assert_array_equal(a, b)
        batch = training_batch(SINGLE, SCHED, CONDS, 64, 4, 0)
        assert loss_and_grad(p, batch)[0] == loss_and_grad(init, batch)[0]
        assert p.losses == []

    def test_deterministic(self):
        cfg = TrainConfig(iterations=50, batch_size=32, seed=9)
        a = train_denoiser(SINGLE, SCHED, cfg, hidden=(16, 16))
        b = train_denoiser(SINGLE, SCHED, cfg, hidden=(16, 16))
        for x, y in zip(a.weights + a.biases, b.weights + b.biases):
            assert x.tobytes() == y.tobytes()
        c = train_denoiser(SINGLE, SCHED, TrainConfig(iterations=50, batch_size=32, seed=10), hidden=(16, 16))
        assert c.weights[0].tobytes() != a.weights[0].tobytes()

    def test_batch_stream_is_counter_keyed(self):
        a = training_batch(SINGLE, SCHED, CONDS, 8, 3, 17)
        b = training_batch(SINGLE, SCHED, CONDS, 8, 3, 17)
        c = training_batch(SINGLE, SCHED, CONDS, 8, 3, 18)
        np.testing.assert_array_equal(a.z_t, b.z_t)
        assert not np.array_equal(a.z_t, c.z_t)
        assert a.t.min() >= 1 and a.t.max() <= SCHED.T

    def test_divergence(self):
        with pytest.raises(TrainingError) as exc:
            train_denoiser(SINGLE, SCHED, TrainConfig(learning_rate=1e6, iterations=50, batch_size=32))
        assert 0 <= exc.value.iteration < 50

    @pytest.mark.slow
    def test_approaches_analytic_minimum(self):
        """Default learning rate; smoothed final loss within 10% of the exact predictor's loss."""
        cfg = TrainConfig()
        p = train_denoiser(SINGLE, SCHED, cfg, CONDS)
        window = range(cfg.iterations - 300, cfg.iterations)
        oracle = AnalyticMixture(SINGLE, SCHED)
        ref = np.mean([batch_loss(oracle, training_batch(SINGLE, SCHED, CONDS, cfg.batch_size, cfg.seed, i), CONDS)
                       for i in window])
        got = np.mean([p.losses[i] for i in window])
        assert got <= 1.1 * ref
        losses = np.asarray(p.losses)
        zero = np.mean([np.mean(training_batch(SINGLE, SCHED, CONDS, cfg.batch_size, cfg.seed, i).noise ** 2)
                        for i in window])
        assert got < zero
        smooth = np.convolve(losses, np.ones(100) / 100, mode="valid")
        assert smooth[-1] <= smooth[0]


class TestSerialization:
    def test_round_trip(self, tmp_path):
        p = train_denoiser(SINGLE, SCHED, TrainConfig(iterations=5, batch_size=16), [NULL, text(0)], hidden=(6, 5))
        save_params(p, tmp_path / "w.bin")
        q = load_params(tmp_path / "w.bin")
        assert q.T == p.T and q.conditions == p.conditions and q.sizes == p.sizes
        z = np.array([0.3, -0.2])
        np.testing.assert_array_equal(q(z, 10, text(0)), p(z, 10, text(0)))

    def test_bad_files(self, tmp_path):
        p = init_params(2, 1000, CONDS, (4,))
        save_params(p, tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        for name, blob in [("magic", b"XXXXXXXX" + data[8:]), ("short", data[:-8]), ("long", data + b"\0" * 8),
                           ("header", data[:20])]:
            (tmp_path / name).write_bytes(blob)
            with pytest.raises(ParameterError):
                load_params(tmp_path / name)
