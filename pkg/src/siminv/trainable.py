"""A small MLP noise regressor trained with the simple noise-prediction loss.

Input is ``[z, t / T, one_hot(condition)]``; two SiLU hidden layers; linear
output of the latent dimension. Plain SGD on mean squared error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from siminv.errors import ParameterError, TrainingError
from siminv.predictor import NULL, Condition, GaussianMixture, text
from siminv.schedule import NoiseSchedule

MAGIC = b"SIMINV01"


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 256
    iterations: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 0 or self.seed < 0:
            raise ParameterError("learning rate and batch size must be positive, iterations and seed non-negative")


@dataclass
class RegressorParams:
    """Layer weights ``(fan_in, fan_out)`` and biases, plus the input encoding it was trained with."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    T: int
    conditions: list[Condition]
    losses: list[float] = field(default_factory=list, compare=False)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dim(self) -> int:
        return self.weights[-1].shape[1]

    def __call__(self, z, t, cond):
        return eval_regressor(self, z, t, cond)


def init_params(dim: int, T: int, conditions: Sequence[Condition], hidden: Sequence[int] = (64, 64),
                seed: int = 0) -> RegressorParams:
    sizes = [dim + 1 + len(conditions), *hidden, dim]
    rng = np.random.default_rng([seed, 1])
    weights = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(sizes, sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return RegressorParams(weights, biases, T, list(conditions))


def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


def _encode(params: RegressorParams, z: np.ndarray, t, tag) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n = z.shape[0]
    onehot = np.zeros((n, len(params.conditions)))
    onehot[np.arange(n), tag] = 1.0
    tcol = np.broadcast_to(np.asarray(t, dtype=np.float64) / params.T, (n,))[:, None]
    return np.hstack([z, tcol, onehot])


def _forward(params: RegressorParams, x: np.ndarray):
    acts, gates = [x], []
    h = x
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ W + b
        if i < len(params.weights) - 1:
            h, s = _silu(pre)
            gates.append((pre, s))
        else:
            h = pre
        acts.append(h)
    return h, acts, gates


def eval_regressor(params: RegressorParams, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
    """Predicted noise for ``z`` of shape ``(d,)`` or ``(n, d)``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.dim:
        raise ParameterError(f"latent dimension {z.shape[-1]} does not match regressor dimension {params.dim}")
    try:
        tag = params.conditions.index(cond)
    except ValueError:
        raise ParameterError(f"regressor was not trained on condition {cond}") from None
    out, _, _ = _forward(params, _encode(params, z, t, tag))
    return out[0] if z.ndim == 1 else out


@dataclass
class Batch:
    z_t: np.ndarray
    t: np.ndarray
    tag: np.ndarray
    noise: np.ndarray
    z_0: np.ndarray


def training_batch(mixture: GaussianMixture, schedule: NoiseSchedule, conditions: Sequence[Condition],
                   batch_size: int, seed: int, iteration: int) -> Batch:
    """Batch ``iteration`` of the stream keyed by ``seed`` (Philox counter block = iteration)."""
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, iteration]))
    tag = rng.integers(len(conditions), size=batch_size)
    t = rng.integers(1, schedule.T + 1, size=batch_size)
    z_0 = np.empty((batch_size, mixture.dim))
    for k, cond in enumerate(conditions):
        rows = np.flatnonzero(tag == k)
        if rows.size:
            z_0[rows] = mixture.sample(rng, rows.size, cond)
    noise = rng.standard_normal(z_0.shape)
    a = schedule.alphas[t][:, None]
    return Batch(np.sqrt(a) * z_0 + np.sqrt(1.0 - a) * noise, t, tag, noise, z_0)


def loss_and_grad(params: RegressorParams, batch: Batch):
    """Mean squared noise-prediction error and its gradients (weights, biases)."""
    x = _encode(params, batch.z_t, batch.t, batch.tag)
    out, acts, gates = _forward(params, x)
    resid = out - batch.noise
    loss = float(np.mean(resid * resid))
    g = 2.0 * resid / resid.size
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
            pre, s = gates[i - 1]
            g = g * (s * (1.0 + pre * (1.0 - s)))
    return loss, gw, gb


def default_conditions(mixture: GaussianMixture) -> list[Condition]:
    return [NULL] + [text(k) for k in range(mixture.n_components)]


def train_denoiser(mixture: GaussianMixture, schedule: NoiseSchedule, cfg: TrainConfig,
                   conditions: Sequence[Condition] | None = None,
                   hidden: Sequence[int] = (64, 64)) -> RegressorParams:
    """Fit the regressor by SGD; ``params.losses`` records the per-iteration batch loss."""
    conditions = list(conditions) if conditions is not None else default_conditions(mixture)
    params = init_params(mixture.dim, schedule.T, conditions, hidden, cfg.seed)
    for it in range(cfg.iterations):
        batch = training_batch(mixture, schedule, conditions, cfg.batch_size, cfg.seed, it)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gw, gb = loss_and_grad(params, batch)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at iteration {it}", it)
        params.losses.append(loss)
        for W, g in zip(params.weights, gw):
            W -= cfg.learning_rate * g
        for b, g in zip(params.biases, gb):
            b -= cfg.learning_rate * g
    return params


def save_params(params: RegressorParams, path) -> None:
    """Flat little-endian file: magic, T, conditions, layer sizes, then float64 W/b per layer."""
    out = [MAGIC, struct.pack("<QQ", params.T, len(params.conditions))]
    for cond in params.conditions:
        comps = [] if cond.is_null else sorted(cond.components)
        out.append(struct.pack(f"<Q{len(comps)}Q", len(comps), *comps))
    sizes = params.sizes
    out.append(struct.pack(f"<Q{len(sizes)}Q", len(sizes), *sizes))
    for W, b in zip(params.weights, params.biases):
        out.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_params(path) -> RegressorParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ParameterError(f"{path}: bad magic {data[:8]!r}")
    pos = 8

    def counts(n):
        nonlocal pos
        if pos + 8 * n > len(data):
            raise ParameterError(f"{path}: truncated header")
        vals = struct.unpack_from(f"<{n}Q", data, pos)
        pos += 8 * n
        return vals

    T, n_cond = counts(2)
    conditions = []
    for _ in range(n_cond):
        (k,) = counts(1)
        conditions.append(text(*counts(k)) if k else NULL)
    (n_sizes,) = counts(1)
    sizes = counts(n_sizes)
    weights, biases = [], []
    for a, b in zip(sizes, sizes[1:]):
        for shape in ((a, b), (b,)):
            n = int(np.prod(shape))
            if pos + 8 * n > len(data):
                raise ParameterError(f"{path}: truncated weights")
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
            (weights if len(shape) == 2 else biases).append(arr)
    if pos != len(data):
        raise ParameterError(f"{path}: {len(data) - pos} trailing bytes")
    if sizes[0] != sizes[-1] + 1 + n_cond:
        raise ParameterError(f"{path}: input width inconsistent with conditions")
    return RegressorParams(weights, biases, T, conditions)
