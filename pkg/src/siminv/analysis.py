"""Guidance-dependent prediction error: delta(w), its optimum, bounds and step gaps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from siminv.ddim import Trajectory
from siminv.errors import DegenerateError, ParameterError
from siminv.predictor import NULL, Condition, NoisePredictor, guided_eps


@dataclass(frozen=True)
class ErrorVectors:
    """Prediction differences ``eps(z_t) - eps(z_prev)`` at a shared timestep.

    ``x_c`` under the text condition, ``x_null`` under the null condition.
    """

    x_c: np.ndarray
    x_null: np.ndarray

    def __post_init__(self):
        x_c = np.asarray(self.x_c, dtype=np.float64).ravel()
        x_null = np.asarray(self.x_null, dtype=np.float64).ravel()
        if x_c.shape != x_null.shape:
            raise ParameterError("x_c and x_null must have equal dimension")
        if not (np.all(np.isfinite(x_c)) and np.all(np.isfinite(x_null))):
            raise ParameterError("error vectors must be finite")
        object.__setattr__(self, "x_c", x_c)
        object.__setattr__(self, "x_null", x_null)


def delta(w: float, v: ErrorVectors) -> float:
    """``||w (x_c - x_null) + x_null||``, the guided prediction error at scale w."""
    return float(np.linalg.norm(w * (v.x_c - v.x_null) + v.x_null))


def delta_direct(w: float, z_t: np.ndarray, z_prev: np.ndarray, t: int, cond: Condition,
                 predictor: NoisePredictor) -> float:
    """The same error evaluated from raw guided predictions at both latents."""
    a = guided_eps(z_t, t, w, cond, predictor)
    b = guided_eps(z_prev, t, w, cond, predictor)
    return float(np.linalg.norm(np.ravel(a - b)))


def optimal_w(v: ErrorVectors) -> float:
    """Vertex of the quadratic ``delta(w)**2``: ``(x_null - x_c) . x_null / ||x_c - x_null||**2``."""
    diff = v.x_null - v.x_c
    denom = float(diff @ diff)
    if denom == 0.0:
        raise DegenerateError("x_c equals x_null; delta does not depend on w")
    return float(diff @ v.x_null) / denom


def bound_delta(w: float, v: ErrorVectors) -> float:
    """Triangle-inequality bound ``|w| ||x_c|| + |1 - w| ||x_null||``."""
    return abs(w) * float(np.linalg.norm(v.x_c)) + abs(1.0 - w) * float(np.linalg.norm(v.x_null))


@dataclass
class BoundMinimumReport:
    checked: int
    violations: list[tuple[float, float, float]] = field(default_factory=list)
    """(w, bound(w), min(bound(0), bound(1))) for each failure."""

    @property
    def ok(self) -> bool:
        return not self.violations


def check_bound_minimum(v: ErrorVectors, ws: Iterable[float]) -> BoundMinimumReport:
    """Check ``bound(w) >= min(bound(0), bound(1))`` for each non-negative w."""
    floor = min(bound_delta(0.0, v), bound_delta(1.0, v))
    report = BoundMinimumReport(0)
    for w in ws:
        if w < 0:
            raise ParameterError("the bound minimum is only claimed for w >= 0")
        report.checked += 1
        b = bound_delta(w, v)
        if b < floor:
            report.violations.append((float(w), b, floor))
    return report


@dataclass
class OrthogonalScaleReport:
    trials: int
    max_abs_w_orthogonal: float
    worst_inner_product: float
    non_orthogonal_example: ErrorVectors | None
    non_orthogonal_w: float

    @property
    def ok(self) -> bool:
        return self.max_abs_w_orthogonal <= 1.0 + 1e-12 and abs(self.non_orthogonal_w) > 1.0


def orthogonal_pair(rng: np.random.Generator, dim: int) -> ErrorVectors:
    """Random pair with x_c . x_null = 0 up to rounding (projection removed from x_null)."""
    x_c = rng.standard_normal(dim) * rng.uniform(0.1, 10.0)
    x_null = rng.standard_normal(dim) * rng.uniform(0.1, 10.0)
    x_null = x_null - (x_null @ x_c) / (x_c @ x_c) * x_c
    return ErrorVectors(x_c, x_null)


def check_orthogonal_scale(trials: int, dim: int, seed: int = 0) -> OrthogonalScaleReport:
    """|w*| <= 1 on orthogonal pairs; search nearly-parallel pairs for a counterexample to drop orthogonality."""
    if trials < 1 or dim < 2:
        raise ParameterError("need trials >= 1 and dim >= 2")
    rng = np.random.default_rng(seed)
    worst, worst_ip = 0.0, 0.0
    for _ in range(trials):
        v = orthogonal_pair(rng, dim)
        worst = max(worst, abs(optimal_w(v)))
        worst_ip = max(worst_ip, abs(float(v.x_c @ v.x_null)))

    # x_null slightly shorter than and almost aligned with x_c pushes the vertex past 1
    example, example_w = None, 0.0
    for _ in range(trials):
        x_c = rng.standard_normal(dim)
        x_null = 0.99 * x_c + 0.01 * rng.standard_normal(dim)
        v = ErrorVectors(x_c, x_null)
        w = optimal_w(v)
        if abs(w) > abs(example_w):
            example, example_w = v, w
        if abs(w) > 1.0:
            break
    return OrthogonalScaleReport(trials, worst, worst_ip, example, example_w)


def step_gap(trajectory: Trajectory) -> float:
    """Mean over consecutive pairs (ordered by timestep) of ``||z_t - z_{t-1}|| / ||z_{t-1}||``."""
    if len(trajectory.steps) < 2:
        raise ParameterError("step gap needs at least two states")
    order = np.argsort(trajectory.steps)
    zs = [np.ravel(trajectory.latents[i]) for i in order]
    ratios = []
    for lower, upper in zip(zs, zs[1:]):
        n = float(np.linalg.norm(lower))
        if n == 0.0:
            raise DegenerateError("zero-norm latent in trajectory")
        ratios.append(float(np.linalg.norm(upper - lower)) / n)
    return float(np.mean(ratios))


def error_vectors_from_trajectory(traj: Trajectory, predictor: NoisePredictor, cond: Condition,
                                  t: int) -> ErrorVectors:
    """Differences of the four predictions at ``(z_t, t)`` and ``(z_prev, t)``, z_prev the state just below t."""
    steps = sorted(traj.steps)
    if t not in steps or steps.index(t) == 0:
        raise ParameterError(f"trajectory lacks consecutive states ending at t={t}")
    t_prev = steps[steps.index(t) - 1]
    z_t, z_prev = traj.at(t), traj.at(t_prev)
    x_c = predictor(z_t, t, cond) - predictor(z_prev, t, cond)
    x_null = predictor(z_t, t, NULL) - predictor(z_prev, t, NULL)
    return ErrorVectors(x_c, x_null)


def jacobian_norm(eps, z: np.ndarray, t: int, h: float = 1e-6) -> float:
    """Frobenius norm of the central-difference Jacobian of ``eps(., t)`` at z."""
    z = np.asarray(z, dtype=np.float64)
    total = 0.0
    for j in range(z.size):
        e = np.zeros_like(z)
        e.flat[j] = h
        col = (eps(z + e, t) - eps(z - e, t)) / (2 * h)
        total += float(np.sum(col * col))
    return math.sqrt(total)


@dataclass
class StepError:
    t: int
    w_star: float
    deltas: dict[float, float]
    bounds: dict[float, float]
    vectors: ErrorVectors


@dataclass
class ErrorReport:
    """Per-step errors along one trajectory plus their trajectory averages."""

    ws: list[float]
    steps: list[StepError]

    @property
    def mean_delta(self) -> dict[float, float]:
        return {w: float(np.mean([s.deltas[w] for s in self.steps])) for w in self.ws}

    @property
    def mean_bound(self) -> dict[float, float]:
        return {w: float(np.mean([s.bounds[w] for s in self.steps])) for w in self.ws}

    @property
    def pooled_w_star(self) -> float:
        """Minimiser of the summed squared error over all steps.

        Per-step w* blows up wherever x_c is close to x_null, so the plain
        mean is useless as a trajectory summary.
        """
        num = sum(float((s.vectors.x_null - s.vectors.x_c) @ s.vectors.x_null) for s in self.steps)
        den = sum(float((s.vectors.x_null - s.vectors.x_c) @ (s.vectors.x_null - s.vectors.x_c))
                  for s in self.steps)
        return num / den if den > 0 else math.nan


def error_report(traj: Trajectory, predictor: NoisePredictor, cond: Condition,
                 ws: Sequence[float]) -> ErrorReport:
    """delta(w), bound(w) and w* at every consecutive pair of the trajectory."""
    steps = sorted(traj.steps)[1:]
    rows = []
    for t in steps:
        v = error_vectors_from_trajectory(traj, predictor, cond, t)
        try:
            w_star = optimal_w(v)
        except DegenerateError:
            w_star = math.nan
        rows.append(StepError(t, w_star, {w: delta(w, v) for w in ws}, {w: bound_delta(w, v) for w in ws}, v))
    return ErrorReport(list(ws), rows)
