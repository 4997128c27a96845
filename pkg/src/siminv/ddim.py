"""Deterministic DDIM generation, inversion and fixed-point exact inversion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from siminv.errors import ParameterError
from siminv.predictor import Condition, NoisePredictor, guidance
from siminv.schedule import NoiseSchedule

EpsFn = Callable[[np.ndarray, int], np.ndarray]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
NEWTON_ITER = 20


class ConvergenceError(ArithmeticError):
    """Fixed-point iteration did not reach tolerance; ``residual`` is the last residual norm."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def ddim_transfer(z: np.ndarray, eps: np.ndarray, alpha_from: float, alpha_to: float) -> np.ndarray:
    """Move a latent between two noise levels along the DDIM line.

    z_to = sqrt(a_to / a_from) z + sqrt(a_to) (sqrt(1/a_to - 1) - sqrt(1/a_from - 1)) eps.
    Generation and inversion are both this map with the endpoints swapped.
    """
    scale, coef = _coefficients(alpha_from, alpha_to)
    return scale * z + coef * eps


def _coefficients(alpha_from: float, alpha_to: float) -> tuple[float, float]:
    scale = math.sqrt(alpha_to / alpha_from)
    coef = math.sqrt(alpha_to) * (math.sqrt(1.0 / alpha_to - 1.0) - math.sqrt(1.0 / alpha_from - 1.0))
    return scale, coef


def generation_step(z_t: np.ndarray, t: int, t_prev: int, eps: EpsFn, schedule: NoiseSchedule) -> np.ndarray:
    """One denoising step from ``t`` down to ``t_prev`` with the noise predicted at ``z_t``."""
    schedule.check_consecutive(t, t_prev)
    return ddim_transfer(z_t, eps(z_t, t), schedule.alpha(t), schedule.alpha(t_prev))


def inversion_step(z_prev: np.ndarray, t: int, t_prev: int, eps: EpsFn, schedule: NoiseSchedule) -> np.ndarray:
    """Standard DDIM inversion: approximate ``eps(z_t, t)`` by ``eps(z_prev, t)``."""
    schedule.check_consecutive(t, t_prev)
    return ddim_transfer(z_prev, eps(z_prev, t), schedule.alpha(t_prev), schedule.alpha(t))


def exact_inversion_step(z_prev: np.ndarray, t: int, t_prev: int, eps: EpsFn, schedule: NoiseSchedule,
                         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                         newton_iter: int = NEWTON_ITER) -> np.ndarray:
    """Solve the implicit step ``z_t = scale * z_prev + coef * eps(z_t, t)``.

    Plain fixed-point iteration seeded with the standard inversion estimate,
    stopped once ``||F(z) - z||`` (max over a batch) reaches ``tol``; that
    ``z`` is returned. Where the guided map is only weakly contractive the
    iteration stalls, so after ``max_iter`` sweeps the best iterate is
    polished with up to ``newton_iter`` Newton steps on ``z - F(z)`` using a
    finite-difference Jacobian.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    schedule.check_consecutive(t, t_prev)
    scale, coef = _coefficients(schedule.alpha(t_prev), schedule.alpha(t))
    z_prev = np.asarray(z_prev, dtype=np.float64)
    base = scale * z_prev

    def fmap(z):
        return base + coef * eps(z, t)

    z = fmap(z_prev)
    best, best_res = z, math.inf
    for _ in range(max_iter):
        g = fmap(z)
        residual = _residual(g - z)
        if residual <= tol:
            return z
        if residual < best_res:
            best, best_res = z, residual
        z = g

    z, residual = best, best_res
    for _ in range(newton_iter):
        r = z - fmap(z)
        residual = _residual(r)
        if residual <= tol:
            return z
        jac = np.eye(z.shape[-1]) - _fd_jacobian(fmap, z)
        try:
            z = z - np.linalg.solve(jac, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
    raise ConvergenceError(f"fixed point at t={t} not reached after {max_iter} sweeps "
                           f"and {newton_iter} Newton steps (residual {residual:.3e})", residual)


def _residual(r: np.ndarray) -> float:
    return math.sqrt(float((r * r).sum(axis=-1).max()))


def _fd_jacobian(fmap, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a row-wise map; shape ``z.shape + (d,)``."""
    d = z.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((fmap(z + e) - fmap(z - e)) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass
class Trajectory:
    """Timestep-indexed latents in visiting order.

    ``direction`` is ``"invert"`` (data to noise) or ``"generate"``.
    """

    steps: list[int]
    latents: list[np.ndarray]
    direction: Literal["invert", "generate"]

    def __post_init__(self):
        if len(self.steps) != len(self.latents) or not self.steps:
            raise ParameterError("steps and latents must be nonempty and of equal length")
        diffs = np.diff(self.steps)
        if self.direction == "invert" and np.any(diffs <= 0) or self.direction == "generate" and np.any(diffs >= 0):
            raise ParameterError("trajectory timesteps must be strictly monotone in its direction")
        shapes = {np.shape(z) for z in self.latents}
        if len(shapes) != 1:
            raise ParameterError("latent dimension changes along the trajectory")

    @property
    def start(self) -> np.ndarray:
        return self.latents[0]

    @property
    def end(self) -> np.ndarray:
        return self.latents[-1]

    def at(self, t: int) -> np.ndarray:
        try:
            return self.latents[self.steps.index(t)]
        except ValueError:
            raise ParameterError(f"trajectory has no state at t={t}") from None

    def to_csv(self, path) -> None:
        """Write rows ``t_index, dim_0..dim_{d-1}``; batched latents are not exportable."""
        d = np.shape(self.latents[0])
        if len(d) != 1:
            raise ParameterError("only unbatched trajectories can be exported")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_index"] + [f"dim_{i}" for i in range(d[0])])
            for t, z in zip(self.steps, self.latents):
                writer.writerow([t] + [repr(float(v)) for v in z])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        steps = [int(r[0]) for r in rows[1:]]
        latents = [np.array([float(v) for v in r[1:]]) for r in rows[1:]]
        direction = "invert" if len(steps) < 2 or steps[1] > steps[0] else "generate"
        return cls(steps, latents, direction)


def invert(z_0: np.ndarray, predictor: NoisePredictor, schedule: NoiseSchedule, w: float, cond: Condition,
           mode: Literal["standard", "exact"] = "standard", tol: float = DEFAULT_TOL,
           max_iter: int = DEFAULT_MAX_ITER) -> Trajectory:
    """Map a clean latent to noise over the schedule's inference steps under guidance scale ``w``."""
    if mode not in ("standard", "exact"):
        raise ParameterError(f"unknown inversion mode {mode!r}")
    eps = guidance(predictor, w, cond)
    steps = list(schedule.inference_steps)
    z = np.asarray(z_0, dtype=np.float64)
    latents = [z]
    for t_prev, t in zip(steps, steps[1:]):
        if mode == "exact":
            z = exact_inversion_step(z, t, t_prev, eps, schedule, tol, max_iter)
        else:
            z = inversion_step(z, t, t_prev, eps, schedule)
        latents.append(z)
    return Trajectory(steps, latents, "invert")


def generate(z_T: np.ndarray, predictor: NoisePredictor, schedule: NoiseSchedule, w: float,
             cond: Condition) -> Trajectory:
    """Denoise from the last inference step down to 0."""
    eps = guidance(predictor, w, cond)
    steps = list(reversed(schedule.inference_steps))
    z = np.asarray(z_T, dtype=np.float64)
    latents = [z]
    for t, t_prev in zip(steps, steps[1:]):
        z = generation_step(z, t, t_prev, eps, schedule)
        latents.append(z)
    return Trajectory(steps, latents, "generate")
