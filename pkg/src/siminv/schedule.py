"""Cumulative-product noise schedules and inference-time subsampling."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from siminv.errors import ParameterError


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients ``alphas[t]`` for t = 0..T.

    ``alphas[0]`` is the data end and is always exactly 1. ``inference_steps``
    lists the timestep indices visited at run time, in increasing order.
    """

    alphas: np.ndarray
    inference_steps: tuple[int, ...] = field(default=())

    def __post_init__(self):
        alphas = np.array(self.alphas, dtype=np.float64)
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        if alphas.ndim != 1 or alphas.size < 2:
            raise ParameterError("alphas must be a 1-D sequence with at least two entries")
        if alphas[0] != 1.0:
            raise ParameterError("alphas[0] must be exactly 1")
        if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0.0):
            raise ParameterError("alphas must be finite and positive")
        if np.any(np.diff(alphas) >= 0.0):
            raise ParameterError("alphas must be strictly decreasing")

        steps = tuple(int(s) for s in self.inference_steps) or tuple(range(alphas.size))
        if steps[0] != 0 or any(b <= a for a, b in zip(steps, steps[1:])) or steps[-1] > alphas.size - 1:
            raise ParameterError("inference_steps must be strictly increasing within 0..T and start at 0")
        object.__setattr__(self, "inference_steps", steps)

    @property
    def T(self) -> int:
        return self.alphas.size - 1

    @property
    def n_steps(self) -> int:
        return len(self.inference_steps) - 1

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside 0..{self.T}")
        return float(self.alphas[t])

    def previous(self, t: int) -> int:
        """The inference index immediately below ``t``."""
        i = self._position(t)
        if i == 0:
            raise ParameterError("timestep 0 has no predecessor")
        return self.inference_steps[i - 1]

    def check_consecutive(self, t: int, t_prev: int) -> None:
        i = self._position(t)
        if i == 0 or self.inference_steps[i - 1] != t_prev:
            raise ParameterError(f"({t_prev}, {t}) are not consecutive inference steps")

    def _position(self, t: int) -> int:
        try:
            return self.inference_steps.index(t)
        except ValueError:
            raise ParameterError(f"timestep {t} is not an inference step") from None


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear-beta schedule with ``alphas[t] = prod_{s<=t} (1 - beta_s)`` and ``alphas[0] = 1``."""
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alphas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(alphas)


def subsample(schedule: NoiseSchedule, n_steps: int) -> NoiseSchedule:
    """Uniform floor-stride subsequence ``floor(i * T / n_steps)`` for i = 0..n_steps."""
    T = schedule.T
    if int(n_steps) != n_steps or not 1 <= n_steps <= T:
        raise ParameterError(f"n_steps must be in 1..{T}, got {n_steps}")
    steps = tuple((i * T) // n_steps for i in range(int(n_steps) + 1))
    return replace(schedule, inference_steps=steps)
