"""Dual-branch editing: a shared inverted noise, a source branch and a target branch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from siminv.ddim import DEFAULT_MAX_ITER, DEFAULT_TOL, Trajectory, generation_step, invert
from siminv.errors import ParameterError
from siminv.predictor import Condition, NoisePredictor, guidance
from siminv.schedule import NoiseSchedule


@dataclass(frozen=True)
class GuidanceConfig:
    """Source scale ``w_s`` and target scale ``w_t``.

    ``siminversion`` inverts and regenerates the source branch at ``w_s``.
    ``asymmetric_ddim`` is the vanilla baseline: inversion at scale 1 and
    source generation at ``w_t``; ``w_s`` is ignored.
    """

    w_s: float = 0.5
    w_t: float = 7.5
    baseline_mode: Literal["siminversion", "asymmetric_ddim"] = "siminversion"

    def __post_init__(self):
        if not (np.isfinite(self.w_s) and np.isfinite(self.w_t)):
            raise ParameterError("guidance scales must be finite")
        if self.baseline_mode not in ("siminversion", "asymmetric_ddim"):
            raise ParameterError(f"unknown baseline mode {self.baseline_mode!r}")

    @property
    def inversion_scale(self) -> float:
        return self.w_s if self.baseline_mode == "siminversion" else 1.0

    @property
    def source_scale(self) -> float:
        return self.w_s if self.baseline_mode == "siminversion" else self.w_t


@dataclass(frozen=True)
class TransferHook:
    """Edit applied to the target latent after every step.

    kind:
        ``identity``: no transfer.
        ``latent_blend``: ``z_t[mask] <- lam * z_s[mask] + (1 - lam) * z_t[mask]``
        (mask ``None`` means every index).
        ``full_copy``: target replaced by the source latent.
    """

    kind: Literal["identity", "latent_blend", "full_copy"] = "identity"
    lam: float = 0.0
    mask: Optional[Sequence[int]] = None

    def __post_init__(self):
        if self.kind not in ("identity", "latent_blend", "full_copy"):
            raise ParameterError(f"unknown hook kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError("blend weight must lie in [0, 1]")
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple(int(i) for i in self.mask))

    def apply(self, z_source: np.ndarray, z_target: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return z_target
        if self.kind == "full_copy":
            return z_source.copy()
        d = z_target.shape[-1]
        idx = np.arange(d) if self.mask is None else np.asarray(self.mask, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= d):
            raise ParameterError(f"hook mask index out of range for dimension {d}")
        out = z_target.copy()
        out[..., idx] = self.lam * z_source[..., idx] + (1.0 - self.lam) * z_target[..., idx]
        return out


@dataclass
class EditResult:
    source: np.ndarray
    target: np.ndarray
    inversion: Trajectory
    source_trajectory: Trajectory
    target_trajectory: Trajectory


def edit(z_0_s: np.ndarray, C_s: Condition, C_t: Condition, cfg: GuidanceConfig, hook: TransferHook,
         predictor: NoisePredictor, schedule: NoiseSchedule,
         inversion_mode: Literal["standard", "exact"] = "standard",
         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> EditResult:
    """Invert the source once, then advance both branches in lockstep from the shared noise.

    The source branch is re-evaluated on its own generation trajectory; the
    stored inversion states are not reused.
    """
    z_0_s = np.asarray(z_0_s, dtype=np.float64)
    if not np.all(np.isfinite(z_0_s)):
        raise ParameterError("source latent must be finite")
    inversion = invert(z_0_s, predictor, schedule, cfg.inversion_scale, C_s, inversion_mode, tol, max_iter)
    eps_s = guidance(predictor, cfg.source_scale, C_s)
    eps_t = guidance(predictor, cfg.w_t, C_t)

    steps = list(reversed(schedule.inference_steps))
    z_s = z_t = inversion.end
    src, tgt = [z_s], [z_t]
    for t, t_prev in zip(steps, steps[1:]):
        z_s = generation_step(z_s, t, t_prev, eps_s, schedule)
        z_t = hook.apply(z_s, generation_step(z_t, t, t_prev, eps_t, schedule))
        src.append(z_s)
        tgt.append(z_t)
    return EditResult(z_s, z_t, inversion, Trajectory(steps, src, "generate"), Trajectory(steps, tgt, "generate"))


def reconstruction_error(result: EditResult, z_0_s: np.ndarray) -> float | np.ndarray:
    """Euclidean distance between the source latent and the source-branch output (per row if batched)."""
    z_0_s = np.asarray(z_0_s, dtype=np.float64)
    if z_0_s.shape != result.source.shape:
        raise ParameterError("source latent and reconstruction differ in shape")
    err = np.linalg.norm(z_0_s - result.source, axis=-1)
    return float(err) if err.ndim == 0 else err
