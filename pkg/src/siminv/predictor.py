"""Noise predictors: the closed-form mixture denoiser and guided combinations.

A predictor is any callable ``eps(z, t, cond) -> ndarray`` where ``z`` has
shape ``(d,)`` or ``(n, d)``, ``t`` indexes the schedule's alphas and
``cond`` is a :class:`Condition`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from siminv.errors import ParameterError
from siminv.schedule import NoiseSchedule


@dataclass(frozen=True)
class Condition:
    """A text condition over a subset of mixture components, or the null condition."""

    components: Optional[frozenset] = None

    def __post_init__(self):
        if self.components is not None:
            comps = frozenset(int(c) for c in self.components)
            if not comps or min(comps) < 0:
                raise ParameterError("text condition needs a nonempty set of non-negative component indices")
            object.__setattr__(self, "components", comps)

    @property
    def is_null(self) -> bool:
        return self.components is None

    def __str__(self):
        if self.is_null:
            return "null"
        return "text(" + ",".join(str(c) for c in sorted(self.components)) + ")"


NULL = Condition()


def text(*components: int) -> Condition:
    return Condition(frozenset(components))


class NoisePredictor(Protocol):
    def __call__(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture: weights (K,), means (K, d), variances (K,)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        means = np.atleast_2d(np.array(self.means, dtype=np.float64))
        variances = np.array(self.variances, dtype=np.float64).reshape(-1)
        if weights.ndim != 1 or means.shape[0] != weights.size or variances.size != weights.size:
            raise ParameterError("weights, means and variances must agree on the number of components")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ParameterError("weights must be non-negative and sum to 1")
        if np.any(variances <= 0) or not np.all(np.isfinite(means)):
            raise ParameterError("variances must be positive and means finite")
        for a in (weights, means, variances):
            a.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def restrict(self, cond: Condition) -> "GaussianMixture":
        """The conditional mixture: components in ``cond`` renormalised; null keeps everything."""
        if cond.is_null:
            return self
        idx = sorted(cond.components)
        if idx[-1] >= self.n_components:
            raise ParameterError(f"condition {cond} references a missing component")
        w = self.weights[idx]
        if w.sum() <= 0:
            raise ParameterError(f"condition {cond} selects only zero-weight components")
        return GaussianMixture(w / w.sum(), self.means[idx], self.variances[idx])

    def sample(self, rng: np.random.Generator, n: int, cond: Condition = NULL) -> np.ndarray:
        mix = self.restrict(cond)
        k = rng.choice(mix.n_components, size=n, p=mix.weights)
        noise = rng.standard_normal((n, mix.dim))
        return mix.means[k] + np.sqrt(mix.variances[k])[:, None] * noise

    def smoothed_log_density(self, z: np.ndarray, alpha: float) -> np.ndarray:
        """log p_t(z) for the noised marginal with means sqrt(alpha)*mu and variances alpha*s2 + 1 - alpha."""
        z = np.asarray(z, dtype=np.float64)
        v = alpha * self.variances + (1.0 - alpha)
        diff = z[..., None, :] - np.sqrt(alpha) * self.means
        sq = np.sum(diff * diff, axis=-1)
        d = self.dim
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        comp = logw - 0.5 * sq / v - 0.5 * d * np.log(2.0 * np.pi * v)
        return logsumexp(comp, axis=-1)


def random_mixture(rng: np.random.Generator, dim: int = 2, n_components: int = 2,
                   spread: float = 2.0, var_range: tuple[float, float] = (0.05, 0.5)) -> GaussianMixture:
    """Means ~ N(0, spread^2 I), variances uniform in ``var_range``, Dirichlet(2) weights."""
    return GaussianMixture(rng.dirichlet(np.full(n_components, 2.0)),
                           rng.normal(0.0, spread, (n_components, dim)),
                           rng.uniform(*var_range, n_components))


def analytic_eps(z: np.ndarray, t: int, cond: Condition, mixture: GaussianMixture,
                 schedule: NoiseSchedule) -> np.ndarray:
    """Optimal noise prediction ``-sqrt(1 - alpha_t) * grad log p_t(z | cond)``.

    Responsibilities are normalised in log space so distant components never
    underflow to a 0/0.
    """
    return _mixture_eps(z, *_smoothed_terms(mixture.restrict(cond), schedule.alpha(t)))


def _smoothed_terms(mix: GaussianMixture, alpha: float):
    v = alpha * mix.variances + (1.0 - alpha)
    with np.errstate(divide="ignore"):
        log_prior = np.log(mix.weights) - 0.5 * mix.dim * np.log(v)
    return math.sqrt(alpha) * mix.means, v, log_prior, -math.sqrt(1.0 - alpha)


def _mixture_eps(z, means, v, log_prior, eps_scale):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != means.shape[-1]:
        raise ParameterError(f"latent dimension {z.shape[-1]} does not match mixture dimension {means.shape[-1]}")
    diff = means - z[..., None, :]
    logr = log_prior - 0.5 * (diff * diff).sum(axis=-1) / v
    r = np.exp(logr - logr.max(axis=-1, keepdims=True))
    score = ((r / v)[..., None] * diff).sum(axis=-2) / r.sum(axis=-1)[..., None]
    return eps_scale * score


class AnalyticMixture:
    """Exact denoiser for data drawn from ``mixture`` under ``schedule``."""

    def __init__(self, mixture: GaussianMixture, schedule: NoiseSchedule):
        self.mixture = mixture
        self.schedule = schedule
        self._terms: dict[tuple[Condition, int], tuple] = {}
        self._lock = threading.Lock()

    def __call__(self, z, t, cond):
        terms = self._terms.get((cond, t))
        if terms is None:
            terms = _smoothed_terms(self.mixture.restrict(cond), self.schedule.alpha(t))
            with self._lock:
                self._terms[(cond, t)] = terms
        return _mixture_eps(z, *terms)


class MixtureBatch:
    """Row ``i`` of a latent batch ``(n, d)`` is denoised under ``mixtures[i]``.

    Lets independent instances advance through one vectorised trajectory.
    All mixtures must share K and d.
    """

    def __init__(self, mixtures: Sequence[GaussianMixture], schedule: NoiseSchedule):
        shapes = {m.means.shape for m in mixtures}
        if len(shapes) != 1:
            raise ParameterError("batched mixtures must share component count and dimension")
        self.mixtures = list(mixtures)
        self.schedule = schedule
        self._terms: dict[tuple[Condition, int], tuple] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.mixtures)

    def __call__(self, z, t, cond):
        terms = self._terms.get((cond, t))
        if terms is None:
            alpha = self.schedule.alpha(t)
            parts = [_smoothed_terms(m.restrict(cond), alpha) for m in self.mixtures]
            terms = (np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts]),
                     np.stack([p[2] for p in parts]), parts[0][3])
            with self._lock:
                self._terms[(cond, t)] = terms
        z = np.asarray(z, dtype=np.float64)
        if z.shape[:-1] != (len(self.mixtures),):
            raise ParameterError(f"expected a batch of {len(self.mixtures)} latents, got shape {z.shape}")
        return _mixture_eps(z, *terms)


def guided_eps(z: np.ndarray, t: int, w: float, cond: Condition, base: NoisePredictor) -> np.ndarray:
    """Classifier-free guidance ``w * eps(z, t, cond) + (1 - w) * eps(z, t, null)``.

    At w in {0, 1} only the surviving branch is evaluated; the result is
    bitwise identical to the two-call form.
    """
    if cond.is_null:
        raise ParameterError("guidance needs a text condition to mix against null")
    if w == 1:
        return base(z, t, cond)
    if w == 0:
        return base(z, t, NULL)
    return w * base(z, t, cond) + (1.0 - w) * base(z, t, NULL)


def guidance(base: NoisePredictor, w: float, cond: Condition) -> Callable[[np.ndarray, int], np.ndarray]:
    """Bind a scale and condition, giving ``eps(z, t)`` for the DDIM steps."""
    if cond.is_null:
        return lambda z, t: base(z, t, NULL)
    return lambda z, t: guided_eps(z, t, w, cond, base)


class CountingPredictor:
    """Wraps a predictor and counts evaluations (thread-safe)."""

    def __init__(self, base: NoisePredictor):
        self.base = base
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, z, t, cond):
        with self._lock:
            self.calls += 1
        return self.base(z, t, cond)

    def reset(self) -> None:
        with self._lock:
            self.calls = 0


class ConstantPredictor:
    """Returns a fixed vector per condition (``default`` for unlisted ones)."""

    def __init__(self, default, per_condition: Mapping[Condition, np.ndarray] | None = None):
        self.default = np.asarray(default, dtype=np.float64)
        self.per_condition = {k: np.asarray(v, dtype=np.float64) for k, v in (per_condition or {}).items()}

    def __call__(self, z, t, cond):
        c = self.per_condition.get(cond, self.default)
        return np.broadcast_to(c, np.shape(z)).copy()


class AffinePredictor:
    """``eps(z) = A z + b``, optionally with a separate (A, b) for the null condition."""

    def __init__(self, A, b, null_A=None, null_b=None):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.null_A = self.A if null_A is None else np.asarray(null_A, dtype=np.float64)
        self.null_b = self.b if null_b is None else np.asarray(null_b, dtype=np.float64)

    def __call__(self, z, t, cond):
        A, b = (self.null_A, self.null_b) if cond.is_null else (self.A, self.b)
        return np.asarray(z, dtype=np.float64) @ A.T + b
