"""Deterministic and probabilistic implausibility measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .emulator import PredictiveMixture
from .errors import ArityError, DegenerateVarianceError


@dataclass(frozen=True)
class UncertaintyBudget:
    """Model discrepancy and measurement error variances plus cutoff ``k``."""

    var_md: float = 0.0
    var_me: float = 0.0
    k: float = 3.0

    def __post_init__(self):
        if not (self.var_md >= 0 and self.var_me >= 0):
            raise ValueError("budget variances must be nonnegative")
        if not self.k > 0:
            raise ValueError("threshold k must be positive")

    @property
    def extra_variance(self) -> float:
        return self.var_md + self.var_me


@dataclass(frozen=True)
class TargetDatum:
    z: float
    output_id: str = "y"

    def __post_init__(self):
        if not math.isfinite(self.z):
            raise ValueError("target z must be finite")


def _z(target) -> float:
    return target.z if isinstance(target, TargetDatum) else float(target)


def implausibility_pointwise(mean, variance, budget: UncertaintyBudget, target):
    """``|z - m| / sqrt(var + var_md + var_me)``; broadcasts over arrays."""
    total = np.asarray(variance, dtype=float) + budget.extra_variance
    if np.any(total <= 0):
        raise DegenerateVarianceError("zero total variance in implausibility")
    out = np.abs(_z(target) - np.asarray(mean, dtype=float)) / np.sqrt(total)
    return float(out) if np.ndim(out) == 0 else out


def _component_terms(mix: PredictiveMixture, budget: UncertaintyBudget, z: float):
    sd = mix.sds
    half = budget.k * np.sqrt(mix.variances + budget.extra_variance)
    if np.any((sd == 0) & (half == 0)):
        raise DegenerateVarianceError("deterministic component with zero budget")
    return sd, half, z - mix.means


def _log_interval_mass(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a <= b``, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    # reflect so the interval sits in the lower tail where log_ndtr is accurate
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = log_ndtr(hi)
    llo = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lhi + np.log1p(-np.exp(llo - lhi))
    return np.where(hi <= lo, -np.inf, out)


def log_prob_nonimplausible(mix: PredictiveMixture, budget: UncertaintyBudget, target):
    """Natural log of :func:`prob_nonimplausible`, finite far into the tails."""
    z = _z(target)
    sd, half, resid = _component_terms(mix, budget, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        logc = _log_interval_mass((resid - half) / sd, (resid + half) / sd)
    deterministic = sd == 0
    if np.any(deterministic):
        inside = np.abs(resid) <= half
        logc = np.where(deterministic, np.where(inside, 0.0, -np.inf), logc)
    logw = np.log(mix.weights).reshape((-1,) + (1,) * (mix.means.ndim - 1))
    out = logsumexp(logc + logw, axis=0)
    out = np.minimum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def prob_nonimplausible(mix: PredictiveMixture, budget: UncertaintyBudget, target):
    """Probability that the emulated implausibility stays within ``k``.

    Each mixture component is treated as its own Gaussian emulator with
    standardizer ``v_i = sqrt(sigma_i^2 + var_md + var_me)``; the mixture
    probability is the weighted sum over components.
    """
    z = _z(target)
    sd, half, resid = _component_terms(mix, budget, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = (resid + half) / sd
        lower = (resid - half) / sd
        # difference of upper tails is more accurate when both bounds are large
        comp = np.where(lower > 0, ndtr(-lower) - ndtr(-upper), ndtr(upper) - ndtr(lower))
    deterministic = sd == 0
    if np.any(deterministic):
        comp = np.where(deterministic, (np.abs(resid) <= half).astype(float), comp)
    w = mix.weights.reshape((-1,) + (1,) * (mix.means.ndim - 1))
    out = np.clip(np.sum(w * comp, axis=0), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def second_max_implausibility(values, axis: int = 0):
    """Second-largest implausibility across outputs (along ``axis``)."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 0 or v.shape[axis] < 2:
        raise ArityError("second maximum needs at least two outputs")
    n = v.shape[axis]
    out = np.partition(v, n - 2, axis=axis).take(n - 2, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


class SecondMaxSampler:
    """Monte Carlo estimator of ``P{I^(2)(x) <= k}`` with common random numbers.

    The standard normal and component-selection draws are fixed at
    construction, so the estimate is a deterministic function of the
    mixtures passed in.  Outputs are independent.
    """

    def __init__(self, n_outputs: int, n_draws: int = 2048, seed=None):
        if n_outputs < 2:
            raise ArityError("second maximum needs at least two outputs")
        if n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        rng = np.random.default_rng(seed)
        self.n_draws = n_draws
        self.normals = rng.standard_normal((n_outputs, n_draws))
        self.uniforms = rng.uniform(size=(n_outputs, n_draws))

    def _component_index(self, j: int, weights: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(weights)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, self.uniforms[j], side="right")

    def implausibility_draws(self, mixes, budgets, targets) -> np.ndarray:
        """Per-output implausibility draws, shape ``(q, n_draws)`` or ``(q, M, n_draws)``."""
        out = []
        for j, (mix, budget, target) in enumerate(zip(mixes, budgets, targets)):
            _component_terms(mix, budget, _z(target))
            idx = self._component_index(j, mix.weights)
            m = mix.means[idx]
            s = mix.sds[idx]
            v = np.sqrt(mix.variances[idx] + budget.extra_variance)
            if m.ndim == 2:  # (n_draws, M) -> (M, n_draws)
                m, s, v = m.T, s.T, v.T
            f = m + s * self.normals[j]
            out.append(np.abs(_z(target) - f) / v)
        return np.stack(out)

    def __call__(self, mixes, budgets, targets):
        draws = self.implausibility_draws(mixes, budgets, targets)
        # per-output k rescaling; with a common k this is exactly I^(2) <= k
        k = np.array([b.k for b in budgets]).reshape((-1,) + (1,) * (draws.ndim - 1))
        second = second_max_implausibility(draws / k, axis=0)
        out = np.mean(second <= 1.0, axis=-1)
        return float(out) if np.ndim(out) == 0 else out


def prob_second_max_nonimplausible(mixes, budgets, targets, n_draws: int = 2048, seed=None):
    """Monte Carlo ``P{I^(2)(x) <= k}`` under independent per-output emulators."""
    mixes = list(mixes)
    if len(mixes) < 2:
        raise ArityError("second maximum needs at least two outputs")
    sampler = SecondMaxSampler(len(mixes), n_draws, seed)
    return sampler(mixes, budgets, targets)


def prob_second_max_exact(mixes, budgets, targets):
    """Closed form of the same probability: at most one output is implausible."""
    p = np.stack([prob_nonimplausible(m, b, t) for m, b, t in zip(mixes, budgets, targets)])
    if p.shape[0] < 2:
        raise ArityError("second maximum needs at least two outputs")
    all_in = np.prod(p, axis=0)
    one_out = np.zeros_like(all_in)
    for j in range(p.shape[0]):
        one_out = one_out + (1.0 - p[j]) * np.prod(np.delete(p, j, axis=0), axis=0)
    out = np.clip(all_in + one_out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out
