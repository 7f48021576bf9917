"""One-step learning criteria for choosing new simulator runs.

All three closed forms are written for a single Gaussian predictive
``N(m, sigma^2)``; mixtures are reduced either to their first two moments
(default) or scored per component and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .emulator import PredictiveMixture, mixture_moments
from .errors import DegenerateVarianceError
from .implausibility import UncertaintyBudget

CRITERIA = ("eci", "risk", "entropy", "lhs")
NEGATIVE_TOL = 1e-9
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CriterionInput:
    mean: float
    sigma: float
    budget: UncertaintyBudget
    z: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class CriterionScore:
    value: float
    criterion_id: str


def _pdf(t):
    return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _band_mass(z1, z2):
    # Phi(z2) - Phi(z1), using upper tails when both bounds are positive
    return np.where(z1 > 0, ndtr(-z1) - ndtr(-z2), ndtr(z2) - ndtr(z1))


def _xpdf(t):
    # t * phi(t) with the infinite limits mapped to 0
    with np.errstate(invalid="ignore"):
        out = t * _pdf(t)
    return np.where(np.isfinite(t), out, 0.0)


def _check_negative(values, name):
    if np.any(values < -NEGATIVE_TOL):
        raise ArithmeticError(f"{name} evaluated to {np.min(values):g} < 0")
    return np.maximum(values, 0.0)


def eci_values(mean, sigma, budget: UncertaintyBudget, z, eps_mode: str = "full"):
    """Expected contour improvement, vectorized over ``mean``/``sigma``.

    ``eps_mode="full"`` uses ``eps = k*sqrt(sigma^2 + var_md + var_me)``;
    ``"gp"`` uses ``eps = k*sigma``.
    """
    m, s = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sigma, float))
    if eps_mode == "full":
        eps = budget.k * np.sqrt(s * s + budget.extra_variance)
    elif eps_mode == "gp":
        eps = budget.k * s
    else:
        raise ValueError(f"unknown eps_mode {eps_mode!r}")
    if eps_mode == "full" and np.any((s == 0) & (eps == 0)):
        raise DegenerateVarianceError("ECI with zero emulator and budget variance")
    d = m - z
    with np.errstate(divide="ignore", invalid="ignore"):
        z1 = (z - m - eps) / s
        z2 = (z - m + eps) / s
        val = (
            (eps**2 - d**2 - s**2) * _band_mass(z1, z2)
            + s**2 * (_xpdf(z2) - _xpdf(z1))
            + 2.0 * d * s * (_pdf(z2) - _pdf(z1))
        )
    deterministic = eps**2 - np.minimum(d**2, eps**2)
    val = np.where(s == 0, deterministic, val)
    return _check_negative(val, "ECI")


def risk_values(mean, sigma, z):
    """Expected one-sided risk around the contour ``z`` (sign(0) = +1)."""
    m, s = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sigma, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        zbar = (z - m) / s
        sgn = np.where(zbar >= 0, 1.0, -1.0)
        a = -sgn * zbar
        val = s * (a * ndtr(a) + _pdf(zbar))
    val = np.where(s == 0, 0.0, val)
    return _check_negative(val, "expected risk")


def entropy_values(mean, sigma, budget: UncertaintyBudget, z):
    """Entropic profile of ``N(m, sigma^2)`` over ``[z - k sigma, z + k sigma]``."""
    m, s = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sigma, float))
    if np.any(s <= 0):
        raise DegenerateVarianceError("entropic profile needs sigma > 0")
    k = budget.k
    z1 = (z - m - k * s) / s
    z2 = (z - m + k * s) / s
    val = (np.log(s) + _LOG_SQRT_2PI + 0.5) * _band_mass(z1, z2) - 0.5 * (_xpdf(z2) - _xpdf(z1))
    return np.abs(val)


def _scalar(values, criterion_id):
    return CriterionScore(float(values), criterion_id)


def eci(c: CriterionInput, eps_mode: str = "full") -> CriterionScore:
    return _scalar(eci_values(c.mean, c.sigma, c.budget, c.z, eps_mode), "eci")


def expected_risk(c: CriterionInput) -> CriterionScore:
    return _scalar(risk_values(c.mean, c.sigma, c.z), "risk")


def entropic_profile(c: CriterionInput) -> CriterionScore:
    return _scalar(entropy_values(c.mean, c.sigma, c.budget, c.z), "entropy")


def lhs(c: CriterionInput) -> CriterionScore:
    return CriterionScore(1.0, "lhs")


def criterion_values(criterion_id: str, mean, sigma, budget: UncertaintyBudget, z,
                     eps_mode: str = "full"):
    """Vectorized dispatch used for ranking.

    For the entropic profile, points with ``sigma == 0`` score 0: a
    deterministic prediction has nothing left to learn.
    """
    mean = np.asarray(mean, float)
    sigma = np.asarray(sigma, float)
    if criterion_id == "eci":
        return eci_values(mean, sigma, budget, z, eps_mode)
    if criterion_id == "risk":
        return risk_values(mean, sigma, z)
    if criterion_id == "entropy":
        out = np.zeros(np.broadcast(mean, sigma).shape)
        pos = np.broadcast_to(sigma > 0, out.shape)
        if np.any(pos):
            mm, ss = np.broadcast_arrays(mean, sigma)
            out[pos] = entropy_values(mm[pos], ss[pos], budget, z)
        return out
    if criterion_id == "lhs":
        return np.ones(np.broadcast(mean, sigma).shape)
    raise ValueError(f"unknown criterion {criterion_id!r}; expected one of {CRITERIA}")


def score_mixture(criterion_id: str, mix: PredictiveMixture, budget: UncertaintyBudget, z,
                  mode: str = "moments", eps_mode: str = "full"):
    """Criterion value of a (possibly batched) predictive mixture.

    ``mode="moments"`` scores the moment-matched Gaussian; ``"components"``
    averages per-component scores with the mixture weights.
    """
    if mode == "moments":
        mean, var = mixture_moments(mix)
        return criterion_values(criterion_id, mean, np.sqrt(var), budget, z, eps_mode)
    if mode == "components":
        vals = criterion_values(criterion_id, mix.means, mix.sds, budget, z, eps_mode)
        w = mix.weights.reshape((-1,) + (1,) * (mix.means.ndim - 1))
        return np.sum(w * vals, axis=0)
    raise ValueError(f"unknown scoring mode {mode!r}")


def rank_order(points, scores) -> np.ndarray:
    """Indices sorting by descending score, ties by lexicographic point order."""
    X = np.atleast_2d(np.asarray(points, float))
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)] + [-np.asarray(scores, float)]
    return np.lexsort(keys)


def rank_samples(criterion_id: str, points, mix: PredictiveMixture, budget: UncertaintyBudget,
                 z, mode: str = "moments", eps_mode: str = "full"):
    """Score every sample and return ``(point, CriterionScore)`` pairs, best first.

    ``mix`` is the batched mixture for ``points`` (one column per point).
    """
    if criterion_id not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion_id!r}; expected one of {CRITERIA}")
    X = np.atleast_2d(np.asarray(points, float))
    if X.shape[0] == 0:
        raise ValueError("nothing to rank")
    scores = np.atleast_1d(score_mixture(criterion_id, mix, budget, z, mode, eps_mode))
    order = rank_order(X, scores)
    return [(X[i], CriterionScore(float(scores[i]), criterion_id)) for i in order]
