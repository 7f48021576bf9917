"""Wave diagnostics: CRPS of Gaussian mixtures and maximum predicted error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .emulator import PosteriorEnsemble, PredictiveMixture, mixture_moments
from .implausibility import TargetDatum


def crps_gaussian_helper(m, var):
    """``A(m, s^2) = 2 s phi(m/s) + m (2 Phi(m/s) - 1)``; equals ``|m|`` at ``s = 0``."""
    m = np.asarray(m, dtype=float)
    var = np.asarray(var, dtype=float)
    s = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = m / s
        val = 2.0 * s * np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi) + m * (2.0 * ndtr(t) - 1.0)
    val = np.where(s == 0, np.abs(m), val)
    return float(val) if val.ndim == 0 else val


def crps_mixture(mix: PredictiveMixture, z):
    """Closed-form CRPS of a Gaussian mixture at observation ``z``.

    Works on batched mixtures too, returning one score per point.
    """
    w = mix.weights
    m = mix.means
    v = mix.variances
    if m.ndim == 1:
        m = m[:, None]
        v = v[:, None]
    first = np.einsum("k,km->m", w, crps_gaussian_helper(z - m, v))
    pair = crps_gaussian_helper(m[:, None, :] - m[None, :, :], v[:, None, :] + v[None, :, :])
    second = np.einsum("k,l,klm->m", w, w, pair)
    out = np.maximum(first - 0.5 * second, 0.0)
    return float(out[0]) if mix.means.ndim == 1 else out


def crps_sample(draws, z) -> float:
    """Sample CRPS estimator ``E|X - z| - E|X - X'|/2`` from i.i.d. draws."""
    x = np.sort(np.asarray(draws, dtype=float))
    n = x.size
    # E|X - X'| over distinct pairs via the sorted-order identity
    i = np.arange(1, n + 1)
    mean_abs_pair = 2.0 * np.sum((2 * i - n - 1) * x) / (n * (n - 1))
    return float(np.mean(np.abs(x - z)) - 0.5 * mean_abs_pair)


@dataclass(frozen=True)
class WaveMetrics:
    output_id: str
    max_predicted_error: float
    median_crps: float


def wave_metrics(ensembles: Sequence[PosteriorEnsemble], nroy_samples, targets) -> list:
    """Maximum mixture predictive sd and median CRPS over NROY samples, per output."""
    X = np.atleast_2d(np.asarray(nroy_samples, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("wave metrics need at least one NROY sample")
    out = []
    for ens, target in zip(ensembles, targets):
        mix = ens.predict_many(X)
        _, var = mixture_moments(mix)
        crps = crps_mixture(mix, target.z)
        out.append(
            WaveMetrics(
                target.output_id if isinstance(target, TargetDatum) else "y",
                float(np.sqrt(np.max(var))),
                float(np.median(crps)),
            )
        )
    return out
