"""Annealed sampling of the high-probability non-implausible region.

Sequential tempering from the uniform law on a box towards densities
proportional to ``g(x)**beta``.  Each level picks the temperature increment
so that the effective sample size of the incremental weights is a fixed
fraction of the particles, resamples systematically, and then moves every
particle with a few random-walk Metropolis steps reflected at the box
faces.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import FlatObjectiveError, ObjectiveError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnealingConfig:
    n_per_level: int = 1000
    max_levels: int = 20
    ess_fraction: float = 0.5
    move_steps: int = 5
    beta_max: float = 64.0
    spread_tol: float = 1e-3
    spread_quantiles: Tuple[float, float] = (5.0, 95.0)
    proposal_scale: float = 0.5
    target_acceptance: float = 0.3
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n_per_level < 10:
            raise ValueError("n_per_level must be >= 10")
        if not 0 < self.ess_fraction < 1:
            raise ValueError("ess_fraction must lie in (0, 1)")
        if self.max_levels < 1 or self.move_steps < 0:
            raise ValueError("max_levels >= 1 and move_steps >= 0 required")
        if not self.beta_max > 0:
            raise ValueError("beta_max must be positive")
        lo, hi = self.spread_quantiles
        if not 0 <= lo < hi <= 100:
            raise ValueError("spread_quantiles must satisfy 0 <= lo < hi <= 100")


@dataclass
class NROYLevels:
    """Sample sets of every annealing level, level 0 being uniform on the box."""

    samples: List[np.ndarray]
    values: List[np.ndarray]
    betas: np.ndarray
    box: np.ndarray
    acceptance: List[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]

    @property
    def final_values(self) -> np.ndarray:
        return self.values[-1]

    def __len__(self):
        return len(self.samples)

    def to_csv(self, path) -> None:
        d = self.box.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level"] + [f"x{j + 1}" for j in range(d)] + ["g"])
            for level, (X, g) in enumerate(zip(self.samples, self.values)):
                for row, value in zip(X, g):
                    writer.writerow([level] + [repr(float(v)) for v in row] + [repr(float(value))])


def _as_box(box) -> np.ndarray:
    b = np.asarray(box, dtype=float)
    if b.ndim != 2 or b.shape[0] != 2 or np.any(~(b[1] > b[0])):
        raise ValueError("box must be [[lower...], [upper...]] with upper > lower")
    return b


def reflect(x: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Fold points back into the box by mirror reflection at its faces."""
    lo, hi = box
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return np.clip(lo + y, lo, hi)


def _ess(logw: np.ndarray) -> float:
    finite = np.isfinite(logw)
    if not np.any(finite):
        return 0.0
    w = np.exp(logw - np.max(logw[finite]))
    return float(np.sum(w) ** 2 / np.sum(w * w))


def _next_increment(logg: np.ndarray, target_ess: float, max_step: float) -> float:
    """Largest temperature step whose incremental weights keep ESS >= target."""
    if _ess(max_step * logg) >= target_ess:
        return max_step
    lo, hi = -60.0, np.log(max_step)
    if _ess(np.exp(lo) * logg) < target_ess:
        return float(np.exp(lo))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _ess(np.exp(mid) * logg) >= target_ess:
            lo = mid
        else:
            hi = mid
    return float(np.exp(lo))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    cdf = np.cumsum(weights / np.sum(weights))
    cdf[-1] = 1.0
    u = (rng.uniform() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="right")


def _weighted_cov(X, w):
    w = w / np.sum(w)
    mu = w @ X
    D = X - mu
    return (D * w[:, None]).T @ D


def sample_nroy(objective: Callable, box, config: AnnealingConfig = AnnealingConfig(),
                log_objective: bool = False) -> NROYLevels:
    """Run the tempering ladder and return every level.

    Parameters
    ----------
    objective : callable
        Maps an ``(N, d)`` array of points to ``N`` values of ``g`` in
        ``[0, 1]``, or of ``log g`` when ``log_objective`` is true.
    box : array_like, shape (2, d)
        Lower and upper corners of the search box.
    config : AnnealingConfig
    log_objective : bool
        Work with ``log g`` directly.  Preferable when ``g`` underflows
        over most of the box.
    """
    box = _as_box(box)
    d = box.shape[1]
    width = box[1] - box[0]
    rng = np.random.default_rng(config.seed)
    N = config.n_per_level

    def evaluate(X):
        v = np.asarray(objective(X), dtype=float).reshape(-1)
        if v.shape[0] != X.shape[0]:
            raise ObjectiveError("objective returned the wrong number of values")
        if log_objective:
            if np.any(np.isnan(v)) or np.any(v > 1e-12) or np.any(v == np.inf):
                raise ObjectiveError("log objective must be finite or -inf and <= 0")
            return np.minimum(v, 0.0)
        if np.any(~np.isfinite(v)):
            raise ObjectiveError("objective returned non-finite values")
        if np.any((v < 0) | (v > 1)):
            raise ObjectiveError("objective values must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            return np.log(v)

    X = box[0] + width * rng.uniform(size=(N, d))
    logg = evaluate(X)
    if not np.any(np.isfinite(logg)):
        raise FlatObjectiveError("objective is zero at every initial sample")

    samples = [X.copy()]
    values = [np.exp(logg)]
    betas = [0.0]
    acceptance = []
    scale = config.proposal_scale
    reg = 1e-6 * np.diag(width**2)
    beta = 0.0

    for level in range(1, config.max_levels + 1):
        finite = np.isfinite(logg)
        target_ess = config.ess_fraction * np.count_nonzero(finite)
        step = _next_increment(np.where(finite, logg, -np.inf), target_ess, config.beta_max - beta)
        beta = min(beta + step, config.beta_max)
        if config.beta_max - beta < 1e-12 * config.beta_max:
            beta = config.beta_max

        with np.errstate(invalid="ignore"):
            logw = np.where(finite, step * logg, -np.inf)
        w = np.exp(logw - np.max(logw[finite]))
        cov = _weighted_cov(X, w)
        idx = systematic_resample(w, rng)
        X, logg = X[idx], logg[idx]

        accepted = 0
        for _ in range(config.move_steps):
            chol = np.linalg.cholesky(scale * cov + reg)
            prop = reflect(X + rng.standard_normal((N, d)) @ chol.T, box)
            logg_prop = evaluate(prop)
            with np.errstate(invalid="ignore"):
                log_ratio = beta * (logg_prop - logg)
            log_ratio = np.where(np.isneginf(logg) & np.isneginf(logg_prop), -np.inf, log_ratio)
            log_ratio = np.where(np.isneginf(logg) & np.isfinite(logg_prop), np.inf, log_ratio)
            accept = np.log(rng.uniform(size=N)) < log_ratio
            X = np.where(accept[:, None], prop, X)
            logg = np.where(accept, logg_prop, logg)
            rate = float(np.mean(accept))
            accepted += np.count_nonzero(accept)
            # multiplicative scale adaptation; persists across levels
            scale *= 2.0 ** ((rate - config.target_acceptance) / config.target_acceptance)
            scale = float(np.clip(scale, 1e-12, 10.0))

        acceptance.append(accepted / max(1, N * config.move_steps))
        samples.append(X.copy())
        g = np.exp(logg)
        values.append(g)
        betas.append(beta)
        log.debug("level %d beta=%.4g mean g=%.4g accept=%.3f", level, beta, g.mean(),
                  acceptance[-1])

        # degenerate concentration: nearly the whole level shares one value. A
        # quartile spread would stop with up to a quarter of the particles still
        # stranded at low g; an all-underflow level is flat but not concentrated.
        lo, hi = np.percentile(g, config.spread_quantiles)
        if beta >= config.beta_max or (hi - lo < config.spread_tol and lo >= config.spread_tol):
            break

    return NROYLevels(samples, values, np.array(betas), box, acceptance)


def empty_nroy_check(levels: NROYLevels, floor: float = 0.5) -> bool:
    """True when no final-level sample reaches the objective ``floor``."""
    return bool(np.max(levels.final_values) < floor)
