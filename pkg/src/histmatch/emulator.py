"""Fully Bayesian Gaussian-process emulator.

Hyperparameters are sampled from their posterior with an adaptive
random-walk Metropolis chain; predictions are equally weighted Gaussian
mixtures, one component per posterior draw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import FactorizationError, InitializationError, ParseError

KERNEL_FAMILIES = ("squared-exponential", "matern-5/2")

JITTER_START = 1e-10
JITTER_MAX = 1e-4
VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class TrainingSet:
    """Simulator runs on the normalized unit cube.

    Parameters
    ----------
    inputs : ndarray, shape (n, d)
        Points in ``[0, 1]^d``.
    outputs : ndarray, shape (n,)
        Simulator values at ``inputs``.
    """

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        if X.shape[0] < 1:
            raise ValueError("training set needs at least one run")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} input rows but {y.shape[0]} outputs")
        if np.any(~np.isfinite(X)) or np.any((X < 0.0) | (X > 1.0)):
            raise ValueError("training inputs must lie in the unit cube")
        if np.any(~np.isfinite(y)):
            raise ValueError("training outputs must be finite")
        if np.unique(X, axis=0).shape[0] != X.shape[0]:
            raise ValueError("duplicate input rows in training set")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def append(self, inputs, outputs) -> "TrainingSet":
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        return TrainingSet(
            np.vstack([self.inputs, X]),
            np.concatenate([self.outputs, np.asarray(outputs, dtype=float).reshape(-1)]),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.dim)] + ["y"])
            for row, value in zip(self.inputs, self.outputs):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(value))])

    @classmethod
    def from_csv(cls, path) -> "TrainingSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParseError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        d = len(header) - 1
        if d < 1 or header != [f"x{j + 1}" for j in range(d)] + ["y"]:
            raise ParseError(f"{path}: header must be x1..xd,y; got {header}")
        try:
            data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
        if data.ndim != 2 or data.shape[1] != d + 1:
            raise ParseError(f"{path}: ragged rows")
        return cls(data[:, :d], data[:, d])


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel with per-dimension lengthscales."""

    family: str
    lengthscales: np.ndarray
    signal_variance: float
    nugget: float = 0.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(~(ls > 0)):
            raise ValueError("lengthscales must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.nugget >= 0:
            raise ValueError("nugget must be nonnegative")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "nugget", float(self.nugget))

    def __call__(self, X1, X2) -> np.ndarray:
        """Cross-covariance matrix between the rows of ``X1`` and ``X2``."""
        A = np.atleast_2d(X1) / self.lengthscales
        B = np.atleast_2d(X2) / self.lengthscales
        sq = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * A @ B.T
        )
        np.maximum(sq, 0.0, out=sq)
        if self.family == "squared-exponential":
            return self.signal_variance * np.exp(-0.5 * sq)
        r = np.sqrt(5.0 * sq)
        return self.signal_variance * (1.0 + r + r * r / 3.0) * np.exp(-r)


def factorize(K: np.ndarray, signal_variance: float):
    """Cholesky factor of ``K`` with bounded diagonal jitter.

    Returns ``(L, jitter)`` where ``jitter`` is the amount added to the
    diagonal (0 when none was needed).
    """
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * signal_variance
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * signal_variance * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"covariance not positive definite after jitter {JITTER_MAX:g}*signal_variance"
    )


def log_marginal_likelihood(training: TrainingSet, theta: KernelSpec) -> float:
    """Log evidence ``log p(y | X, theta)`` of a zero-mean GP.

    Outputs are used as given; centering is the caller's business.
    """
    X, y = training.inputs, training.outputs
    K = theta(X, X) + theta.nugget * np.eye(training.n)
    L, _ = factorize(K, theta.signal_variance)
    alpha = cho_solve((L, True), y)
    return float(
        -0.5 * y @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * training.n * math.log(2.0 * math.pi)
    )


@dataclass(frozen=True)
class HyperPrior:
    """Independent log-normal hyperpriors and chain settings.

    ``signal_variance_median=None`` means "sample variance of the outputs".
    """

    family: str = "squared-exponential"
    lengthscale_median: float = 0.5
    lengthscale_logsd: float = 1.0
    signal_variance_median: Optional[float] = None
    signal_variance_logsd: float = 1.0
    nugget: float = 1e-8
    burn_in: int = 1000
    thin: int = 10


@dataclass(frozen=True)
class HyperSample:
    theta: KernelSpec
    weight: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0


@dataclass(frozen=True)
class PredictiveMixture:
    """Weighted Gaussian mixture, components along axis 0.

    ``means`` and ``variances`` have shape ``(S,)`` for a single point or
    ``(S, M)`` for ``M`` points sharing the same weights.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if w.size < 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if m.shape != v.shape or m.shape[0] != w.size:
            raise ValueError("means/variances must have one row per component")
        if np.any(v < 0):
            raise ValueError("component variances must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def __len__(self):
        return 1 if self.means.ndim == 1 else self.means.shape[1]

    def at(self, j: int) -> "PredictiveMixture":
        """Single-point mixture for column ``j`` of a batched mixture."""
        if self.means.ndim == 1:
            return self
        return PredictiveMixture(self.weights, self.means[:, j], self.variances[:, j])


def mixture_moments(mix: PredictiveMixture):
    """Mean and variance of a Gaussian mixture (law of total variance)."""
    w = mix.weights.reshape((-1,) + (1,) * (mix.means.ndim - 1))
    mean = np.sum(w * mix.means, axis=0)
    var = np.sum(w * ((mix.means - mean) ** 2 + mix.variances), axis=0)
    if np.any(var < -VARIANCE_TOL):
        raise ValueError(f"negative mixture variance {np.min(var):g}")
    var = np.maximum(var, 0.0)
    if mix.means.ndim == 1:
        return float(mean), float(var)
    return mean, var


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Posterior hyperparameter draws with cached factorizations.

    ``offset`` is the output mean removed before fitting.
    """

    samples: tuple
    training: TrainingSet
    offset: float = 0.0

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("ensemble needs at least one sample")
        total = math.fsum(s.weight for s in self.samples)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"ensemble weights sum to {total!r}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.samples])

    def predict_many(self, X) -> PredictiveMixture:
        """Mixture predictive at each row of ``X`` (components x points)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xtr = self.training.inputs
        means = np.empty((len(self.samples), X.shape[0]))
        variances = np.empty_like(means)
        for i, s in enumerate(self.samples):
            Ks = s.theta(Xtr, X)
            means[i] = Ks.T @ s.alpha + self.offset
            V = solve_triangular(s.chol, Ks, lower=True, check_finite=False)
            variances[i] = s.theta.signal_variance - np.sum(V * V, axis=0)
        np.maximum(variances, 0.0, out=variances)
        return PredictiveMixture(self.weights, means, variances)

    def predict(self, x) -> PredictiveMixture:
        return self.predict_many(np.atleast_2d(x)).at(0)


def build_ensemble(training: TrainingSet, thetas: Sequence[KernelSpec], weights=None,
                   center: bool = True) -> PosteriorEnsemble:
    """Condition one GP per hyperparameter vector on ``training``."""
    offset = float(np.mean(training.outputs)) if center else 0.0
    y = training.outputs - offset
    if weights is None:
        weights = np.full(len(thetas), 1.0 / len(thetas))
    samples = []
    for theta, w in zip(thetas, weights):
        K = theta(training.inputs, training.inputs) + theta.nugget * np.eye(training.n)
        L, jitter = factorize(K, theta.signal_variance)
        alpha = cho_solve((L, True), y)
        samples.append(HyperSample(theta, float(w), L, alpha, jitter))
    return PosteriorEnsemble(tuple(samples), training, offset)


def _output_variance(y: np.ndarray) -> float:
    v = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    return v if v > 0 else 1.0


def _log_posterior(params, training, prior, prior_loc, prior_scale):
    d = training.dim
    theta = KernelSpec(prior.family, np.exp(params[:d]), math.exp(params[d]), prior.nugget)
    try:
        ll = log_marginal_likelihood(training, theta)
    except FactorizationError:
        return -np.inf
    lp = -0.5 * np.sum(((params - prior_loc) / prior_scale) ** 2)
    return ll + lp


def sample_hyperposterior(training: TrainingSet, prior: Optional[HyperPrior] = None,
                          n_samples: int = 20, seed=None) -> PosteriorEnsemble:
    """Draw ``n_samples`` hyperparameter vectors from ``p(theta | D)``.

    Adaptive random-walk Metropolis on (log lengthscales, log signal
    variance).  The proposal covariance is adapted from the chain history
    during burn-in and frozen afterwards; the retained draws are every
    ``prior.thin``-th state after burn-in.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    prior = prior or HyperPrior()
    rng = np.random.default_rng(seed)
    d = training.dim
    offset = float(np.mean(training.outputs))
    centered = TrainingSet(training.inputs, training.outputs - offset)

    sv_median = prior.signal_variance_median or _output_variance(training.outputs)
    loc = np.concatenate([np.full(d, math.log(prior.lengthscale_median)), [math.log(sv_median)]])
    scale = np.concatenate([np.full(d, prior.lengthscale_logsd), [prior.signal_variance_logsd]])

    def logpost(p):
        return _log_posterior(p, centered, prior, loc, scale)

    # start from the best of the prior median and a few prior draws
    starts = np.vstack([loc, loc + scale * rng.standard_normal((16, d + 1))])
    start_lp = np.array([logpost(p) for p in starts])
    best = int(np.argmax(start_lp))
    if not np.isfinite(start_lp[best]):
        raise InitializationError("log-posterior is not finite at any starting point")
    current, current_lp = starts[best].copy(), start_lp[best]

    p_dim = d + 1
    prop_cov = np.diag((0.1 * scale) ** 2)
    adapt_scale = 2.38**2 / p_dim
    n_total = prior.burn_in + n_samples * prior.thin
    history = np.empty((prior.burn_in, p_dim))
    draws = []
    chol = np.linalg.cholesky(prop_cov)
    for it in range(n_total):
        if it < prior.burn_in and it >= 100 and it % 50 == 0:
            emp = np.cov(history[:it].T) + 1e-6 * np.eye(p_dim)
            chol = np.linalg.cholesky(adapt_scale * emp)
        proposal = current + chol @ rng.standard_normal(p_dim)
        lp = logpost(proposal)
        if np.log(rng.uniform()) < lp - current_lp:
            current, current_lp = proposal, lp
        if it < prior.burn_in:
            history[it] = current
        elif (it - prior.burn_in + 1) % prior.thin == 0:
            draws.append(current.copy())

    thetas = [
        KernelSpec(prior.family, np.exp(p[:d]), math.exp(p[d]), prior.nugget) for p in draws
    ]
    return build_ensemble(training, thetas)


def map_hyperparameters(training: TrainingSet, prior: Optional[HyperPrior] = None,
                        n_starts: int = 20, seed=None) -> np.ndarray:
    """Multi-start L-BFGS maximum a posteriori estimate in log space.

    Only used as a reference point for checking the sampler.
    """
    from scipy.optimize import minimize

    prior = prior or HyperPrior()
    rng = np.random.default_rng(seed)
    d = training.dim
    offset = float(np.mean(training.outputs))
    centered = TrainingSet(training.inputs, training.outputs - offset)
    sv_median = prior.signal_variance_median or _output_variance(training.outputs)
    loc = np.concatenate([np.full(d, math.log(prior.lengthscale_median)), [math.log(sv_median)]])
    scale = np.concatenate([np.full(d, prior.lengthscale_logsd), [prior.signal_variance_logsd]])

    def neg(p):
        v = _log_posterior(p, centered, prior, loc, scale)
        return -v if np.isfinite(v) else 1e300

    best = None
    for p0 in np.vstack([loc, loc + scale * rng.standard_normal((n_starts - 1, d + 1))]):
        res = minimize(neg, p0, method="L-BFGS-B")
        if best is None or res.fun < best.fun:
            best = res
    return best.x
