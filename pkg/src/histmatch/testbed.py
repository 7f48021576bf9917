"""Reference simulators and tabulated run archives."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial import cKDTree

from .emulator import KernelSpec, factorize
from .errors import DomainError, ParseError

TORUS_BOX = np.array([[-20.0, -20.0, -20.0], [40.0, 40.0, 40.0]])
_TORUS_SIGMA = np.array([[1.0, -0.97], [-0.97, 1.0]]) / 2**12
_TORUS_PRECISION = np.linalg.inv(_TORUS_SIGMA)

FRANKE_TARGET = 0.6


def _check_box(X, lo, hi, name):
    if np.any(~np.isfinite(X)) or np.any((X < lo) | (X > hi)):
        raise DomainError(f"{name} is defined on [{lo}, {hi}]^d only")


def franke(x):
    """Franke's bivariate test function on the unit square.

    Accepts a single point or an ``(N, 2)`` array.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != 2:
        raise DomainError("franke takes 2-d points")
    _check_box(X, 0.0, 1.0, "franke")
    a = 9.0 * X[:, 0]
    b = 9.0 * X[:, 1]
    out = (
        0.75 * np.exp(-((a - 2) ** 2) / 4 - (b - 2) ** 2 / 4)
        + 0.75 * np.exp(-((a + 1) ** 2) / 49 - (b + 1) / 10)
        + 0.5 * np.exp(-((a - 7) ** 2) / 4 - (b - 3) ** 2 / 4)
        - 0.2 * np.exp(-((a - 4) ** 2) - (b - 7) ** 2)
    )
    return float(out[0]) if single else out


def torus_implausibility(x):
    """Four-mode torus implausibility on ``[-20, 40]^3``."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != 3:
        raise DomainError("torus takes 3-d points")
    _check_box(X, -20.0, 40.0, "torus")
    u = np.stack([(X[:, 0] - 2) ** 2 - 3, (X[:, 1] - 2) ** 2 - 3], axis=1)
    quad = np.einsum("ni,ij,nj->n", u, _TORUS_PRECISION, u)
    out = (np.sqrt(np.maximum(quad, 0.0)) + X[:, 2] ** 2 / 0.04**2) / 10.0
    return float(out[0]) if single else out


@dataclass(frozen=True)
class RandomFunctionSpec:
    dim: int
    seed: Optional[int] = None
    n_seeds: Optional[int] = None
    lengthscale_box: tuple = (0.0, 2.0)
    signal_sd: float = 10.0
    target_quantile: float = 0.95

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n_seeds is not None and self.n_seeds < self.dim + 1:
            raise ValueError("n_seeds must be >= dim + 1")
        if not self.signal_sd > 0:
            raise ValueError("signal_sd must be positive")

    @property
    def n(self) -> int:
        return self.n_seeds if self.n_seeds is not None else 100 * self.dim


class RandomFunction:
    """Posterior-mean interpolant of a GP prior draw on random seed points.

    ``values`` are the function values at ``seeds``; the evaluator
    reproduces them up to round-off.
    """

    def __init__(self, seeds, kernel: KernelSpec, weights, values):
        self.seeds = seeds
        self.kernel = kernel
        self.weights = weights
        self.values = values

    @property
    def dim(self) -> int:
        return self.seeds.shape[1]

    def __call__(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        _check_box(X, 0.0, 1.0, "random function")
        out = self.kernel(X, self.seeds) @ self.weights
        return float(out[0]) if single else out

    def dump_csv(self, path, X=None) -> None:
        """Write ``x1..xd,y`` rows, at the seeds unless ``X`` is given."""
        X = self.seeds if X is None else np.atleast_2d(X)
        y = self.values if X is self.seeds else self(X)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["y"])
            for row, value in zip(X, y):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(value))])


def make_random_function(spec: RandomFunctionSpec):
    """Build a random test function and its target level.

    Returns ``(evaluator, target_z)`` with ``target_z`` the empirical
    ``target_quantile`` of the seed values (linear interpolation).
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    X = rng.uniform(size=(spec.n, d))
    lo, hi = spec.lengthscale_box
    ls = rng.uniform(lo, hi, size=d)
    ls = np.maximum(ls, 1e-6 * (hi - lo))  # a zero lengthscale is not a kernel
    kernel = KernelSpec("matern-5/2", ls, spec.signal_sd**2, 0.0)
    K = kernel(X, X)
    L, _ = factorize(K, kernel.signal_variance)
    f = L @ rng.standard_normal(spec.n)
    weights = cho_solve((L, True), f)
    # values the interpolant actually takes at the seeds (differs from f by
    # the jitter correction only)
    values = K @ weights
    fn = RandomFunction(X, kernel, weights, values)
    return fn, float(np.quantile(values, spec.target_quantile))


@dataclass(frozen=True)
class TabulatedSimulator:
    """Archive of precomputed runs answered by nearest or exact lookup."""

    inputs: np.ndarray
    outputs: np.ndarray
    input_names: tuple
    output_names: tuple
    input_box: np.ndarray
    interpolation: str = "nearest"

    def __post_init__(self):
        if self.interpolation not in ("nearest", "exact"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.inputs.shape[0] < 1:
            raise ValueError("empty archive")
        width = self.input_box[1] - self.input_box[0]
        width = np.where(width > 0, width, 1.0)
        object.__setattr__(self, "_width", width)
        object.__setattr__(self, "_tree", cKDTree((self.inputs - self.input_box[0]) / width))

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]

    def __call__(self, x):
        return eval_tabulated(self, x)


def load_tabulated(path, interpolation: str = "nearest", input_box=None) -> TabulatedSimulator:
    """Read an archive CSV: header ``x1..xd`` then output columns.

    The input box defaults to the per-column range of the stored inputs.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if len(rows) < 2:
        raise ParseError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    d = 0
    while d < len(header) and header[d] == f"x{d + 1}":
        d += 1
    q = len(header) - d
    if d < 1 or q < 1:
        raise ParseError(f"{path}: header must be x1..xd followed by output columns")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != d + q:
        raise ParseError(f"{path}: inconsistent row lengths")
    if np.any(~np.isfinite(data)):
        raise ParseError(f"{path}: non-finite values")
    X, Y = data[:, :d], data[:, d:]
    box = np.vstack([X.min(axis=0), X.max(axis=0)]) if input_box is None else np.asarray(
        input_box, dtype=float)
    return TabulatedSimulator(X, Y, tuple(header[:d]), tuple(header[d:]), box, interpolation)


def eval_tabulated(sim: TabulatedSimulator, x) -> np.ndarray:
    """Output vector(s) of the archived run(s) matching ``x``."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != sim.dim:
        raise DomainError(f"expected {sim.dim}-d points")
    tol = 1e-9 * np.maximum(1.0, np.abs(sim.input_box).max(axis=0))
    _check_box_vec(X, sim.input_box[0] - tol, sim.input_box[1] + tol)
    dist, idx = sim._tree.query((X - sim.input_box[0]) / sim._width)
    if sim.interpolation == "exact":
        miss = np.any(np.abs(sim.inputs[idx] - X) > 1e-12, axis=1)
        if np.any(miss):
            raise LookupError(f"no archived run at {X[np.argmax(miss)]}")
    out = sim.outputs[idx]
    return out[0] if single else out


def _check_box_vec(X, lo, hi):
    if np.any(~np.isfinite(X)) or np.any((X < lo) | (X > hi)):
        raise DomainError("query outside the archive input box")
