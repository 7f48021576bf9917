import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from histmatch.emulator import KernelSpec, PredictiveMixture, TrainingSet, build_ensemble
from histmatch.implausibility import TargetDatum
from histmatch.scoring import crps_gaussian_helper, crps_mixture, crps_sample, wave_metrics


def crps_integral(cdf, z, lo, hi):
    """Integral definition of CRPS, split at the observation."""
    a, _ = integrate.quad(lambda t: cdf(t) ** 2, lo, z, epsabs=1e-13, limit=400)
    b, _ = integrate.quad(lambda t: (cdf(t) - 1.0) ** 2, z, hi, epsabs=1e-13, limit=400)
    return a + b


def test_helper_values():
    assert crps_gaussian_helper(0.0, 1.0) == pytest.approx(2 * norm.pdf(0), abs=1e-15)
    assert crps_gaussian_helper(0.0, 1.0) == pytest.approx(0.797885, abs=1e-6)
    assert crps_gaussian_helper(2.0, 0.0) == 2.0
    assert crps_gaussian_helper(-2.0, 0.0) == 2.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(0.0, 30), st.floats(0.0, 10))
def test_helper_even_and_monotone_in_sigma(m, var, dvar):
    a = crps_gaussian_helper(m, var)
    assert abs(a - crps_gaussian_helper(-m, var)) <= 1e-14 * max(1.0, abs(a))
    assert crps_gaussian_helper(m, var + dvar) >= a - 1e-12


def test_single_gaussian_reference():
    mix = PredictiveMixture([1.0], [0.0], [1.0])
    want = crps_integral(norm.cdf, 0.0, -40, 40)
    assert crps_mixture(mix, 0.0) == pytest.approx(want, abs=1e-9)
    assert crps_mixture(mix, 0.0) == pytest.approx(2 * norm.pdf(0) - 1 / math.sqrt(math.pi),
                                                   abs=1e-12)
    assert crps_mixture(mix, 0.0) == pytest.approx(0.233694, abs=1e-6)


def test_point_forecast_and_vanishing_limit():
    assert crps_mixture(PredictiveMixture([1.0], [1.5], [0.0]), -0.5) == pytest.approx(2.0)
    assert crps_mixture(PredictiveMixture([1.0], [0.3], [1e-16]), 0.3) < 1e-7


def test_single_component_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, z = rng.normal(size=2)
        s = rng.uniform(0.1, 3)
        t = (z - m) / s
        closed = s * (t * (2 * norm.cdf(t) - 1) + 2 * norm.pdf(t) - 1 / math.sqrt(math.pi))
        assert crps_mixture(PredictiveMixture([1.0], [m], [s * s]), z) == pytest.approx(
            closed, abs=1e-12)


def test_mixture_matches_integral_definition():
    mix = PredictiveMixture([0.2, 0.5, 0.3], [-1.0, 0.4, 2.0], [0.3, 1.0, 0.05])

    def cdf(t):
        return float(np.sum(mix.weights * norm.cdf(t, mix.means, mix.sds)))

    for z in (-2.0, 0.1, 1.9):
        assert crps_mixture(mix, z) == pytest.approx(crps_integral(cdf, z, -30, 30), abs=1e-8)


def test_mixture_matches_sample_estimator():
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(5))
    mix = PredictiveMixture(w / w.sum(), rng.normal(size=5), rng.uniform(0.1, 2, size=5))
    z = 0.4
    n_batches, n = 40, 25_000
    est = []
    for _ in range(n_batches):
        comp = rng.choice(5, size=n, p=mix.weights)
        est.append(crps_sample(mix.means[comp] + mix.sds[comp] * rng.standard_normal(n), z))
    est = np.array(est)
    se = est.std(ddof=1) / math.sqrt(n_batches)
    assert abs(est.mean() - crps_mixture(mix, z)) <= 3 * se


def test_batched_mixture_crps():
    mix = PredictiveMixture([0.5, 0.5], np.array([[0.0, 1.0], [0.5, 2.0]]),
                            np.array([[1.0, 0.2], [0.5, 0.3]]))
    batch = crps_mixture(mix, 0.3)
    for j in range(2):
        assert batch[j] == pytest.approx(crps_mixture(mix.at(j), 0.3), abs=1e-14)


def test_wave_metrics_scan_oracle():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(15, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    thetas = [KernelSpec("squared-exponential", [0.3, 0.5], 1.0),
              KernelSpec("squared-exponential", [0.5, 0.2], 2.0)]
    ens = build_ensemble(TrainingSet(X, y), thetas)
    S = rng.uniform(size=(100, 2))
    (m,) = wave_metrics([ens], S, [TargetDatum(0.7, "out")])
    sds, crps = [], []
    for x in S:
        mix = ens.predict(x)
        mean = float(np.sum(mix.weights * mix.means))
        var = float(np.sum(mix.weights * ((mix.means - mean) ** 2 + mix.variances)))
        sds.append(math.sqrt(var))
        crps.append(crps_mixture(mix, 0.7))
    assert m.output_id == "out"
    assert m.max_predicted_error == pytest.approx(max(sds), rel=1e-12)
    assert m.median_crps == pytest.approx(float(np.median(crps)), rel=1e-12)
    (one,) = wave_metrics([ens], S[:1], [TargetDatum(0.7)])
    assert one.max_predicted_error == pytest.approx(sds[0], rel=1e-12)
    assert one.median_crps == pytest.approx(crps[0], rel=1e-12)


def test_wave_metrics_at_training_inputs():
    X = np.linspace(0, 1, 8)[:, None]
    ens = build_ensemble(TrainingSet(X, np.cos(4 * X[:, 0])),
                         [KernelSpec("squared-exponential", [0.3], 1.0, 0.0)])
    (m,) = wave_metrics([ens], X, [TargetDatum(0.0)])
    assert m.max_predicted_error <= 1e-4
    with pytest.raises(ValueError):
        wave_metrics([ens], np.empty((0, 1)), [TargetDatum(0.0)])
