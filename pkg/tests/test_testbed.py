import math

import numpy as np
import pytest
from scipy import ndimage

from histmatch.errors import DomainError, ParseError
from histmatch.testbed import (
    RandomFunctionSpec,
    eval_tabulated,
    franke,
    load_tabulated,
    make_random_function,
    torus_implausibility,
)


def franke_by_hand(x1, x2):
    a, b = 9 * x1, 9 * x2
    return (0.75 * math.exp(-(a - 2) ** 2 / 4 - (b - 2) ** 2 / 4)
            + 0.75 * math.exp(-(a + 1) ** 2 / 49 - (b + 1) / 10)
            + 0.5 * math.exp(-(a - 7) ** 2 / 4 - (b - 3) ** 2 / 4)
            - 0.2 * math.exp(-(a - 4) ** 2 - (b - 7) ** 2))


def test_franke_center_value():
    assert franke([0.5, 0.5]) == pytest.approx(franke_by_hand(0.5, 0.5), abs=1e-15)
    assert franke([0.5, 0.5]) == pytest.approx(0.3257625, abs=1e-6)


def test_franke_vectorized_and_deterministic():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(50, 2))
    np.testing.assert_allclose(franke(X), [franke_by_hand(*x) for x in X], atol=1e-15)
    assert franke(X[0]) == franke(X[0])
    with pytest.raises(DomainError):
        franke([1.1, 0.5])


def test_franke_target_has_two_components():
    g = (np.arange(512) + 0.5) / 512
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    above = (franke(X) >= 0.6).reshape(512, 512)
    _, n = ndimage.label(above)
    assert n == 2


def test_torus_roots():
    r = math.sqrt(3)
    for x in ([2 + r, 2 + r, 0], [2 - r, 2 + r, 0], [2 + r, 2 - r, 0], [2 - r, 2 - r, 0]):
        assert torus_implausibility(x) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(DomainError):
        torus_implausibility([50.0, 0.0, 0.0])


def test_torus_matches_explicit_inverse():
    a, b = 1.0 / 2**12, -0.97 / 2**12
    det = a * a - b * b
    inv = np.array([[a, -b], [-b, a]]) / det
    rng = np.random.default_rng(1)
    X = rng.uniform(-20, 40, size=(100, 3))
    for x in X:
        u = np.array([(x[0] - 2) ** 2 - 3, (x[1] - 2) ** 2 - 3])
        want = (math.sqrt(u @ inv @ u) + x[2] ** 2 / 0.04**2) / 10
        assert torus_implausibility(x) == pytest.approx(want, rel=1e-10)


def test_random_function_interpolates_seeds():
    fn, z = make_random_function(RandomFunctionSpec(dim=2, seed=3))
    assert fn.seeds.shape == (200, 2)
    np.testing.assert_allclose(fn(fn.seeds), fn.values, atol=1e-6)
    assert z == pytest.approx(np.quantile(fn.values, 0.95))


def test_random_function_deterministic(tmp_path):
    spec = RandomFunctionSpec(dim=3, seed=9, n_seeds=60)
    a, za = make_random_function(spec)
    b, zb = make_random_function(spec)
    probe = np.random.default_rng(0).uniform(size=(25, 3))
    np.testing.assert_array_equal(a(probe), b(probe))
    assert za == zb
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    a.dump_csv(p1)
    b.dump_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().splitlines()[0] == "x1,x2,x3,y"


def test_random_function_prior_scale():
    # pooled root mean square of the seed values about the zero prior mean
    sq = [np.mean(make_random_function(RandomFunctionSpec(dim=2, seed=s))[0].values ** 2)
          for s in range(20)]
    rms = math.sqrt(np.mean(sq))
    assert 0.7 * 10 <= rms <= 1.3 * 10


def test_random_spec_validation():
    with pytest.raises(ValueError):
        RandomFunctionSpec(dim=0)
    with pytest.raises(ValueError):
        RandomFunctionSpec(dim=3, n_seeds=3)
    with pytest.raises(ValueError):
        RandomFunctionSpec(dim=2, signal_sd=0)


def _archive(path, X, Y):
    d, q = X.shape[1], Y.shape[1]
    lines = [",".join([f"x{j + 1}" for j in range(d)] + [f"y{j + 1}" for j in range(q)])]
    lines += [",".join(repr(float(v)) for v in np.concatenate([x, y])) for x, y in zip(X, Y)]
    path.write_text("\n".join(lines) + "\n")


def test_tabulated_single_row(tmp_path):
    p = tmp_path / "one.csv"
    _archive(p, np.array([[1.0, 2.0]]), np.array([[5.0, 6.0, 7.0]]))
    sim = load_tabulated(p, input_box=[[0, 0], [10, 10]])
    np.testing.assert_array_equal(eval_tabulated(sim, [9.0, 0.5]), [5.0, 6.0, 7.0])


def test_tabulated_exact(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(20, 2))
    Y = rng.normal(size=(20, 2))
    p = tmp_path / "arch.csv"
    _archive(p, X, Y)
    sim = load_tabulated(p, "exact")
    np.testing.assert_array_equal(sim(X[4]), Y[4])
    with pytest.raises(LookupError):
        sim((X[4] + X[5]) / 2)


def test_tabulated_nearest_matches_scan(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.uniform([0, 100], [1, 300], size=(1000, 2))
    Y = rng.normal(size=(1000, 3))
    p = tmp_path / "arch.csv"
    _archive(p, X, Y)
    sim = load_tabulated(p, "nearest")
    lo, hi = X.min(0), X.max(0)
    Q = rng.uniform(lo, hi, size=(100, 2))
    got = sim(Q)
    for q, row in zip(Q, got):
        i = np.argmin(np.sum(((X - q) / (hi - lo)) ** 2, axis=1))
        np.testing.assert_array_equal(row, Y[i])


@pytest.mark.parametrize("text", ["", "x1,y1\n", "a,b\n1,2\n", "x1,y1\n1,2\n3\n", "x1,y1\n1,abc\n",
                                  "x1,y1\n1,nan\n", "x1,x2\n1,2\n"])
def test_tabulated_parse_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError):
        load_tabulated(p)
