import numpy as np
import pytest
from scipy.special import gammaln, logsumexp
from scipy.spatial.distance import pdist

from mppsynth import _kernels

BACKENDS = ["python"] + (["cython"] if _kernels.BACKEND == "cython" else [])


def brute_pairs(xy, h):
    d = pdist(xy)
    return np.array([(d <= r).sum() for r in h])


@pytest.mark.parametrize("backend", BACKENDS)
def test_pair_counts_hand_case(backend):
    xy = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.3]])
    # distances 0.1, 0.3, sqrt(0.1)
    out = _kernels.pair_counts(xy, [0.0, 0.1, 0.2, 0.3, 0.32], backend=backend)
    assert out.tolist() == [0, 1, 1, 2, 3]


@pytest.mark.parametrize("backend", BACKENDS)
def test_pair_counts_matches_brute_force(backend, rng):
    xy = rng.random((700, 2))
    h = np.linspace(0, 0.3, 17)
    assert np.array_equal(_kernels.pair_counts(xy, h, backend=backend), brute_pairs(xy, h))


def test_pair_counts_rejects_decreasing_radii():
    with pytest.raises(ValueError):
        _kernels.pair_counts(np.zeros((3, 2)), [0.2, 0.1])


def brute_risk(cxy, ck, cy, sxy, sk, sy, eps_s, eps_a):
    d = np.hypot(cxy[:, None, 0] - sxy[None, :, 0], cxy[:, None, 1] - sxy[None, :, 1])
    close = d < eps_s
    sim = (ck[:, None] == sk[None, :]) & (np.abs(cy[:, None] - sy[None, :]) <= eps_a)
    return close.sum(1), (close & sim).sum(1), sim.sum(1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_risk_counts_match_enumeration(backend, rng):
    n, m = 300, 900
    cxy, sxy = rng.random((n, 2)), rng.random((m, 2))
    ck, sk = rng.integers(1, 4, n), rng.integers(1, 4, m)
    cy, sy = rng.integers(16, 99, n).astype(float), rng.integers(16, 99, m).astype(float)
    got = _kernels.risk_counts(cxy, ck, cy, sxy, sk, sy, 0.05, 5.0, backend=backend)
    want = brute_risk(cxy, ck, cy, sxy, sk, sy, 0.05, 5.0)
    for g, w in zip(got, want):
        assert np.array_equal(g, w)


@pytest.mark.parametrize("backend", BACKENDS)
def test_risk_boundaries_strict_distance_inclusive_mark(backend):
    cxy = np.array([[0.5, 0.5]])
    sxy = np.array([[0.5, 0.5], [0.75, 0.5], [0.5, 0.5]])
    close, both, sim = _kernels.risk_counts(cxy, [1], [40.0], sxy, [1, 1, 1], [45.0, 40.0, 45.5],
                                            0.25, 5.0, backend=backend)
    # distance exactly eps_s is not close; |dY| exactly eps_a is similar
    assert (close[0], both[0], sim[0]) == (2, 1, 2)


@pytest.mark.parametrize("backend", BACKENDS)
def test_trunc_pois_lognorm_matches_logsumexp(backend):
    eta = np.log([0.01, 1.0, 50.0, 70.0, 200.0])
    y = np.arange(16, 99)
    want = [logsumexp(y * e - gammaln(y + 1)) for e in eta]
    got = _kernels.trunc_pois_lognorm(eta, 16, 98, backend=backend)
    np.testing.assert_allclose(got, want, rtol=1e-13)


@pytest.mark.parametrize("backend", BACKENDS)
def test_trunc_pois_moments(backend):
    eta = np.log([3.0, 60.0, 150.0])
    y = np.arange(16, 99)
    mean, var = _kernels.trunc_pois_moments(eta, 16, 98, backend=backend)
    for e, m, v in zip(eta, mean, var):
        lp = y * e - gammaln(y + 1)
        p = np.exp(lp - logsumexp(lp))
        assert m == pytest.approx(p @ y, rel=1e-12)
        assert v == pytest.approx(p @ (y - p @ y) ** 2, rel=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_trunc_pois_sample_is_inverse_cdf(backend):
    y = np.arange(16, 99)
    e = np.log(40.0)
    lp = y * e - gammaln(y + 1)
    cdf = np.cumsum(np.exp(lp - logsumexp(lp)))
    u = np.array([0.0, 1e-12, 0.3, 0.5, 0.9, 1 - 1e-12])
    got = _kernels.trunc_pois_sample(np.full(len(u), e), u, 16, 98, backend=backend)
    want = y[np.minimum(np.searchsorted(cdf, u, side="right"), len(y) - 1)]
    assert np.array_equal(got, want)


@pytest.mark.skipif(_kernels.BACKEND != "cython", reason="compiled core not built")
def test_backends_agree_bitwise_on_counts(rng):
    xy = rng.random((400, 2))
    h = np.linspace(0, 0.5, 11)
    assert np.array_equal(_kernels.pair_counts(xy, h, "python"), _kernels.pair_counts(xy, h, "cython"))
    eta = rng.normal(4, 1, 200)
    u = rng.random(200)
    assert np.array_equal(_kernels.trunc_pois_sample(eta, u, 16, 98, "python"),
                          _kernels.trunc_pois_sample(eta, u, 16, 98, "cython"))


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.pair_counts(np.zeros((2, 2)), [0.1], backend="fortran")


def test_env_var_selects_fallback():
    import os
    import subprocess
    import sys

    code = "import mppsynth; print(mppsynth.BACKEND, mppsynth.k_hat([[0.2, 0.5], [0.3, 0.5]], 0.2))"
    env = dict(os.environ, MPPSYNTH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "0.5"]
