import numpy as np
import pytest

from mppsynth.covariance import InverseWishart, Kernel, KnotMatrix, conditional_prior
from mppsynth.data import Dataset, SpatialDesign
from mppsynth.lgcp import (
    IntegrationGrid, IntensityChain, IntensityConfig, IntensityModel, fit_intensity,
    intensity_surface, lgcp_loglik, log_intensity, resolve_kernel,
)
from mppsynth.mcmc import ChainSettings
from mppsynth.state import load_state, save_state

KERNEL = Kernel("exponential", 4.0)
SHORT = ChainSettings(burn_in=500, thin=2, n_retained=40)


def model(beta, w, corners4, design=SpatialDesign(), n_side=50):
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return IntensityModel(beta=beta, w_star=w, psi=np.eye(len(beta)), kernel=KERNEL,
                          knotmatrix=KnotMatrix(corners4, KERNEL),
                          grid=IntegrationGrid.regular(n_side=n_side), design=design)


def test_grid_weights():
    g = IntegrationGrid.regular(n_side=50)
    assert g.size == 2500 and g.weight == pytest.approx(1 / 2500)


def test_log_intensity_constants(corners4, rng):
    s = rng.random((7, 2))
    np.testing.assert_allclose(log_intensity(model([0.0], np.zeros(4), corners4), 1, s), 0.0)
    np.testing.assert_allclose(log_intensity(model([np.log(5)], np.zeros(4), corners4), 1, s), np.log(5))
    m = model([1.0], [0.0, 0.5, 0.0, 0.0], corners4)
    assert log_intensity(m, 1, corners4[1]) == 1.5


def test_surface_matches_log(corners4, rng):
    m = model([0.3], rng.normal(size=4), corners4)
    s = rng.random((50, 2))
    lam = intensity_surface(m, 1, s)
    assert np.all(lam > 0)
    np.testing.assert_allclose(lam, np.exp(log_intensity(m, 1, s)), rtol=1e-15)
    c = model([np.log(7)], np.zeros(4), corners4)
    np.testing.assert_allclose(intensity_surface(c, 1, s), 7.0, rtol=1e-14)


@pytest.mark.parametrize("c", [1.0, 3.0, 250.0])
def test_loglik_constant_surface(c, corners4, rng):
    pts = rng.random((12, 2))
    m = model([np.log(c)], np.zeros(4), corners4)
    assert lgcp_loglik(m, 1, pts) == pytest.approx(-c + 12 * np.log(c), rel=1e-12, abs=1e-12)


def test_loglik_grid_refinement(corners4, rng):
    design = SpatialDesign(("intercept", "x", "y"))
    pts = rng.random((300, 2))
    coarse = model([[np.log(300), 0.3, -0.2]], [[0.1, -0.1, 0.05, 0.0]], corners4, design, 50)
    fine = model([[np.log(300), 0.3, -0.2]], [[0.1, -0.1, 0.05, 0.0]], corners4, design, 100)
    assert abs(lgcp_loglik(coarse, 1, pts) - lgcp_loglik(fine, 1, pts)) < 1e-3


def test_loglik_grid_relabel(corners4, rng):
    m = model([0.5], rng.normal(size=4), corners4)
    pts = rng.random((20, 2))
    perm = IntegrationGrid(m.grid.points[rng.permutation(m.grid.size)], m.grid.weight)
    m2 = IntensityModel(m.beta, m.w_star, m.psi, m.kernel, m.knotmatrix, perm)
    assert lgcp_loglik(m2, 1, pts) == pytest.approx(lgcp_loglik(m, 1, pts), rel=1e-12)


def test_loglik_empty_rejected(corners4):
    with pytest.raises(ValueError):
        lgcp_loglik(model([0.0], np.zeros(4), corners4), 1, np.empty((0, 2)))


def test_resolve_kernel():
    k = resolve_kernel("exponential", None, np.array([[0.0, 0.0], [0.6, 0.8]]), 0.5)
    assert k.decay == pytest.approx(-np.log(0.05) / 0.5)
    assert resolve_kernel("matern-3/2", 3.0, np.zeros((2, 2))).decay == 3.0


def test_zero_points_rejected(corners4):
    ds = Dataset(np.array([[0.5, 0.5]]), np.array([2]), np.zeros(1), K=2)
    with pytest.raises(ValueError, match="no points"):
        fit_intensity(ds, corners4, IntensityConfig(chain=SHORT), 0)


def test_homogeneous_mass_short_chain(homogeneous, corners4):
    cfg = IntensityConfig(chain=SHORT, phi=3.0)
    chain = fit_intensity(homogeneous, corners4, cfg, rng=1)
    total = chain.integrated_intensity()[:, 0].mean()
    assert abs(total - homogeneous.N) < 3 * np.sqrt(homogeneous.N)
    assert np.all((chain.acceptance >= 0.1) & (chain.acceptance <= 0.6))
    assert chain.beta.shape == (40, 1, 1) and chain.w_star.shape == (40, 1, 4)


def _two_combo(rng):
    a = rng.random((150, 2)) * 0.5
    b = 0.5 + rng.random((100, 2)) * 0.5
    xy = np.vstack([a, b])
    return Dataset(xy, np.repeat([1, 2], [150, 100]), np.zeros(250), K=2)


def test_reproducible(corners4, rng):
    ds = _two_combo(rng)
    cfg = IntensityConfig(chain=ChainSettings(burn_in=100, thin=1, n_retained=10), phi=3.0)
    a = fit_intensity(ds, corners4, cfg, rng=5)
    b = fit_intensity(ds, corners4, cfg, rng=5)
    assert a == b
    np.testing.assert_array_equal(a.trace, b.trace)


def test_diagonal_independent_of_workers(corners4, rng):
    ds = _two_combo(rng)
    base = dict(chain=ChainSettings(burn_in=100, thin=1, n_retained=10), phi=3.0, psi_structure="diagonal")
    a = fit_intensity(ds, corners4, IntensityConfig(**base, workers=1), rng=9)
    b = fit_intensity(ds, corners4, IntensityConfig(**base, workers=2), rng=9)
    np.testing.assert_array_equal(a.beta, b.beta)
    assert np.all(a.psi[:, 0, 1] == 0)


def test_chain_state_roundtrip(tmp_path, corners4, homogeneous):
    cfg = IntensityConfig(chain=ChainSettings(burn_in=50, thin=1, n_retained=5), phi=3.0)
    chain = fit_intensity(homogeneous, corners4, cfg, rng=3)
    save_state(chain, tmp_path / "c.state")
    back = load_state(tmp_path / "c.state", expected=IntensityChain)
    assert back == chain
    s = np.array([[0.3, 0.4]])
    np.testing.assert_array_equal(back.posterior_mean_intensity(s), chain.posterior_mean_intensity(s))


def test_prior_sweep_recovers_kronecker_covariance():
    """Gibbs over the column conditionals with no data samples Psi kron C*."""
    rng = np.random.default_rng(11)
    km = KnotMatrix([[0.2, 0.5], [0.6, 0.5]], Kernel("exponential", 3.0))
    psi = np.array([[1.0, 0.5], [0.5, 2.0]])
    Q = np.linalg.inv(psi)
    W = np.zeros((2, 2))
    draws = []
    for it in range(60000):
        for k in range(2):
            m, v = conditional_prior(W, Q, k)
            W[:, k] = m + np.sqrt(v) * (km.chol @ rng.standard_normal(2))
        if it >= 1000:
            draws.append(W.T.ravel().copy())
    cov = np.cov(np.array(draws).T)
    np.testing.assert_allclose(cov, np.kron(psi, km.corr), atol=0.06)


def test_iw_posterior_feeds_sampler():
    km = KnotMatrix([[0.2, 0.5], [0.6, 0.5]], Kernel("exponential", 3.0))
    post = InverseWishart(np.eye(2), 4.0).posterior(np.zeros((2, 2)), km)
    np.testing.assert_allclose(post.scale, np.eye(2))
    assert post.df == 6.0
