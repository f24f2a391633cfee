import numpy as np
import pytest
from scipy import stats

from mppsynth.covariance import Kernel, KnotMatrix, cross_corr
from mppsynth.data import Dataset, SpatialDesign
from mppsynth.marks import (
    MarkChain, MarkConfig, MarkModel, draw_mark, draw_w_tilde, fit_marks, mark_mean, trunc_pois_pmf,
)
from mppsynth.mcmc import ChainSettings
from mppsynth.state import load_state, save_state

KERNEL = Kernel("exponential", 4.0)
TWO_KNOTS = np.array([[0.3, 0.5], [0.7, 0.5]])


def normal_model(beta, w, psi=1.0, sigma2=1.0, knots=TWO_KNOTS, design=SpatialDesign()):
    return MarkModel("normal", np.atleast_2d(beta).astype(float), np.atleast_2d(w).astype(float),
                     np.array([[psi]]), KERNEL, KnotMatrix(knots, KERNEL),
                     sigma2=np.array([sigma2]), design=design)


def trunc_model(log_rate, bounds=(16, 98)):
    return MarkModel("truncated-poisson", np.array([[log_rate]]), np.zeros((1, 2)), np.eye(1),
                     KERNEL, KnotMatrix(TWO_KNOTS, KERNEL), trunc_bounds=bounds)


def test_w_tilde_at_knot_is_exact(rng):
    m = normal_model([0.0], [1.25, -0.5])
    assert draw_w_tilde(m, TWO_KNOTS[1], 1, rng) == -0.5


def test_w_tilde_far_point_variance(rng):
    m = normal_model([0.0], [0.0, 0.0], psi=2.0, knots=np.array([[0.0, 0.0], [0.05, 0.0]]))
    far = np.tile([[1.0, 1.0]], (100000, 1))
    assert np.var(draw_w_tilde(m, far, 1, rng)) == pytest.approx(2.0, rel=0.02)


def test_w_tilde_zero_psi_is_projection(rng):
    m = normal_model([0.0], [1.0, 2.0], psi=0.0)
    s = np.array([[0.5, 0.2], [0.1, 0.9]])
    c = cross_corr(KERNEL, s, TWO_KNOTS)
    expected = c @ np.linalg.solve(m.knotmatrix.corr + 1e-8 * np.eye(2), [1.0, 2.0])
    np.testing.assert_allclose(draw_w_tilde(m, s, 1, rng), expected, rtol=1e-7)


def test_mark_mean_values():
    assert mark_mean(normal_model([0.0], [0, 0]), 1, [0.5, 0.5], 0.0) == 0.0
    assert mark_mean(normal_model([4.2], [0, 0]), 1, [0.5, 0.5], -0.2) == pytest.approx(4.0, abs=1e-15)
    design = SpatialDesign(("intercept", "x", "y"))
    m = normal_model([[1.0, 2.0, -3.0]], [0, 0], design=design)
    s = np.array([0.8, 0.1])
    x = design.matrix(s)[0]
    assert mark_mean(m, 1, s, 0.5) == pytest.approx(x @ [1.0, 2.0, -3.0] + 0.5, rel=1e-14)


@pytest.mark.parametrize("rate", [0.1, 1.0, 16.0, 50.0, 98.0, 200.0])
def test_pmf_normalizes(rate):
    y = np.arange(16, 99)
    assert trunc_pois_pmf(rate, y).sum() == pytest.approx(1.0, abs=1e-12)


def test_pmf_small_rate_concentrates():
    assert trunc_pois_pmf(0.01, 16) > 0.999
    assert trunc_pois_pmf(0.01, 17) / trunc_pois_pmf(0.01, 16) == pytest.approx(0.01 / 17, rel=1e-10)


def test_pmf_untruncated_is_poisson():
    y = np.arange(0, 30)
    np.testing.assert_allclose(trunc_pois_pmf(6.5, y, (0, np.inf)), stats.poisson.pmf(y, 6.5), rtol=1e-12)


def test_pmf_errors():
    with pytest.raises(ValueError):
        trunc_pois_pmf(5.0, 15)
    with pytest.raises(ValueError):
        trunc_pois_pmf(5.0, 99)
    with pytest.raises(ValueError):
        trunc_pois_pmf(0.0, 20)


def test_draw_mark_support_and_mean(rng):
    s = rng.random((100000, 2))
    y = draw_mark(trunc_model(np.log(40.0)), 1, s, rng)
    assert y.min() >= 16 and y.max() <= 98 and np.all(y == np.round(y))
    support = np.arange(16, 99)
    mean = (support * trunc_pois_pmf(40.0, support)).sum()
    assert y.mean() == pytest.approx(mean, abs=4 * y.std() / np.sqrt(len(y)))
    extreme = draw_mark(trunc_model(-30.0), 1, s[:1000], rng)
    assert np.all(extreme == 16)


def test_draw_mark_normal_moments(rng):
    m = normal_model([3.0], [0.0, 0.0], psi=0.0, sigma2=0.0)
    np.testing.assert_array_equal(draw_mark(m, 1, rng.random((5, 2)), rng), 3.0)
    m = normal_model([3.0], [0.0, 0.0], psi=0.0, sigma2=4.0)
    y = draw_mark(m, 1, rng.random((100000, 2)), rng)
    assert y.mean() == pytest.approx(3.0, abs=0.03)
    assert y.var() == pytest.approx(4.0, rel=0.03)


def test_modified_pp_variance_identity():
    """Marginally over w* ~ N(0, psi C*), Var w~(s) = psi for every s."""
    rng = np.random.default_rng(8)
    psi, n = 1.7, 40000
    km = KnotMatrix(TWO_KNOTS, KERNEL)
    s = np.array([0.45, 0.62])
    vals = np.empty(n)
    for i in range(n):
        w = np.sqrt(psi) * (km.chol @ rng.standard_normal(2))
        vals[i] = draw_w_tilde(normal_model([0.0], w, psi=psi), s, 1, rng)
    assert vals.var() == pytest.approx(psi, rel=0.03)


def _normal_data(rng, n=500, beta=2.0, sigma2=1.0):
    xy = rng.random((n, 2))
    y = beta + np.sqrt(sigma2) * rng.standard_normal(n)
    return Dataset(xy, np.ones(n, dtype=int), y, K=1)


def test_normal_recovery(rng):
    ds = _normal_data(rng)
    cfg = MarkConfig(chain=ChainSettings(burn_in=500, thin=2, n_retained=500), phi=3.0)
    chain = fit_marks(ds, TWO_KNOTS, cfg, rng=2)
    b = chain.beta[:, 0, 0]
    assert abs(b.mean() - 2.0) < 3 * max(b.std(), 1 / np.sqrt(ds.N))
    assert chain.sigma2[:, 0].mean() == pytest.approx(1.0, rel=0.25)
    assert chain.w_tilde.shape == (500, ds.N)


def test_normal_matches_linear_regression_oracle(rng):
    n = 40
    xy = rng.random((n, 2))
    design = SpatialDesign(("intercept", "x"))
    X = design.matrix(xy)
    y = X @ [1.0, 3.0] + 0.7 * rng.standard_normal(n)
    ds = Dataset(xy, np.ones(n, dtype=int), y, K=1)
    cfg = MarkConfig(design=design, spatial=False, phi=3.0,
                     chain=ChainSettings(burn_in=200, thin=1, n_retained=40000))
    chain = fit_marks(ds, TWO_KNOTS, cfg, rng=4)
    bhat, sse = np.linalg.lstsq(X, y, rcond=None)[:2]
    p = 2
    # flat beta prior and uniform prior on sigma: sigma2 | y ~ IG((n - p - 1) / 2, SSE / 2)
    e_sigma2 = sse[0] / (n - p - 3)
    cov = e_sigma2 * np.linalg.inv(X.T @ X)
    draws = chain.beta[:, 0, :]
    se = np.sqrt(np.diag(cov) / 40000)
    assert np.all(np.abs(draws.mean(axis=0) - bhat) < 5 * se)
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.05, atol=1e-4)
    assert chain.sigma2[:, 0].mean() == pytest.approx(e_sigma2, rel=0.03)


def test_truncated_recovery(rng):
    n = 400
    y = np.clip(rng.poisson(50, n), 16, 98).astype(float)
    ds = Dataset(rng.random((n, 2)), np.ones(n, dtype=int), y, K=1, integer_marks=True)
    cfg = MarkConfig(family="truncated-poisson", phi=3.0,
                     chain=ChainSettings(burn_in=1000, thin=2, n_retained=100))
    chain = fit_marks(ds, TWO_KNOTS, cfg, rng=6)
    sims = np.concatenate([draw_mark(chain.draw(d), 1, ds.xy, rng) for d in range(chain.n_draws)])
    assert abs(sims.mean() - y.mean()) < 1.0
    assert np.all(chain.acceptance[:, 0] > 0.1)


def test_fit_marks_preconditions(rng):
    ds = Dataset(rng.random((3, 2)), np.array([1, 1, 2]), np.zeros(3), K=2)
    with pytest.raises(ValueError, match="fewer than 2"):
        fit_marks(ds, TWO_KNOTS, MarkConfig(phi=3.0))
    bad = Dataset(rng.random((3, 2)), np.ones(3, dtype=int), np.array([10.0, 20.0, 30.0]), K=1)
    with pytest.raises(ValueError, match="integers"):
        fit_marks(bad, TWO_KNOTS, MarkConfig(family="truncated-poisson", phi=3.0))
    with pytest.raises(ValueError):
        MarkConfig(family="gamma")


def test_chain_roundtrip_and_determinism(tmp_path, rng):
    ds = _normal_data(rng, n=60)
    cfg = MarkConfig(chain=ChainSettings(burn_in=20, thin=1, n_retained=5), phi=3.0)
    a = fit_marks(ds, TWO_KNOTS, cfg, rng=1)
    assert a == fit_marks(ds, TWO_KNOTS, cfg, rng=1)
    save_state(a, tmp_path / "m.state")
    assert load_state(tmp_path / "m.state", expected=MarkChain) == a
