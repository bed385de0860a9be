import numpy as np
import pytest
from scipy import stats

from hsbnn import distributions as D
from hsbnn.distributions import GammaParams, InvGammaParams, LogNormalParams
from oracles import invgamma_draws, lognormal_draws, mc_cross_terms, random_invgamma, random_lognormal


def test_invgamma_moments_match_scipy(rng):
    for _ in range(10):
        p = random_invgamma(rng)
        inv_mean, log_mean, ent = D.invgamma_moments(p)
        dist = stats.invgamma(p.shape, scale=p.rate)
        assert ent == pytest.approx(float(dist.entropy()), rel=1e-10)
        assert inv_mean == pytest.approx(p.shape / p.rate)
        xs = invgamma_draws(p, 200_000, rng)
        assert log_mean == pytest.approx(np.log(xs).mean(), abs=5 * np.log(xs).std() / np.sqrt(len(xs)))


def test_lognormal_closed_forms(rng):
    p = LogNormalParams(0.4, 0.7)
    dist = stats.lognorm(p.sigma, scale=np.exp(p.mu))
    assert float(D.lognormal_entropy(p)) == pytest.approx(float(dist.entropy()), rel=1e-12)
    assert float(D.lognormal_mean(p)) == pytest.approx(dist.mean(), rel=1e-12)
    assert float(D.lognormal_mean_inverse(p)) == pytest.approx(dist.expect(lambda v: 1.0 / v), rel=1e-8)


def test_logpdfs_match_scipy(rng):
    v = rng.uniform(0.1, 4.0, 7)
    np.testing.assert_allclose(D.invgamma_logpdf(v, 1.3, 0.8), stats.invgamma.logpdf(v, 1.3, scale=0.8))
    np.testing.assert_allclose(D.gamma_logpdf(v, 6.0, 6.0), stats.gamma.logpdf(v, 6.0, scale=1 / 6.0))
    np.testing.assert_allclose(D.normal_logpdf(v, 0.5, 2.0), stats.norm.logpdf(v, 0.5, np.sqrt(2.0)))


def test_cross_terms_match_monte_carlo(rng):
    for _ in range(3):
        for name, value, mean, se in mc_cross_terms(rng, 200_000):
            assert abs(value - mean) <= 5 * se, f"{name}: analytic {value}, MC {mean} +- {se}"


def test_product_cdf_matches_sampling(rng):
    a, b = random_lognormal(rng), random_lognormal(rng)
    t = float(np.exp(a.mu + b.mu + 0.3))
    draws = lognormal_draws(a, 400_000, rng) * lognormal_draws(b, 400_000, rng)
    assert D.lognormal_product_cdf(a, b, t) == pytest.approx(np.mean(draws < t), abs=5e-3)


def test_product_cdf_vectorizes_and_rejects_bad_threshold():
    a = LogNormalParams(np.array([-5.0, 0.0, 5.0]), np.array([1.0, 1.0, 1.0]))
    b = LogNormalParams(0.0, 0.5)
    cdf = D.lognormal_product_cdf(a, b, 1.0)
    assert cdf.shape == (3,)
    assert np.all(np.diff(cdf) < 0)
    with pytest.raises(ValueError):
        D.lognormal_product_cdf(a, b, 0.0)


@pytest.mark.parametrize(
    "make",
    [
        lambda: LogNormalParams(0.0, -1.0),
        lambda: LogNormalParams(np.nan, 1.0),
        lambda: InvGammaParams(0.0, 1.0),
        lambda: InvGammaParams(1.0, np.inf),
        lambda: GammaParams(1.0, -2.0),
    ],
)
def test_invalid_parameters_rejected(make):
    with pytest.raises(ValueError):
        make()
