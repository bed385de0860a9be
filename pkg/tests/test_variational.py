import math

import numpy as np
import pytest

from hsbnn.model import NetworkSpec, log_joint_terms
from hsbnn.pruning import weight_draws
from hsbnn.variational import (
    FAMILIES,
    Posterior,
    draw_noise,
    elbo_estimate,
    elbo_terms,
    init_posterior,
    output_posterior,
    sample_outputs,
)
from conftest import perturb, small_posterior
from oracles import draw_model_sample


@pytest.mark.parametrize("family", FAMILIES)
def test_init_shapes(family, rng):
    spec = NetworkSpec((3, 5, 4, 1))
    post = init_posterior(spec, family, rng)
    for l in range(spec.n_hidden):
        assert post.layer_shape(l) == (spec.fan_in(l), spec.layer_widths[l + 1])
    assert np.shape(output_posterior(post).mu) == (5, 1)
    assert all(np.all(np.isfinite(v)) for v in post.params.values())


def test_gaussian_prior_requires_factorized():
    with pytest.raises(ValueError):
        init_posterior(NetworkSpec((1, 3, 1), prior="gaussian"), "structured", np.random.default_rng(0))
    with pytest.raises(ValueError):
        Posterior(NetworkSpec((1, 3, 1)), "banana")


@pytest.mark.parametrize("family", FAMILIES)
def test_terms_sum_to_estimate(family, rng):
    post = perturb(small_posterior(family), rng)
    x, y = rng.normal(size=(7, 2)), rng.normal(size=7)
    noise = draw_noise(post, 7, 3, rng)
    terms = elbo_terms(post, x, y, noise, 70)
    total = math.fsum(float(np.sum(v)) for v in terms.values())
    assert elbo_estimate(post, x, y, noise, 70) == pytest.approx(total, rel=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_local_reparameterization_matches_weight_space(family, rng):
    """Output mean/variance from the per-unit sampler equal those from joint weight draws."""
    post = perturb(small_posterior(family, widths=(2, 3, 1)), rng, 0.2)
    x = rng.normal(size=(4, 2))
    S = 20_000
    noise = draw_noise(post, len(x), S, rng)
    local = np.stack([np.asarray(sample_outputs(post, x, noise.sample(s)))[:, 0] for s in range(S)])
    W = weight_draws(post, 0, S, rng)
    out = output_posterior(post)
    w_out = np.asarray(out.mu) + np.asarray(out.sigma) * rng.standard_normal((S, 4, 1))
    a = np.concatenate([x, np.ones((4, 1))], axis=1)
    z = np.maximum(np.einsum("bi,sij->sbj", a, W), 0.0)
    z = np.concatenate([z, np.ones((S, 4, 1))], axis=2)
    direct = np.einsum("sbj,sjo->sbo", z, w_out)[:, :, 0]
    se = np.sqrt(local.var(0) / S + direct.var(0) / S)
    assert np.all(np.abs(local.mean(0) - direct.mean(0)) < 5 * se)
    np.testing.assert_allclose(local.std(0), direct.std(0), rtol=0.05)


@pytest.mark.parametrize("family", ["factorized", "structured"])
def test_elbo_cross_entropy_matches_log_joint(family, rng):
    """Non-entropy ELBO terms equal E_q[ln p(y, theta)] estimated from full joint draws."""
    post = perturb(small_posterior(family, widths=(1, 3, 1)), rng, 0.2)
    x, y = rng.normal(size=(3, 1)), rng.normal(size=3)
    S = 2000
    noise = draw_noise(post, 3, S, rng)
    terms = elbo_terms(post, x, y, noise)
    prior_part = math.fsum(float(np.sum(v)) for k, v in terms.items() if "entropy" not in k and k != "likelihood")
    lik_local = []
    for s in range(S):
        one = draw_noise(post, 3, 1, rng)
        one.arrays.update({k: v[s:s + 1] for k, v in noise.arrays.items()})
        lik_local.append(float(np.sum(elbo_terms(post, x, y, one)["likelihood"])))
    lik_joint, prior_joint = [], []
    for _ in range(4000):
        w, aux = draw_model_sample(post, rng)
        t = log_joint_terms(post.spec, w, aux, x, y)
        lik_joint.append(t.pop("likelihood"))
        prior_joint.append(math.fsum(t.values()))

    def se(v):
        return np.std(v) / math.sqrt(len(v))

    assert abs(prior_part - np.mean(prior_joint)) < 5 * se(prior_joint)
    assert abs(np.mean(lik_local) - np.mean(lik_joint)) < 5 * math.hypot(se(lik_local), se(lik_joint))
    assert float(terms["likelihood"]) == pytest.approx(np.mean(lik_local), rel=1e-10)


def test_structured_entropy_includes_log_scale_jacobian(rng):
    """Shifting the mean of nu by d raises the (beta, tau^2) entropy by 2 n d."""
    post = small_posterior("structured")
    x, y = rng.normal(size=(2, 2)), rng.normal(size=2)
    noise = draw_noise(post, 2, 1, rng)
    before = float(elbo_terms(post, x, y, noise)["beta_entropy_0"])
    post.params["h0.M"][-1] += 0.5
    after = float(elbo_terms(post, x, y, noise)["beta_entropy_0"])
    assert after - before == pytest.approx(2 * 4 * 0.5)


def test_noise_layout():
    post = small_posterior("factorized", widths=(2, 5, 3, 1))
    noise = draw_noise(post, 6, 2, np.random.default_rng(0))
    assert noise.S == 2
    assert noise.arrays["h1.u"].shape == (2, 6, 3)
    assert noise.arrays["h0.scale"].shape == (2, 5)
    assert "c" in noise.arrays
