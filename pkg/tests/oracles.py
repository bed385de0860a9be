"""Dense reference computations used as test oracles.

Everything here is the slow, obvious version: explicit covariance
matrices, Kronecker products and brute-force sampling.
"""
import numpy as np
from scipy import stats

from hsbnn.distributions import (
    GammaParams,
    InvGammaParams,
    LogNormalParams,
    invgamma_logpdf,
    gamma_logpdf,
)
from hsbnn.lowrank import DiagRankOne, MatrixNormalStructured


def random_mn(rng, m, n, h_scale=1.0):
    psi = rng.uniform(0.2, 2.0, m)
    h = h_scale * rng.normal(size=m)
    V = rng.uniform(0.2, 2.0, n)
    M = rng.normal(size=(m, n))
    return MatrixNormalStructured(M, DiagRankOne(psi, h), V)


def dense_U(U: DiagRankOne):
    return np.diag(np.asarray(U.psi)) + np.outer(U.h, U.h)


def dense_cov(q: MatrixNormalStructured):
    """Covariance of vec(B) (columns stacked): diag(V) kron U."""
    return np.kron(np.diag(np.asarray(q.V)), dense_U(q.U))


def dense_condition_last_row(q: MatrixNormalStructured, nu):
    """Gaussian conditioning of vec(B) on its last row, done with the full covariance."""
    m, n = q.shape
    mean = np.asarray(q.M).T.ravel()  # column-stacked
    S = dense_cov(q)
    obs = np.array([k * m + (m - 1) for k in range(n)])
    rest = np.setdiff1d(np.arange(m * n), obs)
    K = S[np.ix_(rest, obs)] @ np.linalg.inv(S[np.ix_(obs, obs)])
    cmean = mean[rest] + K @ (np.asarray(nu) - mean[obs])
    ccov = S[np.ix_(rest, rest)] - K @ S[np.ix_(obs, rest)]
    return cmean.reshape(n, m - 1).T, ccov


def gaussian_entropy_dense(cov):
    d = cov.shape[0]
    return 0.5 * (d * np.log(2 * np.pi * np.e) + np.linalg.slogdet(cov)[1])


def random_lognormal(rng, size=None):
    return LogNormalParams(rng.uniform(-2.0, 2.0, size), rng.uniform(0.1, 1.5, size))


def random_invgamma(rng, size=None):
    return InvGammaParams(rng.uniform(0.5, 3.0, size), rng.uniform(0.2, 5.0, size))


def lognormal_draws(p: LogNormalParams, N, rng):
    return np.exp(p.mu + p.sigma * rng.standard_normal(N))


def invgamma_draws(p: InvGammaParams, N, rng):
    return stats.invgamma.rvs(p.shape, scale=p.rate, size=N, random_state=rng)


def mc_mean(samples):
    """Mean and standard error of a Monte-Carlo estimate."""
    samples = np.asarray(samples, dtype=float)
    return samples.mean(), samples.std(ddof=1) / np.sqrt(len(samples))


def mc_cross_terms(rng, N):
    """One randomized setting: (name, analytic value, MC mean, MC standard error) per cross-term."""
    from hsbnn import distributions as D

    x = random_lognormal(rng)
    lam = random_invgamma(rng)
    a, b = rng.uniform(0.5, 4.0), rng.uniform(0.5, 8.0)
    g = GammaParams(rng.uniform(1.0, 8.0), rng.uniform(1.0, 8.0))
    xs = lognormal_draws(x, N, rng)
    ls = invgamma_draws(lam, N, rng)
    rows = [
        ("lognormal x invgamma(1/2, 1/lambda)", D.cross_term_lognormal_invgamma(x, lam), invgamma_logpdf(xs, 0.5, 1.0 / ls)),
        ("lognormal x invgamma(a, b)", D.expected_log_invgamma_fixed(x, a, b), invgamma_logpdf(xs, a, b)),
        ("invgamma x invgamma(a, b)", D.invgamma_cross_invgamma(lam, a, b), invgamma_logpdf(ls, a, b)),
        ("lognormal x gamma", D.expected_log_gamma(x, g), gamma_logpdf(xs, g.shape, g.rate)),
        ("lognormal entropy", D.lognormal_entropy(x), -stats.lognorm.logpdf(xs, x.sigma, scale=np.exp(x.mu))),
        ("invgamma entropy", D.invgamma_moments(lam)[2], -stats.invgamma.logpdf(ls, lam.shape, scale=lam.rate)),
    ]
    return [(name, float(value), *mc_mean(s)) for name, value, s in rows]


def draw_model_sample(post, rng):
    """One joint draw of every latent from q, in the model's own parameterization."""
    from hsbnn.model import AuxValues, SampledWeights
    from hsbnn.variational import (
        Factorized,
        FactorizedTied,
        Structured,
        c2_posterior,
        gamma_posterior,
        kappa2_posterior,
        layer_posterior,
        output_posterior,
        tau2_posterior,
        upsilon2_posterior,
    )
    from hsbnn.lowrank import mn_sample

    spec = post.spec

    def ln(p, size=None):
        return np.exp(np.asarray(p.mu) + np.asarray(p.sigma) * rng.standard_normal(size))

    betas, taus, upss, lams, varthetas = [], [], [], [], []
    for l in range(spec.n_hidden):
        layer = layer_posterior(post, l)
        m, n = post.layer_shape(l)
        tau2 = None
        if isinstance(layer, Structured):
            B = mn_sample(layer.joint, rng.standard_normal((m + 1, n)), rng.standard_normal(n))
            beta, tau2 = B[:-1], np.exp(2.0 * B[-1])
        elif isinstance(layer, Factorized):
            beta = np.asarray(layer.mu) + np.asarray(layer.sigma) * rng.standard_normal((m, n))
        elif isinstance(layer, FactorizedTied):
            beta = np.asarray(layer.mu) + rng.standard_normal((m, n))
        else:
            beta = mn_sample(layer.beta, rng.standard_normal((m, n)), rng.standard_normal(n))
        betas.append(beta)
        if spec.shrinkage:
            taus.append(ln(tau2_posterior(post, l), n) if tau2 is None else tau2)
            upss.append(float(ln(upsilon2_posterior(post, l))))
            lams.append(invgamma_draws(post.aux[f"h{l}.lambda"], None, rng))
            varthetas.append(float(invgamma_draws(post.aux[f"h{l}.vartheta"], None, rng)))
    out = output_posterior(post)
    w_out = np.asarray(out.mu) + np.asarray(out.sigma) * rng.standard_normal(np.shape(out.mu))
    kappa2 = float(ln(kappa2_posterior(post))) if spec.shrinkage else None
    c2 = float(ln(c2_posterior(post))) if spec.regularized else None
    w = SampledWeights(betas, taus or None, upss or None, w_out, kappa2, c2, float(ln(gamma_posterior(post))))
    aux = AuxValues(lams, varthetas, float(invgamma_draws(post.aux["rho_kappa"], None, rng))) if spec.shrinkage else None
    return w, aux


def restricted_elbo(x, lam, b):
    """ELBO terms that involve q(lambda) alone; vectorized over the lambda parameters."""
    from hsbnn.distributions import cross_term_lognormal_invgamma, invgamma_cross_invgamma, invgamma_moments

    return cross_term_lognormal_invgamma(x, lam) + invgamma_cross_invgamma(lam, 0.5, 1.0 / b**2) + invgamma_moments(lam)[2]
