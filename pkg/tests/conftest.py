"""Shared oracles: quadrature and sampling references the library is tested
against.  These deliberately avoid the library's own CDF/moment code paths.
"""
import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln, stdtrit
from scipy.stats import multivariate_t


def random_spd(rng, p, scale=1.0):
    A = rng.normal(size=(p, p))
    return scale * (A @ A.T / p + np.eye(p))


def t_logpdf_np(x, sigma, nu):
    """Plain numpy multivariate t log-density at rows of x (location 0)."""
    x = np.atleast_2d(x)
    p = x.shape[1]
    inv = np.linalg.inv(sigma)
    _, logdet = np.linalg.slogdet(sigma)
    q = np.einsum("ni,ij,nj->n", x, inv, x)
    logc = (gammaln(0.5 * (nu + p)) - gammaln(0.5 * nu)
            - 0.5 * p * np.log(nu * np.pi) - 0.5 * logdet)
    return logc - 0.5 * (nu + p) * np.log1p(q / nu)


def quad_trunc_p1(bound, sig2, nu, side="upper"):
    """(prob, mean, second) of truncated univariate t by adaptive quadrature."""
    dens = lambda x: np.exp(t_logpdf_np(np.array([[x]]), np.array([[sig2]]), nu))[0]
    lo, hi = (-np.inf, bound) if side == "upper" else (bound, np.inf)
    c = integrate.quad(dens, lo, hi, limit=400)[0]
    m = integrate.quad(lambda x: x * dens(x), lo, hi, limit=400)[0]
    s = integrate.quad(lambda x: x * x * dens(x), lo, hi, limit=400)[0]
    return c, m / c, s / c


def quad_trunc_p2(bound, sigma, nu, side="upper"):
    """(prob, mean, second) of a truncated bivariate t by dblquad.

    Finite limits are placed at the 1e-12 marginal quantile, so use nu >= 6
    when second moments must be accurate to 1e-5 relative.
    """
    inv = np.linalg.inv(sigma)
    _, logdet = np.linalg.slogdet(sigma)
    logc = (gammaln(0.5 * (nu + 2)) - gammaln(0.5 * nu)
            - np.log(nu * np.pi) - 0.5 * logdet)

    def dens(x, y):
        q = inv[0, 0] * x * x + 2 * inv[0, 1] * x * y + inv[1, 1] * y * y
        return np.exp(logc - 0.5 * (nu + 2) * np.log1p(q / nu))

    ext = abs(stdtrit(nu, 1e-12)) * np.sqrt(np.diag(sigma))
    if side == "upper":
        x_lo, x_hi = -ext[0], min(bound[0], ext[0])
        y_lo, y_hi = -ext[1], min(bound[1], ext[1])
    else:
        x_lo, x_hi = max(bound[0], -ext[0]), ext[0]
        y_lo, y_hi = max(bound[1], -ext[1]), ext[1]
    opts = dict(epsabs=1e-12, epsrel=1e-10)

    def integral(f):
        return integrate.dblquad(lambda y, x: f(x, y) * dens(x, y),
                                 x_lo, x_hi, y_lo, y_hi, **opts)[0]

    c = integral(lambda x, y: 1.0)
    mean = np.array([integral(lambda x, y: x), integral(lambda x, y: y)]) / c
    sec = np.array([[integral(lambda x, y: x * x), integral(lambda x, y: x * y)],
                    [0.0, integral(lambda x, y: y * y)]])
    sec[1, 0] = sec[0, 1]
    return c, mean, sec / c


def sample_trunc_moments(bound, sigma, nu, side, n_accept, seed):
    """(prob, mean, second, se_mean, se_second) by rejection sampling."""
    rng = np.random.default_rng(seed)
    p = len(bound)
    mt = multivariate_t(loc=np.zeros(p), shape=sigma, df=nu, seed=rng)
    kept = []
    total = 0
    accepted = 0
    while accepted < n_accept:
        X = np.asarray(mt.rvs(500_000))
        total += X.shape[0]
        mask = (X <= bound).all(axis=1) if side == "upper" else (X >= bound).all(axis=1)
        block = X[mask]
        accepted += block.shape[0]
        kept.append(block)
    X = np.vstack(kept)[:n_accept]
    prob = accepted / total
    mean = X.mean(axis=0)
    se_mean = X.std(axis=0, ddof=1) / np.sqrt(n_accept)
    outer = np.einsum("ni,nj->nij", X, X)
    second = outer.mean(axis=0)
    se_second = outer.std(axis=0, ddof=1) / np.sqrt(n_accept)
    return prob, mean, second, se_mean, se_second


def gibbs_oracle(Y, params, n_chains=8, draws_per_chain=20_000, seed=0):
    """Independent-chain Gibbs estimates with standard errors.

    Returns ((e1, e2, e3, e4) means, same-shape standard errors); each array
    has a leading axis over the rows of Y.
    """
    from skewtmix.mc_estep import _gibbs_estep_batch
    chains = [_gibbs_estep_batch(Y, params, draws_per_chain,
                                 max(500, draws_per_chain // 20), seed + 97 * k)
              for k in range(n_chains)]
    means, ses = [], []
    for part in range(4):
        stack = np.stack([c[part] for c in chains])
        means.append(stack.mean(axis=0))
        ses.append(stack.std(axis=0, ddof=1) / np.sqrt(n_chains))
    return means, ses


def _truncnorm_pos(rng, mean, std):
    from scipy.special import ndtr, ndtri
    a = -mean / std
    surv = ndtr(-a)
    v = rng.random(mean.shape)
    target = np.clip((1.0 - v) * surv, 1e-300, 1.0)
    z = -ndtri(target)
    deep = surv <= 1e-300
    if np.any(deep):
        z = np.where(deep, a - np.log1p(-v) / np.maximum(a, 1.0), z)
    return mean + std * z


def gibbs_oracle_instances(instances, n_chains=500, draws=2000, burn=200,
                           seed=0):
    """Latent-conditional Gibbs oracle over many (y, params) instances.

    ``instances`` is a list of (y, SkewTParams) pairs with one common p.
    Runs ``n_chains`` independent chains per instance, all vectorized
    together, and returns per-instance (means, standard errors) for
    (e1, e2, e3, e4): a total of n_chains * draws retained draws each.
    """
    n = len(instances)
    p = instances[0][1].dim
    q = np.empty((n, p))
    d = np.empty(n)
    linv = np.empty((n, p, p))
    nu = np.empty(n)
    for i, (y, pars) in enumerate(instances):
        Delta = np.diag(pars.delta)
        omega = pars.sigma + Delta @ Delta.T
        oinv = np.linalg.inv(omega)
        lam = np.eye(p) - Delta.T @ oinv @ Delta
        dev = np.asarray(y, float) - pars.mu
        q[i] = Delta.T @ oinv @ dev
        d[i] = dev @ oinv @ dev
        linv[i] = np.linalg.inv(0.5 * (lam + lam.T))
        nu[i] = pars.nu
    K = n_chains
    rep = np.repeat(np.arange(n), K)
    qr, dr, nur = q[rep], d[rep], nu[rep]
    linv_r = linv[rep]
    rng = np.random.default_rng(seed)
    u = np.maximum(qr, 0.1)
    w = np.ones(n * K)
    shape = 0.5 * (nur + 2.0 * p)
    s1 = np.zeros(n * K)
    s2 = np.zeros(n * K)
    s3 = np.zeros((n * K, p))
    s4 = np.zeros((n * K, p, p))
    for it in range(draws + burn):
        for i in range(p):
            rest = [j for j in range(p) if j != i]
            if rest:
                cond = np.einsum("nj,nj->n", linv_r[:, i, rest],
                                 u[:, rest] - qr[:, rest]) / linv_r[:, i, i]
            else:
                cond = 0.0
            m_i = qr[:, i] - cond
            s_i = 1.0 / np.sqrt(w * linv_r[:, i, i])
            u[:, i] = _truncnorm_pos(rng, m_i, s_i)
        dev = u - qr
        quad = np.einsum("ni,nij,nj->n", dev, linv_r, dev)
        w = rng.gamma(shape) / (0.5 * (nur + dr + quad))
        if it >= burn:
            s1 += np.log(w)
            s2 += w
            s3 += w[:, None] * u
            s4 += w[:, None, None] * np.einsum("ni,nj->nij", u, u)
    outs = []
    for s, extra in ((s1, ()), (s2, ()), (s3, (p,)), (s4, (p, p))):
        per_chain = (s / draws).reshape((n, K) + extra)
        outs.append((per_chain.mean(axis=1),
                     per_chain.std(axis=1, ddof=1) / np.sqrt(K)))
    return outs


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
