"""The unrestricted multivariate skew-t distribution: density, simulation,
the restricted variant's density, and single-component ECM fitting.

The E-step evaluates four conditional expectations per observation.  All of
them reduce to moments of a positive-orthant-truncated t variate and to
multivariate t CDF values sharing one scale matrix across observations, so
the whole E-step runs as a handful of batched CDF calls.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import brentq
from scipy.special import gammaincinv, gammaln, ndtr, ndtri, stdtr

from . import _lattice
from .tdist import MvtParams, QmcPlan, digamma, mvt_logpdf, spd_cholesky, t_cdf_batch
from .truncmoments import orthant_moments_batch

__all__ = ["SkewTParams", "EStepQuantities", "SingleFitResult", "EStepUnderflowError",
           "mst_pdf", "mst_logpdf", "rmst_pdf", "mst_sample", "estep_single",
           "s1_integral", "mstep_single", "fit_mst"]

NU_MIN = 0.5
NU_MAX = 200.0


class EStepUnderflowError(ValueError):
    """A CDF ratio denominator underflowed for some observations."""

    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = rows


@dataclass
class SkewTParams:
    """Parameters of one unrestricted multivariate skew-t component.

    Parameters
    ----------
    mu : array_like of shape (p,)
        Location vector.
    sigma : array_like of shape (p, p)
        Positive-definite scale matrix.
    delta : array_like of shape (p,)
        Skewness vector.
    nu : float
        Degrees of freedom, strictly positive.
    """

    mu: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    nu: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        self.nu = float(self.nu)
        p = self.mu.shape[0] if self.mu.ndim == 1 else -1
        if self.mu.ndim != 1 or self.delta.shape != (p,) or self.sigma.shape != (p, p):
            raise ValueError("inconsistent parameter dimensions")
        if np.max(np.abs(self.sigma - self.sigma.T)) > 1e-10 * max(1.0, np.abs(self.sigma).max()):
            raise ValueError("sigma must be symmetric")
        if self.nu <= 0:
            raise ValueError("nu must be positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


class _Derived:
    """Cached matrices shared by density and E-step: Omega, its Cholesky,
    and the skew-factor scale Lambda = I - D' Omega^-1 D."""

    def __init__(self, params: SkewTParams):
        p = params.dim
        self.Delta = np.diag(params.delta)
        self.Omega = params.sigma + self.Delta @ self.Delta.T
        self.omega_chol = spd_cholesky(self.Omega)
        self.omega_inv = cho_solve((self.omega_chol, True), np.eye(p))
        lam = np.eye(p) - self.Delta.T @ self.omega_inv @ self.Delta
        self.Lambda = 0.5 * (lam + lam.T)
        self.logdet_omega = 2.0 * np.sum(np.log(np.diag(self.omega_chol)))


@dataclass
class EStepQuantities:
    """Conditional expectations of (log W, W, W U, W U U^T) given one y."""

    e1: float
    e2: float
    e3: np.ndarray
    e4: np.ndarray


@dataclass
class SingleFitResult:
    """Outcome of a single-component fit."""

    params: SkewTParams
    loglik_trace: np.ndarray
    converged: bool
    iterations: int


class QmcEstimate(NamedTuple):
    value: float
    stderr: float


# ---------------------------------------------------------------------------
# densities and sampling
# ---------------------------------------------------------------------------

def _core_geometry(Y, params: SkewTParams, der: _Derived):
    """Per-observation q = D'Om^-1(y-mu) and d = (y-mu)'Om^-1(y-mu)."""
    dev = Y - params.mu[None, :]
    u = solve_triangular(der.omega_chol, dev.T, lower=True).T
    d = np.einsum("ni,ni->n", u, u)
    q = dev @ der.omega_inv @ der.Delta
    return q, d


def mst_logpdf(y, params: SkewTParams, abs_tol: float = 1e-6, qmc_seed: int = 0):
    """Log density of the unrestricted multivariate skew-t distribution."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    p = params.dim
    der = _Derived(params)
    q, d = _core_geometry(Y, params, der)
    nu = params.nu
    tpart = mvt_logpdf(Y, MvtParams(params.mu, der.Omega, nu))
    ystar = q * np.sqrt((nu + p) / (nu + d))[:, None]
    cdf, _ = t_cdf_batch(ystar, der.Lambda, nu + p, abs_tol, qmc_seed)
    out = p * np.log(2.0) + tpart + np.log(np.clip(cdf, 1e-300, None))
    return float(out[0]) if single else out


def mst_pdf(y, params: SkewTParams, abs_tol: float = 1e-6, qmc_seed: int = 0):
    """Density of the unrestricted multivariate skew-t distribution."""
    return np.exp(mst_logpdf(y, params, abs_tol, qmc_seed))


def rmst_pdf(y, params: SkewTParams, abs_tol: float = 1e-6, qmc_seed: int = 0):
    """Density of the restricted multivariate skew-t variant.

    The skewing factor is a univariate Student CDF:
    2 t_{p,nu}(y; mu, Sigma + delta delta') T_{1,nu+p}(y1*; 0, 1), where y1*
    standardizes delta' Omega^-1 (y - mu) by sqrt((nu+p)/(nu+d(y))) and by
    the conditional scale 1 - delta' Omega^-1 delta.  This normalized form
    coincides with the unrestricted density when p = 1.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    p = params.dim
    nu = params.nu
    omega = params.sigma + np.outer(params.delta, params.delta)
    mp = MvtParams(params.mu, omega, nu)
    L = mp.chol
    dev = Y - params.mu[None, :]
    u = solve_triangular(L, dev.T, lower=True).T
    d = np.einsum("ni,ni->n", u, u)
    oi_delta = cho_solve((L, True), params.delta)
    qr = dev @ oi_delta
    lam = 1.0 - params.delta @ oi_delta
    lam = max(lam, 1e-14)
    ystar = qr * np.sqrt((nu + p) / (nu + d) / lam)
    out = np.log(2.0) + mvt_logpdf(Y, mp) + np.log(np.clip(stdtr(nu + p, ystar), 1e-300, None))
    out = np.exp(out)
    return float(out[0]) if single else out


def mst_sample(params: SkewTParams, n: int, seed: int = 0) -> np.ndarray:
    """Draw n rows from the skew-t distribution via its mixing representation.

    w ~ gamma(nu/2, nu/2); given w, the skew part is diag(delta) |U| with
    U ~ N(0, I/w) and the symmetric part is N(mu, Sigma/w).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = params.dim
    rng = np.random.default_rng(seed)
    w = rng.gamma(0.5 * params.nu, 2.0 / params.nu, size=n)
    scale = 1.0 / np.sqrt(w)
    U = np.abs(rng.standard_normal((n, p))) * scale[:, None]
    L = spd_cholesky(params.sigma)
    U0 = params.mu[None, :] + (rng.standard_normal((n, p)) @ L.T) * scale[:, None]
    return U * params.delta[None, :] + U0


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def _sov_log_weighted(uppers, sigma, m_dof, abs_tol=1e-7, qmc_seed=0,
                      plan=None, n_shifts=10, max_rows_per_chunk=None):
    """QMC estimates of (E[ind * log1p(z'z/(s^2 m))], E[ind]) per row.

    ``ind`` is the indicator of S <= uppers for S ~ t_m(0, sigma).  Unlike
    the plain CDF transform this samples every coordinate, so it uses p+1
    lattice dimensions.  Returns (weighted, cdf, stderr_weighted).
    """
    uppers = np.atleast_2d(uppers)
    n, p = uppers.shape
    C = spd_cholesky(sigma)
    sizes = [N for N in _lattice.LATTICE_SIZES if N >= 1021]
    key = ("w", p)
    if plan is not None and key in plan.sizes:
        sizes = [plan.sizes[key]]
    rng = np.random.default_rng(qmc_seed)
    out = None
    for N in sizes:
        rng_n = np.random.default_rng(rng.integers(2 ** 63))
        shifts = rng_n.random((n_shifts, p + 1))
        chunk = max_rows_per_chunk or max(1, int(3e7 // (N * max(p, 1))))
        acc_w = np.empty((n_shifts, n))
        acc_c = np.empty((n_shifts, n))
        for k in range(n_shifts):
            pts = _lattice.shifted_lattice(N, p + 1, shifts[k])
            s = np.sqrt(2.0 * gammaincinv(
                0.5 * m_dof, np.clip(pts[:, 0], 1e-16, 1.0 - 1e-16)) / m_dof)
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                up = uppers[lo:hi]
                f = np.ones((N, hi - lo))
                zsq = np.zeros((N, hi - lo))
                y = np.zeros((N, hi - lo, p))
                for i in range(p):
                    mrow = s[:, None] * up[None, :, i]
                    if i > 0:
                        mrow = mrow - np.einsum("Nnj,j->Nn", y[:, :, :i], C[i, :i])
                    e = ndtr(mrow / C[i, i])
                    z = np.clip(e * pts[:, i + 1][:, None], 1e-16, 1.0 - 1e-16)
                    y[:, :, i] = ndtri(z)
                    zsq += y[:, :, i] ** 2
                    f *= e
                lw = np.log1p(zsq / (s[:, None] ** 2 * m_dof))
                acc_w[k, lo:hi] = (f * lw).mean(axis=0)
                acc_c[k, lo:hi] = f.mean(axis=0)
        se = 3.0 * acc_w.std(axis=0, ddof=1) / np.sqrt(n_shifts)
        out = (acc_w.mean(axis=0), acc_c.mean(axis=0), se)
        if se.max() <= abs_tol:
            break
    if plan is not None:
        plan.sizes.setdefault(key, N)
    return out


def s1_integral(q, lam, nu, d, qmc_seed: int = 0,
                abs_tol: float = 1e-7) -> QmcEstimate:
    """Randomized-QMC value of the log-weighted semi-infinite integral used
    by the exact first conditional expectation.

    Parameters
    ----------
    q : array_like of shape (p,)
        Upper integration limits.
    lam : array_like of shape (p, p)
        Positive-definite matrix of the integrand's quadratic form.
    nu, d : float
        Degrees of freedom and squared Mahalanobis distance of the
        observation; the integrand decays with exponent nu/2 + p.

    Returns
    -------
    QmcEstimate
        ``value`` and its reported standard error (already the 3-sigma bound).
    """
    q = np.asarray(q, dtype=float)
    lam = np.asarray(lam, dtype=float)
    p = q.shape[0]
    m = nu + p
    ystar = q * np.sqrt(m / (nu + d))
    w, _, se = _sov_log_weighted(ystar[None, :], lam, m, abs_tol, qmc_seed)
    # integral of the raw kernel = weighted expectation / density constant
    logc = (gammaln(0.5 * nu + p) - gammaln(0.5 * m)
            - 0.5 * p * np.log(np.pi * (nu + d))
            - np.sum(np.log(np.diag(spd_cholesky(lam)))))
    c = np.exp(logc)
    return QmcEstimate(float(w[0] / c), float(se[0] / c))


def _estep_batch(Y, params: SkewTParams, *, e1_mode="osl", abs_tol=1e-6,
                 qmc_seed=0, plan=None, der=None):
    """Vectorized E-step for all rows of Y under one parameter set.

    Returns (e1, e2, e3, e4, logpdf) arrays.  ``logpdf`` reuses the CDF
    values already needed by the expectations, so mixture responsibilities
    and the observed log-likelihood come at no extra cost.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, p = Y.shape
    nu = params.nu
    der = der or _Derived(params)
    q, d = _core_geometry(Y, params, der)
    ystar = q * np.sqrt((nu + p) / (nu + d))[:, None]
    denom, _ = t_cdf_batch(ystar, der.Lambda, nu + p, abs_tol, qmc_seed, plan)
    bad = np.nonzero(denom < 1e-280)[0]
    if bad.size:
        raise EStepUnderflowError(
            f"skew-factor CDF underflow at observations {bad.tolist()}",
            rows=bad.tolist())
    scales = (nu + d) / (nu + p + 2.0)
    prob, mean_o, sec_o = orthant_moments_batch(
        q, der.Lambda, nu + p + 2.0, scales, abs_tol=abs_tol,
        qmc_seed=qmc_seed, plan=plan, g_vals=denom)
    e2 = (nu + p) / (nu + d) * prob / denom
    e3 = np.maximum(e2[:, None] * mean_o, 0.0)
    e4 = e2[:, None, None] * sec_o
    if e1_mode == "osl":
        e1 = (e2 - np.log(0.5 * (nu + d)) - (nu + p) / (nu + d)
              + digamma(0.5 * (nu + p)))
    elif e1_mode == "exact":
        # the log-weight integral tolerates a looser bound than the CDFs:
        # it only feeds the dof update and the dof score
        w, c, _ = _sov_log_weighted(ystar, der.Lambda, nu + p,
                                    abs_tol=max(10.0 * abs_tol, 1e-6),
                                    qmc_seed=qmc_seed, plan=plan)
        e1 = digamma(0.5 * nu + p) - np.log(0.5 * (nu + d)) - w / denom
    else:
        raise ValueError("e1_mode must be 'osl' or 'exact'")
    # observed log density, sharing the skew-factor CDF
    logc = (gammaln(0.5 * (nu + p)) - gammaln(0.5 * nu)
            - 0.5 * p * np.log(nu * np.pi) - 0.5 * der.logdet_omega)
    logpdf = (p * np.log(2.0) + logc - 0.5 * (nu + p) * np.log1p(d / nu)
              + np.log(denom))
    return e1, e2, e3, e4, logpdf


def estep_single(y, params: SkewTParams, e1_mode: str = "osl",
                 abs_tol: float = 1e-6, qmc_seed: int = 0) -> EStepQuantities:
    """Conditional expectations (e1, e2, e3, e4) for one observation.

    ``e1_mode`` selects the one-step-late form ('osl', default) or the exact
    form including the log-weighted integral ('exact').
    """
    y = np.asarray(y, dtype=float)
    e1, e2, e3, e4, _ = _estep_batch(y[None, :], params, e1_mode=e1_mode,
                                     abs_tol=abs_tol, qmc_seed=qmc_seed)
    return EStepQuantities(float(e1[0]), float(e2[0]), e3[0], e4[0])


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def floor_spd(matrix: np.ndarray, rel_floor: float = 1e-10) -> np.ndarray:
    """Symmetrize and floor eigenvalues at rel_floor * trace / p."""
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    floor = rel_floor * max(np.trace(sym), 1e-30) / sym.shape[0]
    if vals[0] >= floor:
        return sym
    vals = np.maximum(vals, floor)
    return (vecs * vals[None, :]) @ vecs.T


def solve_nu(rhs: float, bracket=(NU_MIN, NU_MAX)) -> float:
    """Solve log(nu/2) - psi(nu/2) + 1 = rhs, clamped to the bracket."""
    lo, hi = bracket

    def g(nu):
        return np.log(0.5 * nu) - digamma(0.5 * nu) + 1.0 - rhs

    if g(hi) >= 0.0:
        return hi
    if g(lo) <= 0.0:
        return lo
    return float(brentq(g, lo, hi, xtol=1e-10))


def weighted_mstep(Y, tau, e1, e2, e3, e4, prev: SkewTParams,
                   update_nu: bool = True) -> SkewTParams:
    """One set of conditional maximizations with responsibilities ``tau``.

    Location, skewness and scale have closed forms; the degrees of freedom
    solve a scalar equation bracketed on [0.5, 200].
    """
    Y = np.atleast_2d(Y)
    n, p = Y.shape
    tw = tau
    sum_tau = tw.sum()
    sum_te2 = (tw * e2).sum()
    Delta_prev = np.diag(prev.delta)
    mu = ((tw * e2)[:, None] * Y - (tw[:, None] * e3) @ Delta_prev).sum(axis=0) / sum_te2
    dev = Y - mu[None, :]
    sig_inv = np.linalg.inv(prev.sigma)
    lhs = sig_inv * np.einsum("n,nij->ij", tw, e4)
    rhs = np.einsum("ij,nj,ni->i", sig_inv, dev, tw[:, None] * e3)
    try:
        delta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("singular skewness system; keeping previous delta")
        delta = prev.delta.copy()
    Delta = np.diag(delta)
    S = (np.einsum("n,nij->ij", tw, Delta @ e4 @ Delta)
         - np.einsum("ni,nj->ij", dev, (tw[:, None] * e3) @ Delta)
         - np.einsum("ni,nj->ij", (tw[:, None] * e3) @ Delta, dev)
         + np.einsum("n,ni,nj->ij", tw * e2, dev, dev)) / sum_tau
    sigma = floor_spd(S)
    if update_nu:
        nu = solve_nu(float((tw * (e2 - e1)).sum() / sum_tau))
    else:
        nu = prev.nu
    return SkewTParams(mu, sigma, delta, nu)


def mstep_single(data, E, prev: SkewTParams) -> SkewTParams:
    """Closed-form parameter updates from per-observation expectations.

    ``E`` is a sequence of EStepQuantities aligned with the rows of ``data``.
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    e1 = np.array([q.e1 for q in E])
    e2 = np.array([q.e2 for q in E])
    e3 = np.stack([q.e3 for q in E])
    e4 = np.stack([q.e4 for q in E])
    return weighted_mstep(Y, np.ones(len(Y)), e1, e2, e3, e4, prev)


def moment_init(Y, nu_init: float = 40.0) -> SkewTParams:
    """Method-of-moments starting point for one component.

    The skewness starts at half a standard deviation with the sign of the
    sample third central moment; location and scale are then adjusted so the
    implied first two moments match the sample ones.
    """
    Y = np.atleast_2d(Y)
    n, p = Y.shape
    mean = Y.mean(axis=0)
    cov = np.cov(Y.T, ddof=1) if n > 1 else np.eye(p)
    cov = np.atleast_2d(cov)
    cen = Y - mean[None, :]
    m3 = (cen ** 3).mean(axis=0)
    delta = np.sign(np.where(m3 == 0.0, 1.0, m3)) * np.sqrt(np.diag(cov)) / 2.0
    m1 = half_t_mean(nu_init)
    var1 = nu_init / (nu_init - 2.0) - m1 * m1
    mu = mean - m1 * delta
    sigma = floor_spd(cov - var1 * np.outer(delta, delta), rel_floor=1e-4)
    return SkewTParams(mu, sigma, delta, nu_init)


def half_t_mean(nu: float) -> float:
    """Mean of |T| for a standard Student t with nu > 1 degrees of freedom."""
    return float(2.0 * np.sqrt(nu) / ((nu - 1.0) * np.sqrt(np.pi))
                 * np.exp(gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu)))


def fit_mst(data, tol: float = 1e-6, max_iter: int = 1000,
            nu_init: float = 40.0, e1_mode: str = "osl",
            abs_tol: float = 1e-6, qmc_seed: int = 0,
            init_params: SkewTParams | None = None) -> SingleFitResult:
    """Fit one skew-t component by ECM.

    Iterates the exact E-step and the conditional maximizations until the
    relative log-likelihood change drops below ``tol``.  In OSL mode the
    observed log-likelihood is non-decreasing along the trace (up to 1e-6).
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    n, p = Y.shape
    if n <= p:
        raise ValueError("need more observations than dimensions")
    params = init_params if init_params is not None else moment_init(Y, nu_init)
    plan = QmcPlan()
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        e1, e2, e3, e4, logpdf = _estep_batch(
            Y, params, e1_mode=e1_mode, abs_tol=abs_tol, qmc_seed=qmc_seed,
            plan=plan)
        loglik = float(logpdf.sum())
        trace.append(loglik)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * (abs(trace[-2]) + 1.0):
            converged = True
            break
        params = weighted_mstep(Y, np.ones(n), e1, e2, e3, e4, params)
    return SingleFitResult(params, np.asarray(trace), converged, it)
