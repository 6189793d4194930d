"""First and second moments of the multivariate t distribution truncated to
an axis-aligned one-sided region.

The moments reduce to non-truncated t CDF evaluations: the region
probability, one (p-1)-dimensional CDF per coordinate for the first moment,
one (p-2)-dimensional CDF per coordinate pair plus a p-dimensional CDF at
reduced degrees of freedom for the second moment.  Lower-tail regions
(x >= bound) are evaluated by reflecting through the origin and running the
identical upper-tail code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .tdist import MvtParams, t_cdf_batch

__all__ = ["TruncatedTSpec", "TruncatedMoments", "TruncationUnderflowError",
           "trunc_t_prob", "trunc_t_mean", "trunc_t_second_moment",
           "orthant_t_moments"]

_PROB_FLOOR = 1e-300


class TruncationUnderflowError(ValueError):
    """The truncation region has numerically vanishing probability."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows if rows is not None else []


@dataclass
class TruncatedTSpec:
    """A t variate together with a one-sided axis-aligned truncation region.

    Parameters
    ----------
    base : MvtParams
        The non-truncated t distribution.
    bound : array_like of shape (p,)
        Region boundary; entries may be +-inf.
    side : {"upper", "lower"}
        "upper" keeps x <= bound componentwise, "lower" keeps x >= bound.
    """

    base: MvtParams
    bound: np.ndarray
    side: str = "upper"

    def __post_init__(self):
        self.bound = np.asarray(self.bound, dtype=float)
        if self.bound.shape != (self.base.dim,):
            raise ValueError(
                f"bound has shape {self.bound.shape}, expected ({self.base.dim},)")
        if self.side not in ("upper", "lower"):
            raise ValueError("side must be 'upper' or 'lower'")


@dataclass
class TruncatedMoments:
    """Region probability with conditional first and second moments."""

    prob: float
    mean: np.ndarray
    second: np.ndarray


# ---------------------------------------------------------------------------
# centered upper-tail core (shared scale matrix, per-row bounds)
# ---------------------------------------------------------------------------

def _xi_vectors(ahat, sigma, nu, abs_tol, qmc_seed, plan):
    """Boundary-face terms of the first moment: (n, p) array.

    Row j, entry i carries the i-th face integral for the region x <= ahat_j
    of a centered t_nu(0, sigma); entries with infinite bounds are zero.
    """
    n, p = ahat.shape
    xi = np.zeros((n, p))
    lgr = np.exp(gammaln(0.5 * (nu - 1.0)) - gammaln(0.5 * nu))
    for i in range(p):
        sii = sigma[i, i]
        rest = [j for j in range(p) if j != i]
        fin = np.isfinite(ahat[:, i])
        ai = np.where(fin, ahat[:, i], 0.0)
        beta = ai * ai / sii
        pref = ((2.0 * np.pi * sii) ** -0.5 * np.sqrt(0.5 * nu) * lgr
                * np.exp(-0.5 * (nu - 1.0) * np.log1p(beta / nu)))
        if p > 1:
            astar = ahat[:, rest] - ai[:, None] * (sigma[rest, i] / sii)[None, :]
            vi = sigma[np.ix_(rest, rest)] - np.outer(sigma[rest, i], sigma[rest, i]) / sii
            srow = np.sqrt((nu + beta) / (nu - 1.0))
            tvals, _ = t_cdf_batch(astar / srow[:, None], vi, nu - 1.0,
                                   abs_tol, qmc_seed, plan)
        else:
            tvals = np.ones(n)
        xi[:, i] = np.where(fin, pref * tvals, 0.0)
    return xi


def _h_matrix(ahat, sigma, nu, xi, abs_tol, qmc_seed, plan):
    """Boundary matrix of the second moment: (n, p, p)."""
    n, p = ahat.shape
    H = np.zeros((n, p, p))
    for i in range(p):
        for j in range(i + 1, p):
            det2 = sigma[i, i] * sigma[j, j] - sigma[i, j] ** 2
            sij_inv = np.array([[sigma[j, j], -sigma[i, j]],
                                [-sigma[i, j], sigma[i, i]]]) / det2
            rest = [k for k in range(p) if k not in (i, j)]
            fin = np.isfinite(ahat[:, [i, j]]).all(axis=1)
            apair = np.where(fin[:, None], ahat[:, [i, j]], 0.0)
            nustar = nu + np.einsum("nk,kl,nl->n", apair, sij_inv, apair)
            if rest:
                spair = sigma[np.ix_(rest, [i, j])]
                coef = spair @ sij_inv
                astar2 = ahat[:, rest] - apair @ coef.T
                vij = sigma[np.ix_(rest, rest)] - coef @ spair.T
                srow = np.sqrt(nustar / (nu - 2.0))
                tvals, _ = t_cdf_batch(astar2 / srow[:, None], vij, nu - 2.0,
                                       abs_tol, qmc_seed, plan)
            else:
                tvals = np.ones(n)
            val = (-(1.0 / (2.0 * np.pi * np.sqrt(det2))) * (nu / (nu - 2.0))
                   * np.exp((0.5 * nu - 1.0) * (np.log(nu) - np.log(nustar)))
                   * tvals)
            val = np.where(fin, val, 0.0)
            H[:, i, j] = H[:, j, i] = val
    for i in range(p):
        fin = np.isfinite(ahat[:, i])
        acc = np.where(fin, ahat[:, i], 0.0) * xi[:, i]
        for j in range(p):
            if j != i:
                acc = acc - sigma[i, j] * H[:, i, j]
        H[:, i, i] = acc / sigma[i, i]
    return H


def _centered_upper_moments(ahat, sigma, nu, *, abs_tol=1e-6, qmc_seed=0,
                            plan=None, g_vals=None, want_mean=True,
                            want_second=True):
    """Moments of X ~ t_nu(0, sigma) conditioned on X <= ahat (per row).

    Returns (prob, cond_mean, cond_second); the moment entries are None when
    not requested.  ``g_vals`` optionally injects the reduced-dof CDF
    T_{nu-2}(ahat * sqrt((nu-2)/nu); 0, sigma) when the caller already has it.
    """
    ahat = np.atleast_2d(np.asarray(ahat, dtype=float))
    n, p = ahat.shape
    prob, _ = t_cdf_batch(ahat, sigma, nu, abs_tol, qmc_seed, plan)
    bad = np.nonzero(prob < _PROB_FLOOR)[0]
    if bad.size:
        raise TruncationUnderflowError(
            f"truncation region probability underflow in rows {bad.tolist()}",
            rows=bad.tolist())
    mean = second = None
    if want_mean or want_second:
        if nu <= 1.0 + 1e-12:
            raise ValueError("first moment requires dof > 1")
        xi = _xi_vectors(ahat, sigma, nu, abs_tol, qmc_seed, plan)
        mean = -(xi @ sigma.T) / prob[:, None]
    if want_second:
        if nu <= 2.0 + 1e-12:
            raise ValueError("second moment requires dof > 2")
        if g_vals is None:
            g_vals, _ = t_cdf_batch(ahat * np.sqrt((nu - 2.0) / nu), sigma,
                                    nu - 2.0, abs_tol, qmc_seed, plan)
        H = _h_matrix(ahat, sigma, nu, xi, abs_tol, qmc_seed, plan)
        raw = (nu / (nu - 2.0)) * g_vals[:, None, None] * sigma[None, :, :] \
            - np.einsum("ab,nbc,cd->nad", sigma, H, sigma)
        second = raw / prob[:, None, None]
        second = 0.5 * (second + np.swapaxes(second, 1, 2))
    return prob, mean, second


def orthant_moments_batch(q_rows, sigma, nu, row_scales=None, *, abs_tol=1e-6,
                          qmc_seed=0, plan=None, g_vals=None):
    """Moments of X_j ~ t_nu(q_j, s_j * sigma) conditioned on X_j >= 0.

    ``q_rows``: (n, p) locations; ``row_scales``: optional (n,) positive
    scalars s_j.  Returns (prob, mean, second) with shapes (n,), (n, p),
    (n, p, p).  This is the reflected upper-tail problem with bound q_j and
    the per-row scalar absorbed into the standardized bounds.
    """
    q_rows = np.atleast_2d(np.asarray(q_rows, dtype=float))
    n, p = q_rows.shape
    s = np.ones(n) if row_scales is None else np.asarray(row_scales, dtype=float)
    rt = np.sqrt(s)
    ahat = q_rows / rt[:, None]
    prob, cmean, csec = _centered_upper_moments(
        ahat, sigma, nu, abs_tol=abs_tol, qmc_seed=qmc_seed, plan=plan,
        g_vals=g_vals)
    # reflected: upper-tail location -q, bound 0; undo the reflection
    mean = q_rows - rt[:, None] * cmean
    qm = np.einsum("ni,nj->nij", q_rows, rt[:, None] * cmean)
    second = (np.einsum("ni,nj->nij", q_rows, q_rows) - qm
              - np.swapaxes(qm, 1, 2) + s[:, None, None] * csec)
    return prob, mean, second


# ---------------------------------------------------------------------------
# public single-region operations
# ---------------------------------------------------------------------------

def _reflected(spec: TruncatedTSpec):
    """Map a spec onto the equivalent upper-tail problem."""
    if spec.side == "upper":
        return spec.base.location, spec.base.scale, spec.bound, False
    return -spec.base.location, spec.base.scale, -spec.bound, True


def trunc_t_prob(spec: TruncatedTSpec, abs_tol: float = 1e-6,
                 qmc_seed: int = 0) -> float:
    """Probability of the truncation region under the base distribution."""
    loc, scale, bound, _ = _reflected(spec)
    vals, _ = t_cdf_batch((bound - loc)[None, :], scale, spec.base.dof,
                          abs_tol, qmc_seed)
    prob = float(vals[0])
    if prob < _PROB_FLOOR:
        raise TruncationUnderflowError("truncation region probability underflow")
    return prob


def trunc_t_mean(spec: TruncatedTSpec, abs_tol: float = 1e-6,
                 qmc_seed: int = 0) -> np.ndarray:
    """Conditional mean E(X | X in region); requires dof > 1."""
    loc, scale, bound, reflected = _reflected(spec)
    _, cmean, _ = _centered_upper_moments(
        (bound - loc)[None, :], scale, spec.base.dof, abs_tol=abs_tol,
        qmc_seed=qmc_seed, want_second=False)
    mean = loc + cmean[0]
    return -mean if reflected else mean


def trunc_t_second_moment(spec: TruncatedTSpec, abs_tol: float = 1e-6,
                          qmc_seed: int = 0) -> np.ndarray:
    """Conditional second moment E(X X^T | X in region); requires dof > 2."""
    loc, scale, bound, _ = _reflected(spec)
    _, cmean, csec = _centered_upper_moments(
        (bound - loc)[None, :], scale, spec.base.dof, abs_tol=abs_tol,
        qmc_seed=qmc_seed)
    lm = np.outer(loc, cmean[0])
    # E[XX^T] is invariant under the reflection X -> -X
    return np.outer(loc, loc) + lm + lm.T + csec[0]


def orthant_t_moments(q, scale, dof, abs_tol: float = 1e-6,
                      qmc_seed: int = 0) -> TruncatedMoments:
    """Moments of a t variate with location ``q`` truncated to x >= 0.

    This is the positive-orthant case consumed by the conditional
    expectations of the fitting algorithm.
    """
    q = np.asarray(q, dtype=float)
    prob, mean, second = orthant_moments_batch(
        q[None, :], np.asarray(scale, dtype=float), float(dof),
        abs_tol=abs_tol, qmc_seed=qmc_seed)
    return TruncatedMoments(float(prob[0]), mean[0], second[0])
