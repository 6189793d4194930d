"""Finite mixtures of unrestricted multivariate skew-t components: mixture
density, ECM fitting, posterior classification, the empirical information
matrix with standard errors, and AIC/BIC.
"""
from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .skewt import (EStepQuantities, _estep_batch, digamma, moment_init,
                    solve_nu, weighted_mstep)
from .tdist import QmcPlan

__all__ = ["SkewTMixtureModel", "FitConfig", "FitResult", "EmptyComponentError",
           "fm_mst_pdf", "fm_mst_logpdf", "posterior_tau", "estep_mixture",
           "mstep_mixture", "kmeans_init", "fit_fm_mst", "empirical_info",
           "classify", "error_rate", "n_free_parameters"]


class EmptyComponentError(RuntimeError):
    """A component's responsibility mass fell below the feasible minimum."""


@dataclass
class SkewTMixtureModel:
    """Mixing proportions plus per-component skew-t parameters."""

    weights: np.ndarray
    components: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or len(self.components) != self.weights.shape[0]:
            raise ValueError("weights and components do not match")
        if abs(self.weights.sum() - 1.0) > 1e-12 * max(1.0, len(self.components)):
            raise ValueError("weights must sum to 1")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be strictly positive")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("components must share one dimension")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass
class FitConfig:
    """Settings of the mixture fit.

    ``init`` selects k-means ("kmeans", seeded by ``seed``), user labels
    ("labels" with ``init_labels``) or an explicit starting model
    ("explicit" with ``init_model``).
    """

    g: int = 1
    tol: float = 1e-6
    max_iter: int = 1000
    init: str = "kmeans"
    init_labels: np.ndarray | None = None
    init_model: SkewTMixtureModel | None = None
    seed: int = 0
    nu_init: float = 40.0
    e1_mode: str = "osl"
    equal_nu: bool = False
    qmc_tol: float = 1e-6
    qmc_seed: int = 0
    threads: int = 1
    compute_std_errors: bool = True

    def __post_init__(self):
        if self.g < 1:
            raise ValueError("g must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.e1_mode not in ("osl", "exact"):
            raise ValueError("e1_mode must be 'osl' or 'exact'")
        if self.init not in ("kmeans", "labels", "explicit"):
            raise ValueError("init must be 'kmeans', 'labels' or 'explicit'")


@dataclass
class FitResult:
    """Everything the fit produced."""

    model: SkewTMixtureModel
    loglik_trace: np.ndarray
    tau: np.ndarray
    labels: np.ndarray
    aic: float
    bic: float
    std_errors: np.ndarray | None
    std_error_names: list | None
    iterations: int
    converged: bool

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


# ---------------------------------------------------------------------------
# density / responsibilities
# ---------------------------------------------------------------------------

def _component_logpdf_matrix(Y, model: SkewTMixtureModel, abs_tol=1e-6,
                             qmc_seed=0):
    from .skewt import mst_logpdf
    Y = np.atleast_2d(Y)
    out = np.empty((Y.shape[0], model.n_components))
    for h, comp in enumerate(model.components):
        out[:, h] = mst_logpdf(Y, comp, abs_tol, qmc_seed)
    return out


def fm_mst_logpdf(y, model: SkewTMixtureModel, abs_tol: float = 1e-6,
                  qmc_seed: int = 0):
    """Log of the mixture density, computed with log-sum-exp."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    lp = _component_logpdf_matrix(np.atleast_2d(y), model, abs_tol, qmc_seed)
    out = logsumexp(lp + np.log(model.weights)[None, :], axis=1)
    return float(out[0]) if single else out


def fm_mst_pdf(y, model: SkewTMixtureModel, abs_tol: float = 1e-6,
               qmc_seed: int = 0):
    """Mixture density sum_h pi_h f_h(y)."""
    return np.exp(fm_mst_logpdf(y, model, abs_tol, qmc_seed))


def posterior_tau(y, model: SkewTMixtureModel, abs_tol: float = 1e-6,
                  qmc_seed: int = 0):
    """Posterior membership probabilities for one observation (or rows)."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    lp = _component_logpdf_matrix(np.atleast_2d(y), model, abs_tol, qmc_seed)
    lw = lp + np.log(model.weights)[None, :]
    tau = np.exp(lw - logsumexp(lw, axis=1)[:, None])
    return tau[0] if single else tau


# ---------------------------------------------------------------------------
# E- and M-steps
# ---------------------------------------------------------------------------

def _component_estep(Y, comp, config: FitConfig, plan):
    return _estep_batch(Y, comp, e1_mode=config.e1_mode,
                        abs_tol=config.qmc_tol, qmc_seed=config.qmc_seed,
                        plan=plan)


def _estep_all(Y, model, config: FitConfig, plans):
    """Run the per-component E-step; returns (tau, quants, loglik).

    ``quants`` is a list of (e1, e2, e3, e4) arrays per component.  The
    observed log-likelihood is assembled from the same CDF evaluations.
    """
    g = model.n_components
    run = lambda h: _component_estep(Y, model.components[h], config, plans[h])
    if config.threads and config.threads > 1 and g > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run, range(g)))
    else:
        results = [run(h) for h in range(g)]
    logf = np.stack([r[4] for r in results], axis=1) + np.log(model.weights)[None, :]
    norm = logsumexp(logf, axis=1)
    tau = np.exp(logf - norm[:, None])
    quants = [r[:4] for r in results]
    return tau, quants, float(norm.sum())


def estep_mixture(data, model: SkewTMixtureModel, config: FitConfig):
    """Responsibilities and per-(component, observation) expectations.

    Returns ``(tau, quantities)`` where ``quantities[h][j]`` holds the
    EStepQuantities of observation j under component h.
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    plans = [QmcPlan() for _ in range(model.n_components)]
    tau, quants, _ = _estep_all(Y, model, config, plans)
    per_comp = []
    for e1, e2, e3, e4 in quants:
        per_comp.append([EStepQuantities(float(e1[j]), float(e2[j]), e3[j], e4[j])
                         for j in range(Y.shape[0])])
    return tau, per_comp


def mstep_mixture(data, tau, quants, prev_model: SkewTMixtureModel,
                  config: FitConfig) -> SkewTMixtureModel:
    """Weighted conditional maximizations for every component.

    ``quants`` holds per-component (e1, e2, e3, e4) arrays as produced by
    the internal E-step.  Raises EmptyComponentError when a component's
    responsibility mass drops below p + 1.
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    n, p = Y.shape
    g = prev_model.n_components
    mass = tau.sum(axis=0)
    empty = np.nonzero(mass < p + 1)[0]
    if empty.size:
        raise EmptyComponentError(
            f"components {empty.tolist()} have responsibility mass {mass[empty]} "
            f"< p+1 = {p + 1}; re-seed the initialization or reduce g")
    weights = mass / n
    comps = []
    for h in range(g):
        e1, e2, e3, e4 = quants[h]
        comps.append(weighted_mstep(Y, tau[:, h], e1, e2, e3, e4,
                                    prev_model.components[h],
                                    update_nu=not config.equal_nu))
    if config.equal_nu:
        tot = sum(float((tau[:, h] * (quants[h][1] - quants[h][0])).sum())
                  for h in range(g))
        nu = solve_nu(tot / n)
        comps = [replace(c, nu=nu) for c in comps]
    return SkewTMixtureModel(weights, comps)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def kmeans_init(data, g: int, seed: int = 0,
                nu_init: float = 40.0) -> SkewTMixtureModel:
    """Moment-based starting model from a single seeded k-means run.

    Each cluster contributes a component whose skewness starts at half a
    standard deviation with the sign of the sample third central moment;
    location and scale are adjusted so the component's implied first two
    moments match the cluster's.  Clusters smaller than p + 1 are merged
    into their nearest neighbour (reducing g, with a warning).
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    n, p = Y.shape
    if n < g:
        raise ValueError("need at least g observations")
    if g == 1:
        labels = np.zeros(n, dtype=int)
        centers = Y.mean(axis=0, keepdims=True)
    else:
        km = KMeans(n_clusters=g, init="k-means++", n_init=1, random_state=seed)
        labels = km.fit_predict(Y)
        centers = km.cluster_centers_
    counts = np.bincount(labels, minlength=g)
    while np.any(counts[np.unique(labels)] < p + 1) and len(np.unique(labels)) > 1:
        small = min((c for c in np.unique(labels) if counts[c] < p + 1),
                    key=lambda c: counts[c], default=None)
        if small is None:
            break
        others = [c for c in np.unique(labels) if c != small]
        dists = [np.linalg.norm(centers[small] - centers[c]) for c in others]
        target = others[int(np.argmin(dists))]
        warnings.warn(f"cluster {small} smaller than p+1; merging into {target}")
        labels[labels == small] = target
        counts = np.bincount(labels, minlength=g)
    kept = np.unique(labels)
    comps, weights = [], []
    for c in kept:
        block = Y[labels == c]
        comps.append(moment_init(block, nu_init))
        weights.append(block.shape[0] / n)
    return SkewTMixtureModel(np.asarray(weights), comps)


def _labels_init(Y, labels, g, nu_init):
    vals, labels = np.unique(np.asarray(labels).astype(int), return_inverse=True)
    if len(vals) != g:
        raise ValueError(f"init labels have {len(vals)} classes, expected g={g}")
    comps, weights = [], []
    for c in range(g):
        block = Y[labels == c]
        if block.shape[0] < Y.shape[1] + 1:
            raise ValueError(f"label class {c} has fewer than p+1 rows")
        comps.append(moment_init(block, nu_init))
        weights.append(block.shape[0] / Y.shape[0])
    return SkewTMixtureModel(np.asarray(weights), comps)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def n_free_parameters(g: int, p: int, equal_nu: bool = False) -> int:
    """Parameter count m entering AIC/BIC."""
    per_comp = 2 * p + p * (p + 1) // 2
    return (g - 1) + g * per_comp + (1 if equal_nu else g)


def fit_fm_mst(data, config: FitConfig) -> FitResult:
    """Fit the skew-t mixture by ECM from the configured initialization.

    The loop alternates the batched exact E-step with the closed-form
    conditional maximizations until the relative log-likelihood change falls
    below ``config.tol``.  AIC/BIC use m = (g-1) + g(2p + p(p+1)/2 + 1) free
    parameters (one fewer per extra component under ``equal_nu``).
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    n, p = Y.shape
    g = config.g
    if n <= g * (p + 1):
        raise ValueError("too few observations for the requested g")
    if config.init == "kmeans":
        model = kmeans_init(Y, g, config.seed, config.nu_init)
    elif config.init == "labels":
        model = _labels_init(Y, config.init_labels, g, config.nu_init)
    else:
        if config.init_model is None:
            raise ValueError("init='explicit' requires init_model")
        model = config.init_model
    g = model.n_components
    plans = [QmcPlan() for _ in range(g)]
    trace = []
    tau = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        tau, quants, loglik = _estep_all(Y, model, config, plans)
        trace.append(loglik)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tol * (abs(trace[-2]) + 1.0):
            converged = True
            break
        model = mstep_mixture(Y, tau, quants, model, config)
    labels = classify(tau)
    m = n_free_parameters(g, p, config.equal_nu)
    loglik = trace[-1]
    aic = 2.0 * m - 2.0 * loglik
    bic = m * np.log(n) - 2.0 * loglik
    std_errors = names = None
    if config.compute_std_errors:
        try:
            _, std_errors, names = _empirical_info_internal(
                Y, model, config.qmc_tol, config.qmc_seed)
        except Exception as exc:  # singular info matrix etc.
            warnings.warn(f"standard errors unavailable: {exc}")
    return FitResult(model, np.asarray(trace), tau, labels, float(aic),
                     float(bic), std_errors, names, it, converged)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def classify(tau) -> np.ndarray:
    """Maximum-posterior component labels (0-based)."""
    return np.asarray(tau).argmax(axis=1)


def error_rate(labels, truth) -> float:
    """Misclassification rate minimized over label permutations (g <= 9)."""
    labels = np.asarray(labels).astype(int).ravel()
    truth = np.asarray(truth).astype(int).ravel()
    if labels.shape != truth.shape:
        raise ValueError("label vectors differ in length")
    lab_vals = np.unique(labels)
    true_vals = np.unique(truth)
    g = max(len(lab_vals), len(true_vals))
    if g > 9:
        raise ValueError("permutation search supports at most 9 classes")
    lab_idx = np.searchsorted(lab_vals, labels)
    true_idx = np.searchsorted(true_vals, truth)
    best = labels.size + 1
    for perm in itertools.permutations(range(g)):
        wrong = np.count_nonzero(np.asarray(perm)[lab_idx] != true_idx)
        best = min(best, wrong)
    return best / labels.size


# ---------------------------------------------------------------------------
# empirical information matrix
# ---------------------------------------------------------------------------

def _vech_indices(p):
    return [(r, s) for r in range(p) for s in range(r, p)]


def _score_matrix(Y, model: SkewTMixtureModel, qmc_tol, qmc_seed):
    """Per-observation conditional score vectors, (n, m) plus block names.

    The expectations use the exact first conditional expectation so that the
    scores match derivatives of the observed log-likelihood.
    """
    Y = np.atleast_2d(Y)
    n, p = Y.shape
    g = model.n_components
    cfg = FitConfig(g=g, e1_mode="exact", qmc_tol=qmc_tol, qmc_seed=qmc_seed)
    plans = [QmcPlan() for _ in range(g)]
    tau, quants, _ = _estep_all(Y, model, cfg, plans)
    vech = _vech_indices(p)
    names = [f"pi_{h + 1}" for h in range(g - 1)]
    for h in range(g):
        names += [f"mu_{h + 1}[{i + 1}]" for i in range(p)]
        names += [f"delta_{h + 1}[{i + 1}]" for i in range(p)]
        names += [f"sigma_{h + 1}[{r + 1},{s + 1}]" for r, s in vech]
        names += [f"nu_{h + 1}"]
    cols = len(names)
    S = np.zeros((n, cols))
    # mixing-proportion block, contrast against the last component
    for h in range(g - 1):
        S[:, h] = tau[:, h] / model.weights[h] - tau[:, g - 1] / model.weights[g - 1]
    col = g - 1
    for h in range(g):
        comp = model.components[h]
        e1, e2, e3, e4 = quants[h]
        th = tau[:, h]
        dev = Y - comp.mu[None, :]
        sig_inv = np.linalg.inv(comp.sigma)
        Delta = np.diag(comp.delta)
        # location
        smu = (e2[:, None] * dev - e3 @ Delta) @ sig_inv.T
        S[:, col:col + p] = th[:, None] * smu
        col += p
        # skewness
        sdel = (np.einsum("ij,nj->ni", sig_inv, dev) * e3
                - np.einsum("ij,nij,j->ni", sig_inv, e4, comp.delta))
        S[:, col:col + p] = th[:, None] * sdel
        col += p
        # scale: 0.5 [Sinv R Sinv - Sinv] on distinct elements, off-diag doubled
        de3D = np.einsum("ni,j->nij", dev, comp.delta) * e3[:, None, :]
        R = (e2[:, None, None] * np.einsum("ni,nj->nij", dev, dev)
             - de3D - np.swapaxes(de3D, 1, 2)
             + np.einsum("i,nij,j->nij", comp.delta, e4, comp.delta))
        M = 0.5 * (np.einsum("ab,nbc,cd->nad", sig_inv, R, sig_inv)
                   - sig_inv[None, :, :])
        for k, (r, s) in enumerate(vech):
            S[:, col + k] = th * M[:, r, s] * (1.0 if r == s else 2.0)
        col += len(vech)
        # degrees of freedom
        S[:, col] = 0.5 * th * (np.log(0.5 * comp.nu) + 1.0
                                - digamma(0.5 * comp.nu) + e1 - e2)
        col += 1
    return S, names


def _empirical_info_internal(Y, model, qmc_tol, qmc_seed):
    S, names = _score_matrix(Y, model, qmc_tol, qmc_seed)
    info = S.T @ S
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        warnings.warn("singular empirical information; using pseudo-inverse")
        cov = np.linalg.pinv(info)
    diag = np.diag(cov).copy()
    if np.any(diag < 0):
        warnings.warn("negative variance estimates clipped to zero")
        diag = np.clip(diag, 0.0, None)
    return info, np.sqrt(diag), names


def empirical_info(data, model: SkewTMixtureModel, qmc_tol: float = 1e-6,
                   qmc_seed: int = 0):
    """Empirical information matrix and per-parameter standard errors.

    The matrix is the sum of outer products of per-observation conditional
    scores; its inverse approximates the covariance of the estimates.
    Returns ``(info_matrix, std_errors, parameter_names)``.
    """
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    return _empirical_info_internal(Y, model, qmc_tol, qmc_seed)
