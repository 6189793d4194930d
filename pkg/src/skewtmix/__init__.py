"""skewtmix: finite mixtures of unrestricted multivariate skew-t
distributions fitted by an exact ECM algorithm.

The conditional expectations of the E-step are evaluated through moments of
truncated multivariate t distributions, which in turn reduce to multivariate
t CDF values; a Monte Carlo E-step is included as an accuracy/time baseline.
"""
from .estimator import SkewTMixture
from .mc_estep import McConfig, benchmark_estep, mc_estep
from .mixture import (EmptyComponentError, FitConfig, FitResult,
                      SkewTMixtureModel, classify, empirical_info, error_rate,
                      estep_mixture, fit_fm_mst, fm_mst_logpdf, fm_mst_pdf,
                      kmeans_init, mstep_mixture, n_free_parameters,
                      posterior_tau)
from .skewt import (EStepQuantities, EStepUnderflowError, SingleFitResult,
                    SkewTParams, estep_single, fit_mst, mst_logpdf, mst_pdf,
                    mst_sample, mstep_single, rmst_pdf, s1_integral)
from .tdist import CdfResult, MvtParams, digamma, mvt_cdf, mvt_logpdf, mvt_pdf
from .truncmoments import (TruncatedMoments, TruncatedTSpec,
                           TruncationUnderflowError, orthant_t_moments,
                           trunc_t_mean, trunc_t_prob, trunc_t_second_moment)

__version__ = "0.1.0"

__all__ = [
    "CdfResult", "EStepQuantities", "EStepUnderflowError", "EmptyComponentError",
    "FitConfig", "FitResult", "McConfig", "MvtParams", "SingleFitResult",
    "SkewTMixture", "SkewTMixtureModel", "SkewTParams", "TruncatedMoments",
    "TruncatedTSpec", "TruncationUnderflowError", "benchmark_estep", "classify",
    "digamma", "empirical_info", "error_rate", "estep_mixture", "estep_single",
    "fit_fm_mst", "fit_mst", "fm_mst_logpdf", "fm_mst_pdf", "kmeans_init",
    "mc_estep", "mst_logpdf", "mst_pdf", "mst_sample", "mstep_mixture",
    "mstep_single", "mvt_cdf", "mvt_logpdf", "mvt_pdf", "n_free_parameters",
    "orthant_t_moments", "posterior_tau", "rmst_pdf", "s1_integral",
    "trunc_t_mean", "trunc_t_prob", "trunc_t_second_moment",
]
