"""Observed-data log-likelihood and the family-specific E-steps."""
from __future__ import annotations

import numpy as np
from scipy import special

from .. import numerics as nm
from ..numerics import log_sum_exp
from ..distributions import Family, expert_logpdf, skew_t_cdf_arg
from ..gating import gate_log_probs
from .model import Dataset, EStepCache, MoEParams, MoESpec

__all__ = [
    "EvaluationError",
    "expert_log_densities",
    "component_log_densities",
    "log_likelihood",
    "e_step",
    "skew_normal_moments",
    "student_t_weights",
    "skew_t_moments",
]


class EvaluationError(FloatingPointError):
    """The log-likelihood is not finite (usually a collapsed scale)."""


def _residuals(params: MoEParams, data: Dataset) -> np.ndarray:
    return data.y[:, None] - data.X @ params.beta.T


def expert_log_densities(params: MoEParams, spec: MoESpec, data: Dataset) -> np.ndarray:
    """n x K matrix of log f_k(y_i | x_i)."""
    mu = data.X @ params.beta.T
    return expert_logpdf(spec.family, data.y[:, None], mu, params.sigma2[None, :],
                         None if params.lam is None else params.lam[None, :],
                         None if params.nu is None else params.nu[None, :])


def component_log_densities(params: MoEParams, spec: MoESpec, data: Dataset) -> np.ndarray:
    """n x K matrix of log pi_k(r_i) + log f_k(y_i | x_i)."""
    return gate_log_probs(params.alpha, data.R) + expert_log_densities(params, spec, data)


def log_likelihood(params: MoEParams, spec: MoESpec, data: Dataset) -> float:
    value = float(np.sum(log_sum_exp(component_log_densities(params, spec, data), axis=1)))
    if not np.isfinite(value):
        raise EvaluationError("non-finite log-likelihood")
    return value


# --------------------------------------------------------------------------
# conditional expectations of the latent variables
# --------------------------------------------------------------------------

def skew_normal_moments(r, sigma2, lam):
    """E[U|y], E[U^2|y] for the skew-normal hierarchical representation.

    U|y is normal with mean delta r and variance (1 - delta^2) sigma^2,
    truncated to [0, inf).
    """
    delta = lam / np.sqrt(1.0 + lam * lam)
    sigma = np.sqrt(sigma2)
    sd_u = np.sqrt(1.0 - delta * delta) * sigma
    # standardized truncation point: delta r / sd_u = lam r / sigma
    m1, m2 = nm.truncated_normal_moments(np.broadcast_to(lam * r / sigma, np.broadcast(r, sigma2, lam).shape))
    return sd_u * m1, sd_u * sd_u * m2


def student_t_weights(d, nu):
    """E[W|y] and E[log W|y] for the t scale-mixture representation."""
    w = (nu + 1.0) / (nu + d * d)
    half = 0.5 * (nu + 1.0)
    elogw = np.log(w) + special.digamma(half) - np.log(half)
    return w, elogw


def skew_t_moments(r, sigma2, lam, nu, logf):
    """E[W|y], E[WU|y], E[WU^2|y] and the one-step-late E[log W|y].

    ``logf`` is the log of the expert's own skew-t density at y.
    """
    delta = lam / np.sqrt(1.0 + lam * lam)
    sigma = np.sqrt(sigma2)
    d = r / sigma
    d2 = d * d
    M = skew_t_cdf_arg(d, lam, nu)
    log_T1 = nm.student_t_logcdf(M, nu + 1.0)
    log_T3 = nm.student_t_logcdf(M * np.sqrt((nu + 3.0) / (nu + 1.0)), nu + 3.0)
    w = (nu + 1.0) / (nu + d2) * np.exp(log_T3 - log_T1)

    # sqrt(1-delta^2)/(pi f(y)) * (d^2/(nu(1-delta^2)) + 1)^-(nu/2+1)
    one_m = 1.0 - delta * delta
    log_corr = (0.5 * np.log(one_m) - np.log(np.pi) - logf
                - (0.5 * nu + 1.0) * np.log1p(d2 / (nu * one_m)))
    corr = np.exp(log_corr)
    e1 = delta * r * w + corr
    e2 = delta * delta * r * r * w + one_m * sigma2 + delta * r * corr

    ratio = np.exp(nm.student_t_logpdf(M, nu + 1.0) - log_T1)
    e3 = (w - np.log(0.5 * (nu + d2)) - (nu + 1.0) / (nu + d2) + special.digamma(0.5 * (nu + 1.0))
          + lam * d * (d2 - 1.0) / np.sqrt((nu + 1.0) * (nu + d2) ** 3) * ratio)
    return w, e1, e2, e3, M


def e_step(params: MoEParams, spec: MoESpec, data: Dataset) -> EStepCache:
    family = spec.family
    r = _residuals(params, data)
    sigma2 = params.sigma2[None, :]
    d = r / np.sqrt(sigma2)
    logf = expert_log_densities(params, spec, data)
    log_comp = gate_log_probs(params.alpha, data.R) + logf
    log_mix = log_sum_exp(log_comp, axis=1, keepdims=True)
    loglik = float(np.sum(log_mix))
    if not np.isfinite(loglik):
        raise EvaluationError("non-finite log-likelihood")
    tau = np.exp(log_comp - log_mix)
    cache = EStepCache(tau=tau, log_comp=log_comp, loglik=loglik, d=d)
    if family is Family.SKEW_NORMAL:
        cache.e1, cache.e2 = skew_normal_moments(r, sigma2, params.lam[None, :])
    elif family is Family.STUDENT_T:
        cache.w, cache.e3 = student_t_weights(d, params.nu[None, :])
    elif family is Family.SKEW_T:
        cache.w, cache.e1, cache.e2, cache.e3, cache.M = skew_t_moments(
            r, sigma2, params.lam[None, :], params.nu[None, :], logf
        )
    return cache
