"""Post-fit analysis: prediction bands, MAP clustering and information criteria."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .distributions import Family, expert_moments, NormalParams, SkewNormalParams, \
    StudentTParams, SkewTParams
from .gating import gate_probs
from .moe import Dataset, DegenerateFitError, FitOptions, FitResult, MoEParams, MoESpec, \
    component_log_densities, design_matrix, fit

__all__ = [
    "GATE_NEGLIGIBLE",
    "PredictionPoint",
    "Prediction",
    "predict",
    "predict_arrays",
    "map_cluster",
    "free_params",
    "count_coefficients",
    "complete_log_likelihood",
    "SelectionRow",
    "SelectionTable",
    "criteria",
    "select_K",
]

# components whose gate weight is below this do not veto the mixture moments
GATE_NEGLIGIBLE = 1e-6


@dataclass(frozen=True)
class PredictionPoint:
    x: float
    mean: Optional[float]
    variance: Optional[float]
    per_component_means: tuple
    gate_probs: tuple
    per_component_variances: tuple = ()

    @property
    def band(self) -> Optional[tuple]:
        """mean -/+ 2 standard deviations, or None when the variance is undefined."""
        if self.mean is None or self.variance is None:
            return None
        sd = float(np.sqrt(self.variance))
        return self.mean - 2.0 * sd, self.mean + 2.0 * sd


@dataclass
class Prediction:
    """Column form of a batch of predictions; undefined entries are masked."""

    x: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    mean_defined: np.ndarray
    variance_defined: np.ndarray
    gate_probs: np.ndarray
    component_means: np.ndarray
    component_variances: np.ndarray


def _expert_law(family: Family, mu, sigma2, lam, nu):
    if family is Family.NORMAL:
        return NormalParams(mu, sigma2)
    if family is Family.SKEW_NORMAL:
        return SkewNormalParams(mu, sigma2, lam)
    if family is Family.STUDENT_T:
        return StudentTParams(mu, sigma2, nu)
    return SkewTParams(mu, sigma2, lam, nu)


def predict_arrays(params: MoEParams, spec: MoESpec, x_new) -> Prediction:
    family = spec.family
    x = np.asarray(x_new, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("x_new must be finite")
    pi = gate_probs(params.alpha, design_matrix(x, spec.q))
    loc = design_matrix(x, spec.p) @ params.beta.T
    K = params.K
    # moments of each expert relative to its location
    shift = np.zeros(K)
    var_k = np.zeros(K)
    mean_ok = np.ones(K, bool)
    var_ok = np.ones(K, bool)
    for k in range(K):
        m = expert_moments(family, _expert_law(
            family, 0.0, params.sigma2[k],
            None if params.lam is None else params.lam[k],
            None if params.nu is None else params.nu[k]))
        mean_ok[k], var_ok[k] = m.has_mean, m.has_variance
        shift[k] = m.mean if m.has_mean else 0.0
        var_k[k] = m.variance if m.has_variance else 0.0
    comp_mean = loc + shift[None, :]
    live = pi > GATE_NEGLIGIBLE
    mean_defined = ~np.any(live & ~mean_ok[None, :], axis=1)
    var_defined = mean_defined & ~np.any(live & ~var_ok[None, :], axis=1)
    w = np.where(mean_ok[None, :], pi, 0.0)
    mean = np.sum(w * comp_mean, axis=1)
    second = np.sum(np.where(var_ok[None, :], pi, 0.0) * (comp_mean ** 2 + var_k[None, :]), axis=1)
    variance = np.maximum(second - mean ** 2, 0.0)
    comp_var = np.broadcast_to(var_k, comp_mean.shape).copy()
    return Prediction(x, mean, variance, mean_defined, var_defined, pi, comp_mean, comp_var)


def predict(params: MoEParams, spec: MoESpec, x_new) -> list[PredictionPoint]:
    """Mixture mean and variance of y given x at each point of ``x_new``.

    The mean is sum_k pi_k m_k and the variance sum_k pi_k (m_k^2 + v_k) minus
    the squared mean, with (m_k, v_k) the expert moments at location beta_k^T x.
    A moment is reported as None when a component with non-negligible gate
    weight lacks it (nu <= 1 for the mean, nu <= 2 for the variance).
    """
    pr = predict_arrays(params, spec, x_new)
    K = params.K
    mean_ok_k = np.ones(K, bool)
    var_ok_k = np.ones(K, bool)
    if params.nu is not None:
        mean_ok_k = params.nu > 1
        var_ok_k = params.nu > 2
    out = []
    for i in range(pr.x.size):
        out.append(PredictionPoint(
            x=float(pr.x[i]),
            mean=float(pr.mean[i]) if pr.mean_defined[i] else None,
            variance=float(pr.variance[i]) if pr.variance_defined[i] else None,
            per_component_means=tuple(float(v) if ok else None
                                      for v, ok in zip(pr.component_means[i], mean_ok_k)),
            gate_probs=tuple(float(v) for v in pr.gate_probs[i]),
            per_component_variances=tuple(float(v) if ok else None
                                          for v, ok in zip(pr.component_variances[i], var_ok_k)),
        ))
    return out


# --------------------------------------------------------------------------
# clustering
# --------------------------------------------------------------------------

def map_cluster(tau) -> np.ndarray:
    """1-based MAP labels; ties go to the lowest component index."""
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    return np.argmax(tau, axis=1) + 1


# --------------------------------------------------------------------------
# information criteria
# --------------------------------------------------------------------------

def free_params(family, K: int, p: int, q: int) -> int:
    """Number of free parameters of a K-expert model with polynomial orders p, q."""
    if K < 1:
        raise ValueError("K must be >= 1")
    extra = {Family.NORMAL: 0, Family.SKEW_NORMAL: 1, Family.STUDENT_T: 1, Family.SKEW_T: 2}
    return K * (p + q + 3 + extra[Family.parse(family)]) - q - 1


def count_coefficients(params: MoEParams) -> int:
    """Direct count of the free scalars stored in a parameter object."""
    n = params.alpha.size + params.beta.size + params.sigma2.size
    n += 0 if params.lam is None else params.lam.size
    n += 0 if params.nu is None else params.nu.size
    return int(n)


def complete_log_likelihood(params: MoEParams, spec: MoESpec, data: Dataset, labels=None) -> float:
    """Complete-data log-likelihood with hard (MAP by default) memberships."""
    log_comp = component_log_densities(params, spec, data)
    if labels is None:
        labels = np.argmax(log_comp, axis=1)
    else:
        labels = np.asarray(labels, dtype=int) - 1
    return float(np.sum(log_comp[np.arange(data.n), labels]))


@dataclass(frozen=True)
class SelectionRow:
    K: int
    loglik: float
    eta: int
    bic: float
    aic: float
    icl: float


def criteria(result: FitResult, spec: MoESpec, data: Dataset) -> SelectionRow:
    """BIC = logL - eta log(n)/2, AIC = logL - eta, ICL = logL_c - eta log(n)/2.

    All three are in maximization orientation (larger is better).
    """
    eta = free_params(spec.family, spec.K, spec.p, spec.q)
    ll = result.loglik
    penalty = 0.5 * eta * np.log(data.n)
    labels = map_cluster(result.tau)
    llc = complete_log_likelihood(result.params, spec, data, labels)
    return SelectionRow(spec.K, ll, eta, ll - penalty, ll - eta, llc - penalty)


@dataclass
class SelectionTable:
    rows: list
    errors: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)

    def best(self, criterion: str) -> Optional[int]:
        if not self.rows:
            return None
        vals = [getattr(r, criterion) for r in self.rows]
        return self.rows[int(np.argmax(vals))].K

    @property
    def best_k(self) -> dict:
        return {c: self.best(c) for c in ("bic", "aic", "icl")}


def select_K(family, data: Dataset, K_range: Iterable[int] = range(1, 6),
             opts: FitOptions = FitOptions(), p: Optional[int] = None,
             q: Optional[int] = None) -> SelectionTable:
    """Fit every K in ``K_range`` and tabulate BIC, AIC and ICL.

    A K whose fit degenerates is recorded in ``errors`` and skipped.
    """
    p = data.p if p is None else p
    q = data.q if q is None else q
    table = SelectionTable(rows=[])
    for K in K_range:
        spec = MoESpec(family, int(K), p, q)
        # independent, reproducible stream per K
        k_seed = int(np.random.SeedSequence([int(opts.seed), int(K)]).generate_state(1)[0])
        try:
            res = fit(spec, data, replace(opts, seed=k_seed))
        except (DegenerateFitError, ValueError) as exc:
            table.errors[int(K)] = str(exc)
            continue
        table.rows.append(criteria(res, spec, data))
        table.fits[int(K)] = res
    return table
