"""Synthetic data from the four mixture-of-experts families, outlier
contamination, and the parameter / mean-function error metrics used by the
recovery and robustness experiments."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .analysis import predict_arrays
from .distributions import Family, UndefinedMomentError, expert_sample
from .gating import gate_probs
from .moe import Dataset, DegenerateFitError, FitOptions, MoEParams, MoESpec, design_matrix, fit

__all__ = [
    "ScenarioConfig",
    "benchmark_params",
    "generate",
    "align_components",
    "mse_params",
    "mse_mean_function",
    "RecoveryTrial",
    "mean_errors",
    "parameter_recovery",
    "outlier_robustness",
]


def benchmark_params(family, p: int = 1, q: int = 1) -> MoEParams:
    """Two crossing lines with a sharp gate at x = 0.

    Gate (0, 10), lines (0, 1) and (0, -1), scale sigma = 0.1 for both,
    skewness (3, -10) and degrees of freedom (5, 7) where the family uses them.
    """
    family = Family.parse(family)
    if p != 1 or q != 1:
        raise ValueError("the benchmark scenario is defined for linear experts and gate")
    lam = np.array([3.0, -10.0]) if family.has_skew else None
    nu = np.array([5.0, 7.0]) if family.has_dof else None
    return MoEParams(
        alpha=np.array([[0.0, 10.0]]),
        beta=np.array([[0.0, 1.0], [0.0, -1.0]]),
        sigma2=np.array([0.01, 0.01]),
        lam=lam,
        nu=nu,
    )


@dataclass
class ScenarioConfig:
    family: Family
    true_params: MoEParams
    n: int
    x_low: float = -1.0
    x_high: float = 1.0
    outlier_rate: float = 0.0
    outlier_y: float = -2.0
    seed: Optional[int] = 0

    def __post_init__(self) -> None:
        self.family = Family.parse(self.family)
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must lie in [0, 1]")
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if not self.x_low < self.x_high:
            raise ValueError("x_low must be < x_high")
        self.n = int(self.n)

    @property
    def spec(self) -> MoESpec:
        return MoESpec(self.family, self.true_params.K, self.true_params.p, self.true_params.q)


def generate(config: ScenarioConfig, rng: Optional[np.random.Generator] = None):
    """Draw (dataset, labels).

    Labels are 1-based component indices; outliers carry label 0. Outliers
    replace observations, so the sample size stays at ``config.n``.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    prm = config.true_params.conform(config.family)
    n = config.n
    x = rng.uniform(config.x_low, config.x_high, size=n)
    pi = gate_probs(prm.alpha, design_matrix(x, prm.q))
    # inverse-CDF categorical draw, one uniform per observation
    u = rng.uniform(size=n)
    z = np.minimum(np.sum(np.cumsum(pi, axis=1) < u[:, None], axis=1), prm.K - 1)
    mu = np.sum(design_matrix(x, prm.p) * prm.beta[z], axis=1)
    y = expert_sample(
        config.family, mu, prm.sigma2[z],
        None if prm.lam is None else prm.lam[z],
        None if prm.nu is None else prm.nu[z],
        seed=rng,
    )
    labels = z + 1
    if config.outlier_rate > 0:
        out = rng.uniform(size=n) < config.outlier_rate
        x = np.where(out, rng.uniform(config.x_low, config.x_high, size=n), x)
        y = np.where(out, config.outlier_y, y)
        labels = np.where(out, 0, labels)
    return Dataset(x, y, prm.p, prm.q), labels


# --------------------------------------------------------------------------
# error metrics
# --------------------------------------------------------------------------

def align_components(true: MoEParams, fitted: MoEParams) -> np.ndarray:
    """Permutation ``perm`` with fitted.permuted(perm) closest to ``true`` in beta."""
    if true.beta.shape != fitted.beta.shape:
        raise ValueError("parameter shapes differ")
    cost = np.sum((true.beta[:, None, :] - fitted.beta[None, :, :]) ** 2, axis=2)
    _, cols = linear_sum_assignment(cost)
    return cols


def _flatten(params: MoEParams) -> dict:
    out = {}
    for k in range(params.alpha.shape[0]):
        for j in range(params.alpha.shape[1]):
            out[f"alpha_{k + 1}_{j}"] = params.alpha[k, j]
    for k in range(params.K):
        for j in range(params.beta.shape[1]):
            out[f"beta_{k + 1}_{j}"] = params.beta[k, j]
        out[f"sigma_{k + 1}"] = np.sqrt(params.sigma2[k])
        out[f"sigma2_{k + 1}"] = params.sigma2[k]
        if params.lam is not None:
            out[f"lambda_{k + 1}"] = params.lam[k]
        if params.nu is not None:
            out[f"nu_{k + 1}"] = params.nu[k]
    return out


def mse_params(true: MoEParams, fitted: MoEParams, align: bool = True) -> dict:
    """Squared error per scalar coefficient after label alignment.

    Keys look like ``beta_1_1`` (component 1, slope) or ``sigma_2`` (the scale
    of component 2, on the standard-deviation scale; ``sigma2_k`` is also given).
    """
    if (true.alpha.shape != fitted.alpha.shape or true.beta.shape != fitted.beta.shape
            or (true.lam is None) != (fitted.lam is None) or (true.nu is None) != (fitted.nu is None)):
        raise ValueError("parameter shapes differ")
    if align:
        fitted = fitted.permuted(align_components(true, fitted))
    t, f = _flatten(true), _flatten(fitted)
    return {key: float((t[key] - f[key]) ** 2) for key in t}


def mse_mean_function(true_params: MoEParams, fitted_params: MoEParams, data, spec_true: MoESpec,
                      spec_fitted: Optional[MoESpec] = None) -> float:
    """(1/n) sum_i (E[y|x_i] - E_hat[y|x_i])^2 over the dataset's covariates."""
    spec_fitted = spec_fitted or spec_true
    x = data.x if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    a = predict_arrays(true_params, spec_true, x)
    b = predict_arrays(fitted_params, spec_fitted, x)
    if not (np.all(a.mean_defined) and np.all(b.mean_defined)):
        raise UndefinedMomentError("a regression mean is undefined (nu <= 1)")
    return float(np.mean((a.mean - b.mean) ** 2))


# --------------------------------------------------------------------------
# experiment drivers
# --------------------------------------------------------------------------

@dataclass
class RecoveryTrial:
    n: int
    trial: int
    errors: dict
    loglik: float
    converged: bool


def _trial_seeds(seed: int, n_trials: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_trials)]


def parameter_recovery(family, ns: Sequence[int] = (50, 100, 200, 500, 1000), n_trials: int = 100,
                       fit_opts: FitOptions = FitOptions(), seed: int = 0,
                       true_params: Optional[MoEParams] = None) -> dict:
    """Fit the generating family to self-generated data; returns {n: [RecoveryTrial]}.

    Average ``trial.errors`` over trials to get per-coefficient MSEs.
    """
    family = Family.parse(family)
    truth = true_params if true_params is not None else benchmark_params(family)
    spec = MoESpec(family, truth.K, truth.p, truth.q)
    out = {}
    for n in ns:
        trials = []
        for t, s in enumerate(_trial_seeds(seed + 7919 * int(n), n_trials)):
            data, _ = generate(ScenarioConfig(family, truth, n, seed=s))
            res = fit(spec, data, replace(fit_opts, seed=s))
            trials.append(RecoveryTrial(int(n), t, mse_params(truth, res.params), res.loglik, res.converged))
        out[int(n)] = trials
    return out


def mean_errors(trials: Sequence[RecoveryTrial]) -> dict:
    keys = trials[0].errors.keys()
    return {k: float(np.mean([t.errors[k] for t in trials])) for k in keys}


def outlier_robustness(generating_family, fitted_families, n: int = 500, outlier_rate: float = 0.05,
                       n_trials: int = 100, fit_opts: FitOptions = FitOptions(), seed: int = 0,
                       outlier_y: float = -2.0, fitted: Optional[dict] = None) -> dict:
    """Mean-function MSE of each fitted family on contaminated data.

    Returns {family: array of per-trial errors}; the same datasets are used
    for every fitted family. A mean that does not exist (nu <= 1) scores inf;
    a fit whose every start degenerates scores nan. When ``fitted`` is a dict,
    it receives {family: [(data, params or None), ...]} in trial order.
    """
    gen_family = Family.parse(generating_family)
    truth = benchmark_params(gen_family)
    spec_true = MoESpec(gen_family, truth.K, truth.p, truth.q)
    fams = [Family.parse(f) for f in fitted_families]
    out = {f: [] for f in fams}
    for s in _trial_seeds(seed, n_trials):
        data, _ = generate(ScenarioConfig(gen_family, truth, n, outlier_rate=outlier_rate,
                                          outlier_y=outlier_y, seed=s))
        for fam in fams:
            spec = MoESpec(fam, truth.K, truth.p, truth.q)
            params = None
            try:
                params = fit(spec, data, replace(fit_opts, seed=s)).params
                err = mse_mean_function(truth, params, data, spec_true, spec)
            except UndefinedMomentError:
                err = np.inf
            except DegenerateFitError:
                err = np.nan
            out[fam].append(err)
            if fitted is not None:
                fitted.setdefault(fam, []).append((data, params))
    return {f: np.asarray(v) for f, v in out.items()}
