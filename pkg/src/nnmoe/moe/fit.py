"""EM/ECM fit driver: initialization, single-start loop and multi-start."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..distributions import Family, lambda_from_delta
from ..gating import IRLSOptions
from .estep import EvaluationError, e_step, log_likelihood
from .model import Dataset, MoEParams, MoESpec
from .mstep import MStepOptions, cm_step_experts, cm_step_gate, weighted_least_squares

__all__ = [
    "FitOptions",
    "FitResult",
    "DegenerateFitError",
    "InsufficientDataError",
    "initialize",
    "run_em",
    "fit",
]

log = logging.getLogger(__name__)


class DegenerateFitError(RuntimeError):
    """Every start collapsed a scale below the floor."""


class InsufficientDataError(ValueError):
    """Fewer than K (p + 2) observations."""


@dataclass(frozen=True)
class FitOptions:
    n_starts: int = 10
    tol: float = 1e-6
    max_iter: int = 1500
    seed: int = 0
    ecm: bool = True
    kent_divisor: bool = False
    strict_iterates: bool = False
    scale_update: str = "standardized"
    fixed_lambda: Optional[float] = None
    fixed_nu: Optional[float] = None
    init: Optional[MoEParams] = None
    record_params: bool = False
    sigma2_floor_rel: float = 1e-12
    nu_init_range: tuple = (1.0, 200.0)
    delta_init_range: tuple = (-0.95, 0.95)
    nu_bracket: tuple = (0.5, 200.0)
    nu_max: float = 1e4
    irls: IRLSOptions = IRLSOptions()
    n_jobs: int = 1

    def mstep_options(self) -> MStepOptions:
        return MStepOptions(
            scale_update=self.scale_update,
            kent_divisor=self.kent_divisor,
            strict_iterates=self.strict_iterates,
            fix_lambda=self.fixed_lambda is not None,
            fix_nu=self.fixed_nu is not None,
            nu_bracket=tuple(self.nu_bracket),
            nu_max=self.nu_max,
            irls=self.irls,
        )


@dataclass
class FitResult:
    params: MoEParams
    loglik_trace: np.ndarray
    tau: np.ndarray
    n_iters: int
    converged: bool
    seed: int
    spec: Optional[MoESpec] = None
    degenerate: bool = False
    start_index: int = 0
    start_logliks: list = field(default_factory=list)
    history: Optional[list] = None
    nu_reverts: int = 0

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def _random_partition(n: int, K: int, min_size: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(100):
        labels = rng.integers(K, size=n)
        if np.all(np.bincount(labels, minlength=K) >= min_size):
            return labels
    # balanced fallback: a random permutation of round-robin labels
    return rng.permutation(np.arange(n) % K)


def initialize(spec: MoESpec, data: Dataset, seed, zero_gate: bool = False,
               opts: FitOptions = FitOptions()) -> MoEParams:
    """Random-partition start.

    Each block of the partition gets an ordinary least-squares line and its
    residual variance. The gate is N(0, 1) unless ``zero_gate``; skewness
    comes from delta ~ U(-0.95, 0.95) and degrees of freedom from U(1, 200).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K, p, q = spec.K, spec.p, spec.q
    if data.n < K:
        raise InsufficientDataError("need at least K observations")
    labels = _random_partition(data.n, K, min(p + 2, data.n // K), rng)
    beta = np.zeros((K, p + 1))
    sigma2 = np.zeros(K)
    floor = _sigma2_floor(data, opts)
    for k in range(K):
        v = (labels == k).astype(float)
        beta[k] = weighted_least_squares(data.X, data.y, v, np.zeros(p + 1))
        r = data.y - data.X @ beta[k]
        sigma2[k] = max(np.sum(v * r * r) / max(np.sum(v), 1.0), 10 * floor)
    alpha = np.zeros((K - 1, q + 1)) if zero_gate else rng.standard_normal((K - 1, q + 1))
    lam = nu = None
    if spec.family.has_skew:
        lo, hi = opts.delta_init_range
        lam = lambda_from_delta(rng.uniform(lo, hi, size=K))
        if opts.fixed_lambda is not None:
            lam = np.full(K, float(opts.fixed_lambda))
    if spec.family.has_dof:
        lo, hi = opts.nu_init_range
        nu = rng.uniform(lo, hi, size=K)
        if opts.fixed_nu is not None:
            nu = np.full(K, float(opts.fixed_nu))
    return MoEParams(alpha, beta, sigma2, lam, nu)


def _sigma2_floor(data: Dataset, opts: FitOptions) -> float:
    return opts.sigma2_floor_rel * max(float(np.var(data.y)), 1e-300)


# --------------------------------------------------------------------------
# single start
# --------------------------------------------------------------------------

def run_em(spec: MoESpec, data: Dataset, init: MoEParams, opts: FitOptions = FitOptions(),
           seed: int = 0, start_index: int = 0) -> FitResult:
    """Run EM/ECM from ``init`` until the relative log-likelihood change is <= tol."""
    family = spec.family
    mopts = opts.mstep_options()
    params = init.conform(family)
    if opts.fixed_lambda is not None and params.lam is not None:
        params.lam[:] = opts.fixed_lambda
    if opts.fixed_nu is not None and params.nu is not None:
        params.nu[:] = opts.fixed_nu
    floor = _sigma2_floor(data, opts)
    refresh = None
    if family is Family.STUDENT_T and opts.ecm:
        refresh = lambda prm: e_step(prm, spec, data)

    trace = []
    history = [params.copy()] if opts.record_params else None
    degenerate = converged = False
    nu_reverts = 0
    n_iter = 0
    cache = e_step(params, spec, data)
    trace.append(cache.loglik)
    while n_iter < opts.max_iter:
        gate = cm_step_gate(cache, data, params, opts.irls)
        staged = params.copy()
        staged.alpha = gate.alpha
        new = cm_step_experts(cache, data, spec, staged, mopts, refresh)
        if np.any(new.sigma2 < floor) or not np.all(np.isfinite(new.sigma2)):
            new.sigma2 = np.maximum(np.nan_to_num(new.sigma2, nan=floor), floor)
            degenerate = True
        try:
            new_cache = e_step(new, spec, data)
        except EvaluationError:
            degenerate = True
            break
        if family is Family.SKEW_T and not mopts.fix_nu and new_cache.loglik < cache.loglik:
            # the one-step-late nu update carries no ascent guarantee; fall back
            # to the previous nu, for which the remaining CM-steps are exact
            new.nu = params.nu.copy()
            new_cache = e_step(new, spec, data)
            nu_reverts += 1
        n_iter += 1
        params, old_ll, cache = new, cache.loglik, new_cache
        trace.append(cache.loglik)
        if history is not None:
            history.append(params.copy())
        if degenerate:
            break
        if abs(cache.loglik - old_ll) <= opts.tol * abs(old_ll):
            converged = True
            break
    return FitResult(
        params=params, loglik_trace=np.asarray(trace), tau=cache.tau, n_iters=n_iter,
        converged=converged, seed=seed, spec=spec, degenerate=degenerate,
        start_index=start_index, history=history, nu_reverts=nu_reverts,
    )


# --------------------------------------------------------------------------
# multi-start
# --------------------------------------------------------------------------

def fit(spec: MoESpec, data: Dataset, opts: FitOptions = FitOptions()) -> FitResult:
    """Best of ``opts.n_starts`` independent EM runs (highest final log-likelihood)."""
    if data.n < spec.K * (spec.p + 2):
        raise InsufficientDataError(
            f"n = {data.n} < K (p + 2) = {spec.K * (spec.p + 2)}"
        )
    if data.X.shape[1] != spec.p + 1 or data.R.shape[1] != spec.q + 1:
        raise ValueError("dataset design orders do not match the model spec")
    n_starts = 1 if opts.init is not None else max(1, int(opts.n_starts))
    streams = np.random.SeedSequence(opts.seed).spawn(n_starts)

    def one(i: int) -> FitResult:
        if opts.init is not None:
            init = opts.init
        else:
            init = initialize(spec, data, np.random.default_rng(streams[i]), zero_gate=(i == 0), opts=opts)
        try:
            return run_em(spec, data, init, opts, seed=opts.seed, start_index=i)
        except EvaluationError:
            return FitResult(init, np.array([-np.inf]), np.full((data.n, spec.K), 1.0 / spec.K),
                             0, False, opts.seed, spec, degenerate=True, start_index=i)

    if opts.n_jobs > 1 and n_starts > 1:
        with ThreadPoolExecutor(max_workers=opts.n_jobs) as pool:
            results = list(pool.map(one, range(n_starts)))
    else:
        results = [one(i) for i in range(n_starts)]

    usable = [r for r in results if not r.degenerate]
    if not usable:
        raise DegenerateFitError("every start collapsed a component scale")
    best = usable[0]
    for r in usable[1:]:
        if r.loglik > best.loglik:
            best = r
    best.start_logliks = [r.loglik for r in results]
    return best
