"""Conditional maximization steps for the gate and for each expert family.

Skew families support two parameterizations of the latent half-normal
variable (``scale_update``):

``"standardized"``
    U has unit scale, Y = mu + sigma (delta U + sqrt(1 - delta^2) E).
    The scale update is the positive root of a quadratic in 1/sigma. With
    delta = 0 it coincides with the normal-expert update.
``"printed"``
    U has scale sigma, which gives the closed-form update
    sigma^2 = sum tau [w r^2 - 2 delta e1 r + e2] / (2 (1 - delta^2) sum tau).

Both are exact conditional maximizations of their own Q-function, so either
keeps EM monotone.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, special

from .. import numerics as nm
from ..distributions import Family
from ..gating import IRLSOptions, IRLSResult, irls_maximize_q1
from .model import Dataset, EStepCache, MoEParams, MoESpec

__all__ = [
    "MStepOptions",
    "weighted_least_squares",
    "cm_step_gate",
    "cm_step_experts",
    "delta_equation",
    "delta_objective",
    "solve_delta",
    "nu_equation",
    "nu_objective",
    "solve_nu",
]

DELTA_EDGE = 1e-6


@dataclass(frozen=True)
class MStepOptions:
    scale_update: str = "standardized"
    kent_divisor: bool = False
    strict_iterates: bool = False
    fix_lambda: bool = False
    fix_nu: bool = False
    nu_bracket: tuple = (0.5, 200.0)
    nu_max: float = 1e4
    delta_grid: int = 201
    root_tol: float = 1e-10
    irls: IRLSOptions = IRLSOptions()

    def __post_init__(self) -> None:
        if self.scale_update not in ("standardized", "printed"):
            raise ValueError("scale_update must be 'standardized' or 'printed'")


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

def weighted_least_squares(X: np.ndarray, z: np.ndarray, v: np.ndarray, fallback=None) -> np.ndarray:
    """argmin_b sum_i v_i (z_i - x_i^T b)^2 via a rank-revealing lstsq.

    If the weights carry essentially no mass, ``fallback`` is returned.
    """
    total = float(np.sum(v))
    if not total > 1e-300:
        if fallback is None:
            raise ValueError("weights sum to zero")
        return np.array(fallback, dtype=float)
    sw = np.sqrt(np.maximum(v, 0.0))
    A = X * sw[:, None]
    gram = A.T @ A
    ridge = 1e-10 * np.trace(gram) / gram.shape[0]
    try:
        c = linalg.cho_factor(gram, check_finite=False)
        if np.min(np.diag(c[0])) ** 2 > 1e-13 * np.max(np.diag(gram)):
            return linalg.cho_solve(c, A.T @ (sw * z), check_finite=False)
    except linalg.LinAlgError:
        pass
    return linalg.solve(gram + ridge * np.eye(gram.shape[0]), A.T @ (sw * z), assume_a="sym")


# --------------------------------------------------------------------------
# gate
# --------------------------------------------------------------------------

def cm_step_gate(cache: EStepCache, data: Dataset, current, opts: Optional[IRLSOptions] = None) -> IRLSResult:
    alpha = current.alpha if hasattr(current, "alpha") else np.asarray(current)
    return irls_maximize_q1(alpha, cache.tau, data.R, opts)


# --------------------------------------------------------------------------
# delta equation (skew families)
# --------------------------------------------------------------------------
# With sums S0 = sum tau, P = sum tau w d^2, C = sum tau d u1, D = sum tau u2
# over standardized latent moments, the delta part of Q2 is
#     -S0/2 log(1-delta^2) - (P - 2 delta C + delta^2 D) / (2 (1-delta^2))
# and its stationarity condition times (1-delta^2)^2 is the cubic below.

def delta_equation(delta, S0, P, C, D):
    return S0 * delta * (1.0 - delta * delta) + C * (1.0 + delta * delta) - delta * (P + D)


def delta_objective(delta, S0, P, C, D):
    om = 1.0 - delta * delta
    return -0.5 * S0 * np.log(om) - (P - 2.0 * delta * C + delta * delta * D) / (2.0 * om)


def solve_delta(S0, P, C, D, delta_old: float, n_grid: int = 201, tol: float = 1e-10) -> float:
    """Root of the delta equation with the highest objective.

    Every sign change on a grid over (-1, 1) is refined by Brent's method;
    with no sign change the best grid point is used. The previous value is
    kept if nothing improves on it.
    """
    lo, hi = -1.0 + DELTA_EDGE, 1.0 - DELTA_EDGE
    grid = np.linspace(lo, hi, n_grid)
    g = delta_equation(grid, S0, P, C, D)
    candidates = []
    for j in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0):
        a, b = grid[j], grid[j + 1]
        if g[j] == 0.0:
            candidates.append(a)
            continue
        if g[j + 1] == 0.0:
            candidates.append(b)
            continue
        candidates.append(nm.brent_root(lambda t: delta_equation(t, S0, P, C, D), nm.Bracket(a, b), tol))
    if not candidates:
        candidates.append(grid[int(np.argmax(delta_objective(grid, S0, P, C, D)))])
    cand = np.asarray(candidates)
    best = float(cand[int(np.argmax(delta_objective(cand, S0, P, C, D)))])
    old = float(np.clip(delta_old, lo, hi))
    if delta_objective(best, S0, P, C, D) < delta_objective(old, S0, P, C, D):
        return old
    return best


# --------------------------------------------------------------------------
# nu equation (t families)
# --------------------------------------------------------------------------
# Q3(nu) = S0 [nu/2 log(nu/2) - log Gamma(nu/2)] + nu/2 sum tau (e3 - w)

def nu_equation(nu, mean_gap):
    """-psi(nu/2) + log(nu/2) + 1 + mean_gap, mean_gap = sum tau (e3 - w) / sum tau."""
    half = 0.5 * nu
    return -special.digamma(half) + np.log(half) + 1.0 + mean_gap


def nu_objective(nu, mean_gap):
    half = 0.5 * nu
    return half * np.log(half) - special.gammaln(half) + half * mean_gap


def solve_nu(mean_gap: float, bracket=(0.5, 200.0), hi_max: float = 1e4, tol: float = 1e-10) -> float:
    lo, hi = bracket
    f = lambda v: float(nu_equation(v, mean_gap))
    for upper in (hi, hi_max):
        try:
            return nm.brent_root(f, nm.Bracket(lo, upper), tol)
        except nm.NoSignChangeError:
            continue
    ends = np.array([lo, hi_max])
    return float(ends[int(np.argmax(nu_objective(ends, mean_gap)))])


# --------------------------------------------------------------------------
# scale update
# --------------------------------------------------------------------------

def _standardized_scale(A, B, S0, delta):
    """Maximizer of S0 log s - (s^2 A - 2 delta s B) / (2 (1-delta^2)) over s = 1/sigma."""
    om = 1.0 - delta * delta
    s = (delta * B + np.sqrt(delta * delta * B * B + 4.0 * A * S0 * om)) / (2.0 * A)
    return 1.0 / (s * s)


# --------------------------------------------------------------------------
# expert updates
# --------------------------------------------------------------------------

def _normal_experts(cache, data, params, tau, opts):
    for k in range(params.K):
        params.beta[k] = weighted_least_squares(data.X, data.y, tau[:, k], params.beta[k])
        r = data.y - data.X @ params.beta[k]
        params.sigma2[k] = np.sum(tau[:, k] * r * r) / np.sum(tau[:, k])


def _t_scale_experts(cache, data, params, tau, opts):
    w = cache.w
    for k in range(params.K):
        v = tau[:, k] * w[:, k]
        params.beta[k] = weighted_least_squares(data.X, data.y, v, params.beta[k])
        r = data.y - data.X @ params.beta[k]
        div = np.sum(v) if opts.kent_divisor else np.sum(tau[:, k])
        params.sigma2[k] = np.sum(v * r * r) / div


def _skew_experts(cache, data, params, tau, opts, weighted: bool):
    """Shared beta / sigma / delta updates for skew-normal and skew-t experts."""
    n = data.n
    w = cache.w if weighted else np.ones((n, params.K))
    delta_all = params.delta
    for k in range(params.K):
        t, wk = tau[:, k], w[:, k]
        e1, e2 = cache.e1[:, k], cache.e2[:, k]
        delta = float(delta_all[k])
        sigma_old = np.sqrt(params.sigma2[k])
        S0 = float(np.sum(t))

        z = data.y - delta * e1 / wk
        params.beta[k] = weighted_least_squares(data.X, z, t * wk, params.beta[k])
        r = data.y - data.X @ params.beta[k]

        def update_scale(delta):
            if opts.scale_update == "standardized":
                A = float(np.sum(t * wk * r * r))
                B = float(np.sum(t * r * e1)) / sigma_old
                return _standardized_scale(A, B, S0, delta)
            num = float(np.sum(t * (wk * r * r - 2.0 * delta * e1 * r + e2)))
            return num / (2.0 * (1.0 - delta * delta) * S0)

        params.sigma2[k] = update_scale(delta)
        if opts.fix_lambda:
            continue
        sigma_new = np.sqrt(params.sigma2[k])
        d = r / sigma_new
        # latent moments on the unit scale of whichever parameterization is active
        s_lat = sigma_old if opts.scale_update == "standardized" else sigma_new
        P = float(np.sum(t * wk * d * d))
        C = float(np.sum(t * d * e1)) / s_lat
        D = float(np.sum(t * e2)) / (s_lat * s_lat)
        delta = solve_delta(S0, P, C, D, delta, opts.delta_grid, opts.root_tol)
        params.lam[k] = delta / np.sqrt(1.0 - delta * delta)
        if opts.strict_iterates:
            params.sigma2[k] = update_scale(delta)


def _update_nu(cache, params, tau, opts):
    for k in range(params.K):
        t = tau[:, k]
        gap = float(np.sum(t * (cache.e3[:, k] - cache.w[:, k])) / np.sum(t))
        params.nu[k] = solve_nu(gap, opts.nu_bracket, opts.nu_max, opts.root_tol)


def cm_step_experts(cache: EStepCache, data: Dataset, spec: MoESpec, current: MoEParams,
                    opts: MStepOptions = MStepOptions(), refresh=None) -> MoEParams:
    """One round of expert CM-steps; returns a new parameter object.

    ``refresh`` is an optional callable ``params -> EStepCache`` used by the
    t-expert ECM variant to recompute the weights before the nu step.
    """
    params = current.copy()
    tau = cache.tau
    family = spec.family
    if family is Family.NORMAL:
        _normal_experts(cache, data, params, tau, opts)
    elif family is Family.STUDENT_T:
        _t_scale_experts(cache, data, params, tau, opts)
        if not opts.fix_nu:
            nu_cache = refresh(params) if refresh is not None else cache
            _update_nu(nu_cache, params, nu_cache.tau, opts)
    elif family is Family.SKEW_NORMAL:
        _skew_experts(cache, data, params, tau, opts, weighted=False)
    else:
        _skew_experts(cache, data, params, tau, opts, weighted=True)
        if not opts.fix_nu:
            _update_nu(cache, params, tau, opts)
    return params
