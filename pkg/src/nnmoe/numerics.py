"""Special functions, stable kernels and a bracketed scalar root finder.

The heavy lifting is delegated to :mod:`scipy.special` and
:func:`scipy.optimize.brentq`; this module adds domain checking, log-space
variants that stay finite in the far tails, and error types the EM code can
react to.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

__all__ = [
    "DomainError",
    "NoSignChangeError",
    "RootNotConvergedError",
    "Bracket",
    "log_gamma",
    "log_gamma_ratio",
    "digamma",
    "std_normal_pdf",
    "std_normal_logpdf",
    "std_normal_cdf",
    "std_normal_logcdf",
    "inverse_mills",
    "truncated_normal_moments",
    "student_t_pdf",
    "student_t_logpdf",
    "student_t_cdf",
    "student_t_logcdf",
    "brent_root",
    "log_sum_exp",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class NoSignChangeError(ValueError):
    """The function has the same sign at both bracket ends."""


class RootNotConvergedError(RuntimeError):
    """The root finder hit its iteration cap."""


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"invalid bracket [{self.lo}, {self.hi}]")


def _require_positive(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} must be > 0")
    return arr


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# gamma family
# --------------------------------------------------------------------------

def log_gamma(x):
    """log Gamma(x) for x > 0."""
    return _scalar_or_array(special.gammaln(_require_positive(x, "x")))


# Bernoulli-number coefficients B_{2k} / (2k (2k-1)) of Stirling's series.
_STIRLING = (1.0 / 12, -1.0 / 360, 1.0 / 1260, -1.0 / 1680, 1.0 / 1188)


def log_gamma_ratio(x, a: float):
    """log Gamma(x + a) - log Gamma(x) without cancellation for large x.

    Direct differencing of ``gammaln`` loses about ``x * eps`` absolute
    accuracy, which matters once degrees of freedom reach 1e6 and beyond.
    For x >= 50 the Stirling expansion of the difference is used instead.
    """
    x = _require_positive(x, "x")
    if not np.all(x + a > 0):
        raise DomainError("x + a must be > 0")
    out = np.empty_like(x)
    small = x < 50.0
    if np.any(small):
        xs = x[small]
        out[small] = special.gammaln(xs + a) - special.gammaln(xs)
    if np.any(~small):
        xb = x[~small]
        xa = xb + a
        val = (xb - 0.5) * np.log1p(a / xb) + a * np.log(xa) - a
        for k, c in enumerate(_STIRLING, start=1):
            val += c * (xa ** (1 - 2 * k) - xb ** (1 - 2 * k))
        out[~small] = val
    return _scalar_or_array(out)


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    return _scalar_or_array(special.digamma(_require_positive(x, "x")))


# --------------------------------------------------------------------------
# standard normal
# --------------------------------------------------------------------------

def std_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(-0.5 * x * x - _LOG_SQRT_2PI)


def std_normal_pdf(x):
    return _scalar_or_array(np.exp(std_normal_logpdf(x)))


def std_normal_cdf(x):
    return _scalar_or_array(special.ndtr(np.asarray(x, dtype=float)))


def std_normal_logcdf(x):
    """log Phi(x), accurate for large negative x."""
    return _scalar_or_array(special.log_ndtr(np.asarray(x, dtype=float)))


def inverse_mills(x):
    """phi(x) / Phi(x) evaluated in log space (finite down to x = -1e150)."""
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(np.exp(std_normal_logpdf(x) - special.log_ndtr(x)))


# below this the direct form a + phi(a)/Phi(a) loses digits to cancellation
_TRUNC_CF_SWITCH = -2.0
_TRUNC_CF_TERMS = 200


def _mills_tails(x):
    """T_1, T_2 of the Laplace continued fraction T_k = k / (x + T_{k+1}), x > 0."""
    t = np.zeros_like(x)
    for k in range(_TRUNC_CF_TERMS, 1, -1):
        t = k / (x + t)
    t2 = t
    return 1.0 / (x + t2), t2


def truncated_normal_moments(a):
    """E[Z] and E[Z^2] for Z ~ N(a, 1) truncated to [0, inf).

    Directly these are a + h and 1 + a (a + h) with h = phi(a)/Phi(a). For
    a < -2 both cancel badly; there a + h = T_1 and 1 + a (a + h) = T_1 T_2
    from the continued fraction of the normal Mills ratio at x = -a.
    """
    a = np.asarray(a, dtype=float)
    deep = a < _TRUNC_CF_SWITCH
    m1 = a + np.exp(std_normal_logpdf(a) - special.log_ndtr(a))
    m2 = 1.0 + a * m1
    if np.any(deep):
        t1, t2 = _mills_tails(-a[deep])
        m1 = np.where(deep, 0.0, m1)
        m2 = np.where(deep, 0.0, m2)
        m1[deep] = t1
        m2[deep] = t1 * t2
    return _scalar_or_array(m1), _scalar_or_array(m2)


# --------------------------------------------------------------------------
# Student t
# --------------------------------------------------------------------------

def student_t_logpdf(x, nu):
    """Log density of the standard Student t with ``nu`` degrees of freedom."""
    nu = _require_positive(nu, "nu")
    x = np.asarray(x, dtype=float)
    half = 0.5 * nu
    out = (
        log_gamma_ratio(half, 0.5)
        - 0.5 * np.log(nu * np.pi)
        - (half + 0.5) * np.log1p(x * x / nu)
    )
    return _scalar_or_array(out)


def student_t_pdf(x, nu):
    return _scalar_or_array(np.exp(student_t_logpdf(x, nu)))


def student_t_cdf(x, nu):
    """CDF of the standard Student t (regularized incomplete beta)."""
    nu = _require_positive(nu, "nu")
    return _scalar_or_array(special.stdtr(nu, np.asarray(x, dtype=float)))


_BETACF_EPS = 1e-15
_BETACF_MAX_ITER = 100_000
_TINY = 1e-300


def _log_betainc_small(a, b, log_x, log_1mx):
    """log I_x(a, b) by the Lentz continued fraction; needs x < (a+1)/(a+b+2)."""
    x = np.exp(log_x)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = 1.0 / np.where(np.abs(d) < _TINY, _TINY, d)
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2.0 * m
        for aa in (m * (b - m) * x / ((qam + m2) * (a + m2)),
                   -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))):
            d = 1.0 + aa * d
            d = 1.0 / np.where(np.abs(d) < _TINY, _TINY, d)
            c = 1.0 + aa / c
            c = np.where(np.abs(c) < _TINY, _TINY, c)
            step = d * c
            h = np.where(active, h * step, h)
        active &= np.abs(step - 1.0) > _BETACF_EPS
        if not np.any(active):
            break
    else:
        raise RootNotConvergedError("incomplete-beta continued fraction did not converge")
    return a * log_x + b * log_1mx - special.betaln(a, b) - np.log(a) + np.log(h)


def _log_t_lower_tail(x, nu):
    # T_nu(x) = I_{nu/(nu+x^2)}(nu/2, 1/2) / 2 for x < 0, in log space so x = -1e200 is fine
    log_x2 = 2.0 * np.log(np.abs(x))
    log_den = np.logaddexp(np.log(nu), log_x2)
    return np.log(0.5) + _log_betainc_small(nu / 2.0, 0.5, np.log(nu) - log_den, log_x2 - log_den)


def student_t_logcdf(x, nu):
    """log T_nu(x); a log-space continued fraction takes over where the CDF underflows."""
    nu = _require_positive(nu, "nu")
    x = np.asarray(x, dtype=float)
    x_b, nu_b = np.broadcast_arrays(x, nu)
    cdf = special.stdtr(nu_b, x_b)
    with np.errstate(divide="ignore"):
        out = np.log(cdf)
    bad = cdf < 1e-300
    if np.any(bad):
        out = np.array(out, dtype=float, ndmin=1)
        out[bad.reshape(out.shape)] = _log_t_lower_tail(x_b[bad], nu_b[bad])
        out = out.reshape(np.shape(cdf))
    return _scalar_or_array(out)


# --------------------------------------------------------------------------
# root finding and reductions
# --------------------------------------------------------------------------

def brent_root(
    f: Callable[[float], float],
    bracket: Bracket,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Root of ``f`` inside ``bracket`` by Brent's method.

    Raises :class:`NoSignChangeError` when f(lo) and f(hi) share a sign and
    :class:`RootNotConvergedError` after ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    flo, fhi = f(bracket.lo), f(bracket.hi)
    if flo == 0.0:
        return float(bracket.lo)
    if fhi == 0.0:
        return float(bracket.hi)
    if np.sign(flo) == np.sign(fhi):
        raise NoSignChangeError(
            f"f({bracket.lo})={flo:.3g} and f({bracket.hi})={fhi:.3g} share a sign"
        )
    try:
        root, info = optimize.brentq(
            # a tighter xtol than requested so that |f(root)| <= tol as well
            f, bracket.lo, bracket.hi, xtol=tol * 1e-3, rtol=4 * np.finfo(float).eps,
            maxiter=max_iter, full_output=True, disp=False,
        )
    except RuntimeError as exc:  # pragma: no cover - brentq raises only when disp=True
        raise RootNotConvergedError(str(exc)) from exc
    if not info.converged:
        raise RootNotConvergedError(f"no convergence after {max_iter} iterations")
    return float(root)


def log_sum_exp(values, axis=None, keepdims: bool = False):
    """log(sum(exp(values))) with a max shift; rejects empty input.

    A plain numpy max-shift is used instead of ``scipy.special.logsumexp``,
    whose array-API dispatch dominates the cost of small inner-loop calls.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = np.max(arr, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return _scalar_or_array(out)
