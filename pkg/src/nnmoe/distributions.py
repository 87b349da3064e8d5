"""Expert response laws: normal, skew-normal, Student t and skew t.

Every log-density accepts numpy arrays for the observation and for the
parameter fields, with ordinary broadcasting. Samplers follow the
stochastic representations of each law and take a seed or a
:class:`numpy.random.Generator`.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import numerics as nm

__all__ = [
    "Family",
    "NormalParams",
    "SkewNormalParams",
    "StudentTParams",
    "SkewTParams",
    "Moments",
    "UndefinedMomentError",
    "normal_logpdf",
    "skew_normal_logpdf",
    "student_t_logpdf",
    "skew_t_logpdf",
    "expert_logpdf",
    "normal_sample",
    "skew_normal_sample",
    "student_t_sample",
    "skew_t_sample",
    "expert_sample",
    "skew_t_xi",
    "expert_moments",
    "delta_from_lambda",
    "lambda_from_delta",
]

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]
_LOG2 = np.log(2.0)


class Family(str, Enum):
    NORMAL = "nmoe"
    SKEW_NORMAL = "snmoe"
    STUDENT_T = "tmoe"
    SKEW_T = "stmoe"

    @property
    def has_skew(self) -> bool:
        return self in (Family.SKEW_NORMAL, Family.SKEW_T)

    @property
    def has_dof(self) -> bool:
        return self in (Family.STUDENT_T, Family.SKEW_T)

    @classmethod
    def parse(cls, value: Union[str, "Family"]) -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower()
        aliases = {
            "normal": cls.NORMAL, "n": cls.NORMAL,
            "skewnormal": cls.SKEW_NORMAL, "skew-normal": cls.SKEW_NORMAL, "sn": cls.SKEW_NORMAL,
            "t": cls.STUDENT_T, "studentt": cls.STUDENT_T, "student-t": cls.STUDENT_T,
            "skewt": cls.SKEW_T, "skew-t": cls.SKEW_T, "st": cls.SKEW_T,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


def delta_from_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    out = lam / np.sqrt(1.0 + lam * lam)
    return float(out) if out.ndim == 0 else out


def lambda_from_delta(delta):
    delta = np.asarray(delta, dtype=float)
    out = delta / np.sqrt(1.0 - delta * delta)
    return float(out) if out.ndim == 0 else out


def _check_scale(sigma2) -> None:
    if not np.all(np.asarray(sigma2) > 0):
        raise ValueError("sigma2 must be > 0")


def _check_dof(nu) -> None:
    if not np.all(np.asarray(nu) > 0):
        raise ValueError("nu must be > 0")


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma2: float

    def __post_init__(self) -> None:
        _check_scale(self.sigma2)


@dataclass(frozen=True)
class SkewNormalParams:
    mu: float
    sigma2: float
    lam: float = 0.0

    def __post_init__(self) -> None:
        _check_scale(self.sigma2)

    @property
    def delta(self):
        return delta_from_lambda(self.lam)


@dataclass(frozen=True)
class StudentTParams:
    mu: float
    sigma2: float
    nu: float

    def __post_init__(self) -> None:
        _check_scale(self.sigma2)
        _check_dof(self.nu)


@dataclass(frozen=True)
class SkewTParams:
    mu: float
    sigma2: float
    lam: float
    nu: float

    def __post_init__(self) -> None:
        _check_scale(self.sigma2)
        _check_dof(self.nu)

    @property
    def delta(self):
        return delta_from_lambda(self.lam)


AnyParams = Union[NormalParams, SkewNormalParams, StudentTParams, SkewTParams]


# --------------------------------------------------------------------------
# log-densities
# --------------------------------------------------------------------------

def _standardize(y, mu, sigma2):
    sigma = np.sqrt(np.asarray(sigma2, dtype=float))
    return (np.asarray(y, dtype=float) - mu) / sigma, np.log(sigma)


def normal_logpdf(y, p: NormalParams):
    d, log_sigma = _standardize(y, p.mu, p.sigma2)
    return nm.std_normal_logpdf(d) - log_sigma


def skew_normal_logpdf(y, p: SkewNormalParams):
    """log[(2/sigma) phi(d) Phi(lam d)] with d = (y - mu)/sigma."""
    d, log_sigma = _standardize(y, p.mu, p.sigma2)
    return _LOG2 - log_sigma + nm.std_normal_logpdf(d) + nm.std_normal_logcdf(p.lam * d)


def student_t_logpdf(y, p: StudentTParams):
    d, log_sigma = _standardize(y, p.mu, p.sigma2)
    return nm.student_t_logpdf(d, p.nu) - log_sigma


def skew_t_cdf_arg(d, lam, nu):
    """Argument of the T_{nu+1} factor of the skew-t density."""
    return lam * d * np.sqrt((nu + 1.0) / (nu + d * d))


def skew_t_logpdf(y, p: SkewTParams):
    """log[(2/sigma) t_nu(d) T_{nu+1}(lam d sqrt((nu+1)/(nu+d^2)))]."""
    d, log_sigma = _standardize(y, p.mu, p.sigma2)
    nu = np.asarray(p.nu, dtype=float)
    m = skew_t_cdf_arg(d, p.lam, nu)
    return _LOG2 - log_sigma + nm.student_t_logpdf(d, nu) + nm.student_t_logcdf(m, nu + 1.0)


def expert_logpdf(family: Family, y, mu, sigma2, lam=None, nu=None):
    """Family dispatch on raw arrays (used by the likelihood code)."""
    family = Family.parse(family)
    if family is Family.NORMAL:
        return normal_logpdf(y, NormalParams(mu, sigma2))
    if family is Family.SKEW_NORMAL:
        return skew_normal_logpdf(y, SkewNormalParams(mu, sigma2, lam))
    if family is Family.STUDENT_T:
        return student_t_logpdf(y, StudentTParams(mu, sigma2, nu))
    return skew_t_logpdf(y, SkewTParams(mu, sigma2, lam, nu))


# --------------------------------------------------------------------------
# samplers
# --------------------------------------------------------------------------

def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _size(size, *fields):
    """Default sample shape: the broadcast shape of the parameter fields."""
    if size is not None:
        return size
    shape = np.broadcast(*[np.asarray(f, dtype=float) for f in fields if f is not None]).shape
    return shape or None


def normal_sample(p: NormalParams, seed: SeedLike = None, size=None):
    rng = _rng(seed)
    size = _size(size, p.mu, p.sigma2)
    return p.mu + np.sqrt(p.sigma2) * rng.standard_normal(size)


def _standard_skew_normal(lam, rng, size):
    # delta |U| + sqrt(1 - delta^2) E with U, E iid N(0, 1)
    delta = delta_from_lambda(lam)
    u = np.abs(rng.standard_normal(size))
    e = rng.standard_normal(size)
    return delta * u + np.sqrt(1.0 - np.asarray(delta) ** 2) * e


def _gamma_weights(nu, rng, size):
    # W ~ Gamma(shape nu/2, rate nu/2)
    nu = np.asarray(nu, dtype=float)
    return rng.standard_gamma(0.5 * nu, size) / (0.5 * nu)


def skew_normal_sample(p: SkewNormalParams, seed: SeedLike = None, size=None):
    rng = _rng(seed)
    size = _size(size, p.mu, p.sigma2, p.lam)
    return p.mu + np.sqrt(p.sigma2) * _standard_skew_normal(p.lam, rng, size)


def student_t_sample(p: StudentTParams, seed: SeedLike = None, size=None):
    rng = _rng(seed)
    size = _size(size, p.mu, p.sigma2, p.nu)
    e = rng.standard_normal(size)
    w = _gamma_weights(p.nu, rng, size)
    return p.mu + np.sqrt(p.sigma2) * e / np.sqrt(w)


def skew_t_sample(p: SkewTParams, seed: SeedLike = None, size=None):
    rng = _rng(seed)
    size = _size(size, p.mu, p.sigma2, p.lam, p.nu)
    u = _standard_skew_normal(p.lam, rng, size)
    w = _gamma_weights(p.nu, rng, size)
    return p.mu + np.sqrt(p.sigma2) * u / np.sqrt(w)


def expert_sample(family: Family, mu, sigma2, lam=None, nu=None, seed: SeedLike = None, size=None):
    family = Family.parse(family)
    if family is Family.NORMAL:
        return normal_sample(NormalParams(mu, sigma2), seed, size)
    if family is Family.SKEW_NORMAL:
        return skew_normal_sample(SkewNormalParams(mu, sigma2, lam), seed, size)
    if family is Family.STUDENT_T:
        return student_t_sample(StudentTParams(mu, sigma2, nu), seed, size)
    return skew_t_sample(SkewTParams(mu, sigma2, lam, nu), seed, size)


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------

class UndefinedMomentError(ValueError):
    """A requested mean or variance does not exist for the given nu."""


@dataclass(frozen=True)
class Moments:
    """Mean and variance of an expert; ``None`` marks a moment that does not exist."""

    mean: Optional[float]
    variance: Optional[float]

    @property
    def has_mean(self) -> bool:
        return self.mean is not None

    @property
    def has_variance(self) -> bool:
        return self.variance is not None


def skew_t_xi(nu):
    """xi(nu) = sqrt(nu/pi) Gamma((nu-1)/2) / Gamma(nu/2), defined for nu > 1."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 1):
        raise UndefinedMomentError("xi(nu) requires nu > 1")
    # Gamma((nu-1)/2)/Gamma(nu/2) = exp(-log_gamma_ratio((nu-1)/2, 1/2))
    out = np.sqrt(nu / np.pi) * np.exp(-nm.log_gamma_ratio(0.5 * (nu - 1.0), 0.5))
    return float(out) if out.ndim == 0 else out


def expert_moments(family: Family, params: AnyParams) -> Moments:
    """Analytic mean and variance of one expert law.

    For t and skew-t experts the mean exists only for nu > 1 and the
    variance only for nu > 2; missing moments come back as ``None``.
    """
    family = Family.parse(family)
    mu, s2 = float(params.mu), float(params.sigma2)
    sigma = np.sqrt(s2)
    if family is Family.NORMAL:
        return Moments(mu, s2)
    if family is Family.SKEW_NORMAL:
        delta = float(delta_from_lambda(params.lam))
        return Moments(mu + np.sqrt(2.0 / np.pi) * delta * sigma,
                       (1.0 - 2.0 / np.pi * delta * delta) * s2)
    nu = float(params.nu)
    if family is Family.STUDENT_T:
        mean = mu if nu > 1 else None
        var = nu / (nu - 2.0) * s2 if nu > 2 else None
        return Moments(mean, var)
    delta = float(delta_from_lambda(params.lam))
    if nu <= 1:
        return Moments(None, None)
    xi = float(skew_t_xi(nu))
    mean = mu + sigma * delta * xi
    var = (nu / (nu - 2.0) - delta * delta * xi * xi) * s2 if nu > 2 else None
    return Moments(mean, var)
