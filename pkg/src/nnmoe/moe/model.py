"""Data types shared by the likelihood, E-step, CM-steps and fit driver."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..distributions import Family, delta_from_lambda
from ..gating import GatingParams

__all__ = [
    "MoESpec",
    "ExpertParams",
    "MoEParams",
    "Dataset",
    "EStepCache",
    "design_matrix",
]


def design_matrix(x, order: int) -> np.ndarray:
    """Rows (1, x, x^2, ..., x^order)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.vander(x, order + 1, increasing=True)


@dataclass(frozen=True)
class MoESpec:
    family: Family
    K: int
    p: int = 1
    q: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family.parse(self.family))
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        if int(self.p) != self.p or self.p < 0 or int(self.q) != self.q or self.q < 0:
            raise ValueError("p and q must be non-negative integers")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "q", int(self.q))

    def with_K(self, K: int) -> "MoESpec":
        return replace(self, K=K)


@dataclass(frozen=True)
class ExpertParams:
    beta: np.ndarray
    sigma2: float
    lam: Optional[float] = None
    nu: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")
        if self.nu is not None and not self.nu > 0:
            raise ValueError("nu must be > 0")

    @property
    def delta(self) -> Optional[float]:
        return None if self.lam is None else float(delta_from_lambda(self.lam))


@dataclass
class MoEParams:
    """All parameters of a K-component mixture of experts.

    Expert parameters are stored column-wise: ``beta`` is K x (p+1),
    ``sigma2``, ``lam`` and ``nu`` have length K. ``lam`` is ``None`` for
    symmetric families and ``nu`` is ``None`` for normal-tailed ones.
    """

    alpha: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    lam: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.beta = np.array(self.beta, dtype=float, ndmin=2)
        K = self.beta.shape[0]
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim == 1 and K > 1:
            alpha = alpha.reshape(K - 1, -1)
        if alpha.ndim != 2 or alpha.shape[0] != K - 1:
            raise ValueError(f"alpha must have shape (K-1, q+1) = ({K - 1}, q+1), got {alpha.shape}")
        self.alpha = alpha
        self.sigma2 = np.array(self.sigma2, dtype=float).reshape(K)
        if self.lam is not None:
            self.lam = np.array(self.lam, dtype=float).reshape(K)
        if self.nu is not None:
            self.nu = np.array(self.nu, dtype=float).reshape(K)
        self.validate()

    def validate(self) -> None:
        if not np.all(np.isfinite(self.alpha)) or not np.all(np.isfinite(self.beta)):
            raise ValueError("gate and regression coefficients must be finite")
        if not np.all(self.sigma2 > 0):
            raise ValueError("sigma2 must be > 0")
        if self.lam is not None and not np.all(np.isfinite(self.lam)):
            raise ValueError("lambda must be finite")
        if self.nu is not None and not np.all(self.nu > 0):
            raise ValueError("nu must be > 0")

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def q(self) -> int:
        return self.alpha.shape[1] - 1

    @property
    def delta(self) -> Optional[np.ndarray]:
        return None if self.lam is None else delta_from_lambda(self.lam)

    @property
    def gate(self) -> GatingParams:
        return GatingParams(self.alpha)

    @property
    def experts(self) -> list[ExpertParams]:
        return [
            ExpertParams(
                self.beta[k],
                float(self.sigma2[k]),
                None if self.lam is None else float(self.lam[k]),
                None if self.nu is None else float(self.nu[k]),
            )
            for k in range(self.K)
        ]

    @classmethod
    def from_parts(cls, gate: GatingParams | np.ndarray, experts: list[ExpertParams]) -> "MoEParams":
        alpha = gate.alpha if isinstance(gate, GatingParams) else np.asarray(gate, dtype=float)
        lam = None if experts[0].lam is None else [e.lam for e in experts]
        nu = None if experts[0].nu is None else [e.nu for e in experts]
        return cls(alpha, np.stack([e.beta for e in experts]),
                   [e.sigma2 for e in experts], lam, nu)

    def copy(self) -> "MoEParams":
        return MoEParams(
            self.alpha.copy(), self.beta.copy(), self.sigma2.copy(),
            None if self.lam is None else self.lam.copy(),
            None if self.nu is None else self.nu.copy(),
        )

    def conform(self, family: Family) -> "MoEParams":
        """Drop or add skewness/dof slots so the params match ``family``."""
        family = Family.parse(family)
        out = self.copy()
        if family.has_skew and out.lam is None:
            out.lam = np.zeros(self.K)
        if not family.has_skew:
            out.lam = None
        if family.has_dof and out.nu is None:
            out.nu = np.full(self.K, 30.0)
        if not family.has_dof:
            out.nu = None
        return out

    def permuted(self, perm) -> "MoEParams":
        """Reorder components so new component j is old component ``perm[j]``.

        The gate is re-expressed relative to the new last component.
        """
        perm = np.asarray(perm, dtype=int)
        full = np.vstack([self.alpha, np.zeros((1, self.alpha.shape[1]))])[perm]
        alpha = full[:-1] - full[-1]
        return MoEParams(
            alpha, self.beta[perm], self.sigma2[perm],
            None if self.lam is None else self.lam[perm],
            None if self.nu is None else self.nu[perm],
        )


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    p: int = 1
    q: int = 1
    X: np.ndarray = field(init=False, repr=False)
    R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.size < 1 or self.x.shape != self.y.shape:
            raise ValueError("x and y must be non-empty and of equal length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("x and y must be finite")
        self.X = design_matrix(self.x, self.p)
        self.R = design_matrix(self.x, self.q)

    @property
    def n(self) -> int:
        return self.x.size

    @classmethod
    def for_spec(cls, x, y, spec: MoESpec) -> "Dataset":
        return cls(x, y, spec.p, spec.q)


@dataclass
class EStepCache:
    """Per-observation, per-component conditional expectations.

    ``e1``/``e2`` hold E[U|y] and E[U^2|y] for skew-normal experts and
    E[WU|y], E[WU^2|y] for skew-t experts. ``e3`` holds E[log W|y]
    (exact for t experts, one-step-late for skew-t experts). Fields a
    family does not use are ``None``.
    """

    tau: np.ndarray
    log_comp: np.ndarray
    loglik: float
    d: np.ndarray
    w: Optional[np.ndarray] = None
    e1: Optional[np.ndarray] = None
    e2: Optional[np.ndarray] = None
    e3: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
