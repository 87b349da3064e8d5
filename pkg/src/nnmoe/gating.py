"""Softmax gating network and its IRLS (damped Newton) maximizer.

The last component is the reference: its coefficient vector is fixed at
zero, so the free coefficients form a ``(K - 1, q + 1)`` matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .numerics import log_sum_exp

__all__ = [
    "GatingParams",
    "IRLSOptions",
    "IRLSResult",
    "gate_log_probs",
    "gate_probs",
    "q1_value",
    "q1_value_grad_hess",
    "irls_maximize_q1",
]


@dataclass(frozen=True)
class GatingParams:
    alpha: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.alpha, dtype=float, ndmin=2)
        if a.ndim != 2:
            raise ValueError("alpha must be a (K-1) x (q+1) matrix")
        if not np.all(np.isfinite(a)):
            raise ValueError("alpha must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def K(self) -> int:
        return self.alpha.shape[0] + 1

    @property
    def q(self) -> int:
        return self.alpha.shape[1] - 1

    @classmethod
    def zeros(cls, K: int, q: int) -> "GatingParams":
        return cls(np.zeros((K - 1, q + 1)))


def _as_alpha(alpha) -> np.ndarray:
    if isinstance(alpha, GatingParams):
        return alpha.alpha
    return np.asarray(alpha, dtype=float)


def _check_dims(alpha: np.ndarray, R: np.ndarray) -> None:
    if alpha.ndim != 2 or R.ndim != 2 or alpha.shape[1] != R.shape[1]:
        raise ValueError(
            f"dimension mismatch: alpha {alpha.shape} vs design {R.shape}"
        )


def gate_log_probs(alpha, R) -> np.ndarray:
    """n x K matrix of log pi_k(r_i; alpha)."""
    alpha = _as_alpha(alpha)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    _check_dims(alpha, R)
    logits = np.concatenate([R @ alpha.T, np.zeros((R.shape[0], 1))], axis=1)
    return logits - log_sum_exp(logits, axis=1, keepdims=True)


def gate_probs(alpha, R) -> np.ndarray:
    """Gate probabilities; a single design row gives a length-K vector."""
    single = np.ndim(R) == 1
    out = np.exp(gate_log_probs(alpha, R))
    return out[0] if single else out


def q1_value(alpha, tau, R) -> float:
    """sum_i sum_k tau_ik log pi_k(r_i; alpha)."""
    logp = gate_log_probs(alpha, R)
    tau = np.asarray(tau, dtype=float)
    # 0 * log(0) contributes nothing
    return float(np.sum(np.where(tau > 0, tau * logp, 0.0)))


def q1_value_grad_hess(alpha, tau, R):
    """Value, gradient and Hessian of Q1 over the flattened free coefficients.

    The gradient is ordered block by block (component 1 first), each block
    of length q + 1.
    """
    alpha = _as_alpha(alpha)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    _check_dims(alpha, R)
    if tau.shape != (R.shape[0], alpha.shape[0] + 1):
        raise ValueError(f"tau has shape {tau.shape}, expected {(R.shape[0], alpha.shape[0] + 1)}")
    logp = gate_log_probs(alpha, R)
    value = float(np.sum(np.where(tau > 0, tau * logp, 0.0)))
    km1, d = alpha.shape
    pi = np.exp(logp[:, :km1])
    grad = ((tau[:, :km1] - pi).T @ R).reshape(-1)
    # per-observation multinomial covariance diag(pi) - pi pi^T on free blocks
    cov = -pi[:, :, None] * pi[:, None, :]
    idx = np.arange(km1)
    cov[:, idx, idx] += pi
    hess = -np.einsum("ikl,ia,ib->kalb", cov, R, R).reshape(km1 * d, km1 * d)
    return value, grad, hess


@dataclass(frozen=True)
class IRLSOptions:
    max_iter: int = 50
    tol: float = 1e-8
    max_halvings: int = 30
    ridge: float = 1e-8
    clip: float = 1e3


@dataclass
class IRLSResult:
    alpha: np.ndarray
    trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def gate(self) -> GatingParams:
        return GatingParams(self.alpha)


def _newton_direction(grad: np.ndarray, hess: np.ndarray, ridge: float) -> np.ndarray:
    info = -hess
    try:
        c = linalg.cho_factor(info, check_finite=False)
        rcond = np.min(np.diag(c[0])) ** 2 / max(np.max(np.diag(info)), 1e-300)
        if rcond > 1e-12:
            return linalg.cho_solve(c, grad, check_finite=False)
    except linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.mean(np.diag(info))))
    damped = info + ridge * scale * np.eye(info.shape[0])
    return linalg.solve(damped, grad, assume_a="sym", check_finite=False)


def irls_maximize_q1(alpha0, tau, R, opts: IRLSOptions | None = None) -> IRLSResult:
    """Maximize Q1 by Newton steps with step halving.

    A step is accepted only if it does not decrease Q1, so the returned
    trace is non-decreasing. Iteration stops when the relative change of Q1
    falls below ``opts.tol`` or after ``opts.max_iter`` Newton steps.
    """
    opts = opts or IRLSOptions()
    alpha = np.array(_as_alpha(alpha0), dtype=float)
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if alpha.shape[0] == 0:
        return IRLSResult(alpha, [q1_value(alpha, tau, R)], 0, True)
    value, grad, hess = q1_value_grad_hess(alpha, tau, R)
    trace = [value]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        flat = alpha.reshape(-1)
        step = _newton_direction(grad, hess, opts.ridge)
        # coordinates held at the clip bound and pushing outward stay fixed;
        # the Newton system is re-solved on the remaining ones
        pinned = (np.abs(flat) >= opts.clip) & (np.sign(step) == np.sign(flat))
        if np.any(pinned):
            free = ~pinned
            if not np.any(free):
                converged = True
                break
            step = np.zeros_like(flat)
            step[free] = _newton_direction(grad[free], hess[np.ix_(free, free)], opts.ridge)
        step = step.reshape(alpha.shape)
        t = 1.0
        accepted = None
        for _ in range(opts.max_halvings + 1):
            cand = np.clip(alpha + t * step, -opts.clip, opts.clip)
            cand_value = q1_value(cand, tau, R)
            if cand_value >= value:
                accepted = (cand, cand_value)
                break
            t *= 0.5
        if accepted is None:
            # no ascent along the Newton direction at machine precision
            converged = True
            break
        old = value
        alpha, value = accepted
        trace.append(value)
        if abs(value - old) <= opts.tol * max(abs(old), 1e-300) or value == old:
            converged = True
            break
        value, grad, hess = q1_value_grad_hess(alpha, tau, R)
    return IRLSResult(alpha, trace, it, converged)
