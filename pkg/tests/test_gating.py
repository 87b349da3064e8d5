from __future__ import annotations

import numpy as np
import pytest

from nnmoe import gating as gt

from oracles import central_difference_gradient


def _instance(seed, K=3, q=2, n=60):
    rng = np.random.default_rng(seed)
    R = np.vander(rng.uniform(-1, 1, n), q + 1, increasing=True)
    alpha = rng.normal(size=(K - 1, q + 1))
    tau = rng.dirichlet(np.ones(K), size=n)
    return alpha, tau, R


def test_probs_sum_to_one_and_reference_is_zero():
    alpha, _, R = _instance(0)
    p = gt.gate_probs(alpha, R)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)
    # logits relative to the last component are exactly R alpha^T
    np.testing.assert_allclose(np.log(p[:, :-1] / p[:, -1:]), R @ alpha.T, atol=1e-12)


def test_zero_gate_is_uniform():
    p = gt.gate_probs(gt.GatingParams.zeros(4, 1), np.ones((3, 2)))
    np.testing.assert_allclose(p, 0.25)


def test_single_row_returns_vector():
    alpha, _, R = _instance(1)
    assert gt.gate_probs(alpha, R[0]).shape == (3,)


def test_extreme_logits_stay_finite():
    p = gt.gate_probs(np.array([[0.0, 1e3]]), np.array([[1.0, 1.0], [1.0, -1.0]]))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        gt.gate_probs(np.zeros((1, 3)), np.ones((4, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_and_hessian_by_finite_differences(seed):
    alpha, tau, R = _instance(seed)
    _, grad, hess = gt.q1_value_grad_hess(alpha, tau, R)
    f = lambda a: gt.q1_value(a.reshape(alpha.shape), tau, R)
    g_fd = central_difference_gradient(f, alpha.reshape(-1))
    np.testing.assert_allclose(grad, g_fd, rtol=1e-6, atol=1e-8)
    gfun = lambda a: gt.q1_value_grad_hess(a.reshape(alpha.shape), tau, R)[1]
    H_fd = np.array([(gfun(alpha.reshape(-1) + e) - gfun(alpha.reshape(-1) - e)) / 2e-5
                     for e in np.eye(alpha.size) * 1e-5]).T
    np.testing.assert_allclose(hess, H_fd, rtol=1e-5, atol=1e-6)


def test_irls_reaches_stationary_point_monotonically():
    alpha, tau, R = _instance(7, K=4, q=1, n=200)
    res = gt.irls_maximize_q1(np.zeros_like(alpha), tau, R)
    assert res.converged
    assert np.all(np.diff(res.trace) >= -1e-12)
    _, grad, _ = gt.q1_value_grad_hess(res.alpha, tau, R)
    assert np.max(np.abs(grad)) < 1e-5


def test_irls_separable_data_is_clipped():
    R = np.vander(np.linspace(-1, 1, 20), 2, increasing=True)
    tau = np.column_stack([(R[:, 1] > 0).astype(float), (R[:, 1] <= 0).astype(float)])
    res = gt.irls_maximize_q1(np.zeros((1, 2)), tau, R, gt.IRLSOptions(max_iter=200, clip=50.0))
    assert np.all(np.abs(res.alpha) <= 50.0)
    assert np.all(np.diff(res.trace) >= 0)


def test_single_component_is_trivial():
    res = gt.irls_maximize_q1(np.zeros((0, 2)), np.ones((5, 1)), np.ones((5, 2)))
    assert res.converged and res.alpha.shape == (0, 2)
