"""Scaling / fixed-point side: Gibbs kernels, the f and g normalization maps,
the projective metric on positive vectors, the contraction factor, and the
randomized harnesses behind the almost-doubly-stochastic closure and shift
bounds.

Hand-computed anchors:
  mu([1,2],[1,1])   = log max(1/1, 2/1) - log min(...) wrapped as the maximal
                      cross ratio = log 2
  mu([1,2],[2,1])   = log 4
  phi([[1,2],[3,4]]) = max over column pairs of (Q_ik Q_jl)/(Q_jk Q_il) = 1.5
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otlab import dual_descent as dd
from otlab import sinkhorn_lab as sl
from otlab.problem import cost_matrix, permutation_instance, sorting_instance

positive_vectors = st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=6).map(np.array)


def test_gibbs_kernel_frozen_and_shape():
    gk = sl.gibbs_kernel(np.zeros((1, 1)), 1.0)
    np.testing.assert_allclose(gk.Q, [[math.exp(-1)]], rtol=1e-15)
    gk2 = sl.gibbs_kernel(np.array([[0.0, 2.0], [2.0, 0.0]]), 2.0)
    np.testing.assert_allclose(gk2.logQ, [[-1.0, -2.0], [-2.0, -1.0]])
    assert gk2.n == 2


def test_gibbs_kernel_rejects_bad_lam():
    with pytest.raises(ValueError):
        sl.gibbs_kernel(np.zeros((2, 2)), 0.0)


def test_f_map_fixes_columns_g_map_fixes_rows():
    rng = np.random.default_rng(0)
    A = rng.uniform(0.1, 2.0, (4, 4))
    np.testing.assert_allclose(sl.f_map(A).sum(axis=0), 0.25, rtol=1e-12)
    np.testing.assert_allclose(sl.g_map(A).sum(axis=1), 0.25, rtol=1e-12)


def test_f_map_is_column_rescaling():
    rng = np.random.default_rng(1)
    A = rng.uniform(0.1, 2.0, (3, 3))
    F = sl.f_map(A)
    # each column scaled by a single positive factor
    ratios = F / A
    np.testing.assert_allclose(ratios, np.tile(ratios[0], (3, 1)), rtol=1e-12)
    np.testing.assert_allclose(ratios[0], sl.col_fn(A), rtol=1e-12)


def test_normalizers_reject_degenerate_sums():
    with pytest.raises(ValueError):
        sl.col_fn(np.array([[1.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        sl.row_fn(np.array([[-1.0, -1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        sl.col_fn(np.ones((2, 3)))


def test_marginal_error_and_membership():
    n = 4
    A = np.full((n, n), 1.0 / n**2)
    assert sl.marginal_error(A) == 0.0
    B = sl.boundary_member(n, 0.01)
    assert sl.marginal_error(B) == pytest.approx(0.01, rel=1e-12)
    # the membership test is strict, so sit a hair above the rounded boundary
    ok, achieved = sl.marginal_membership(B, 0.01 * (1 + 1e-9))
    assert ok and achieved == pytest.approx(0.01, rel=1e-12)
    assert not sl.marginal_membership(B, 0.009)[0]


def test_hilbert_metric_frozen_values():
    assert sl.hilbert_metric([1.0, 2.0], [1.0, 1.0]) == pytest.approx(math.log(2), rel=1e-12)
    assert sl.hilbert_metric([1.0, 2.0], [2.0, 1.0]) == pytest.approx(math.log(4), rel=1e-12)
    assert sl.hilbert_metric([3.0, 3.0], [7.0, 7.0]) == 0.0


@settings(max_examples=80, deadline=None)
@given(w=positive_vectors, c=st.floats(1e-3, 1e3))
def test_hilbert_metric_scale_invariant(w, c):
    wp = w[::-1].copy()
    a = sl.hilbert_metric(w, wp)
    assert sl.hilbert_metric(c * w, wp) == pytest.approx(a, rel=1e-9, abs=1e-12)
    assert a >= 0.0


@settings(max_examples=80, deadline=None)
@given(data=st.data(), n=st.integers(2, 5))
def test_hilbert_metric_symmetry_and_triangle(data, n):
    elt = st.floats(1e-2, 1e2)
    w = np.array(data.draw(st.lists(elt, min_size=n, max_size=n)))
    wp = np.array(data.draw(st.lists(elt, min_size=n, max_size=n)))
    wq = np.array(data.draw(st.lists(elt, min_size=n, max_size=n)))
    ab = sl.hilbert_metric(w, wp)
    assert sl.hilbert_metric(wp, w) == pytest.approx(ab, rel=1e-12, abs=1e-12)
    assert ab <= sl.hilbert_metric(w, wq) + sl.hilbert_metric(wq, wp) + 1e-9


def test_hilbert_metric_logs_matches_linear():
    rng = np.random.default_rng(5)
    w, wp = rng.uniform(0.5, 2.0, 6), rng.uniform(0.5, 2.0, 6)
    assert sl.hilbert_metric_logs(np.log(w), np.log(wp)) == pytest.approx(
        sl.hilbert_metric(w, wp), rel=1e-12
    )


def _phi_brute(Q):
    n = Q.shape[0]
    best = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    best = max(best, Q[i, k] * Q[j, l] / (Q[j, k] * Q[i, l]))
    return best


def test_cross_ratio_frozen_value():
    Q = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert sl.max_cross_ratio(Q) == pytest.approx(1.5, rel=1e-12)
    assert sl.log_max_cross_ratio(np.log(Q)) == pytest.approx(math.log(1.5), rel=1e-12)


def test_cross_ratio_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(10):
        Q = rng.uniform(0.2, 3.0, (4, 4))
        assert sl.max_cross_ratio(Q) == pytest.approx(_phi_brute(Q), rel=1e-10)


def test_contraction_factor_identity():
    # tanh(log(phi)/4) must equal (sqrt(phi)-1)/(sqrt(phi)+1)
    for phi in (1.0, 1.5, 7.0, 1e8):
        direct = (math.sqrt(phi) - 1) / (math.sqrt(phi) + 1)
        assert sl.contraction_factor_from_log(math.log(phi)) == pytest.approx(direct, rel=1e-12)


def test_contraction_factor_survives_tiny_lam():
    # phi itself overflows float64 below lam ~ 0.01; the log-domain route must
    # return a finite factor. tanh saturates to exactly 1.0 once log(phi)/4
    # passes ~19, which is the honest float64 answer at this scale.
    gk = sl.gibbs_kernel(cost_matrix(permutation_instance(4, 1)), 0.005)
    eta = sl.contraction_factor(gk)
    assert np.isfinite(eta) and 0.0 < eta <= 1.0
    # a merely-small lam still resolves a strict contraction
    gk = sl.gibbs_kernel(cost_matrix(permutation_instance(4, 1)), 0.05)
    assert sl.contraction_factor(gk) < 1.0


def test_sinkhorn_solve_reaches_fixed_point():
    gk = sl.gibbs_kernel(cost_matrix(permutation_instance(5, 3, 0.5)), 0.5)
    res = sl.sinkhorn_solve(gk, tol=1e-12)
    assert res.eps_star <= 1e-12
    np.testing.assert_allclose(res.plan.sum(axis=0), 0.2, atol=2e-12)
    np.testing.assert_allclose(res.plan.sum(axis=1), 0.2, atol=2e-12)
    # returned scaling reproduces the plan and carries the sum-zero gauge
    np.testing.assert_allclose(np.exp(res.log_plan), res.plan, rtol=1e-10)
    assert res.scaling.logw.sum() == pytest.approx(0.0, abs=1e-12)


def test_sinkhorn_budget_exhaustion_raises_with_progress():
    gk = sl.gibbs_kernel(cost_matrix(sorting_instance([0.5, 0.75, 0.25, 0.0])), 0.005)
    with pytest.raises(sl.SinkhornError) as exc:
        sl.sinkhorn_solve(gk, tol=1e-12, max_sweeps=5)
    assert 0.0 < exc.value.eps_star < 1.0


def test_dual_lift_round_trip():
    rng = np.random.default_rng(7)
    lam = 0.3
    u, v = rng.normal(0, 0.2, 4), rng.normal(0, 0.2, 4)
    pair = sl.scaling_from_duals(u, v, lam)
    ub, vb = sl.dual_lift(pair, lam)
    np.testing.assert_allclose(ub, u, rtol=1e-12)
    np.testing.assert_allclose(vb, v, rtol=1e-12)


def test_scaled_log_plan_is_descent_kernel():
    rng = np.random.default_rng(3)
    lam = 0.4
    C = rng.uniform(0, 1, (3, 3))
    u, v = rng.normal(0, 0.2, 3), rng.normal(0, 0.2, 3)
    gk = sl.gibbs_kernel(C, lam)
    logP = sl.scaled_log_plan(gk, sl.scaling_from_duals(u, v, lam))
    k = dd.kernel(C, dd.DualIterate(u=u, v=v, step=0), lam)
    np.testing.assert_allclose(logP, k.logM, atol=1e-12)


def test_gauge_fixed_preserves_plan():
    rng = np.random.default_rng(9)
    pair = sl.ScalingPair(logw=rng.normal(size=4), logq=rng.normal(size=4))
    fixed = pair.gauge_fixed()
    assert fixed.logw.sum() == pytest.approx(0.0, abs=1e-12)
    outer = pair.logw[:, None] + pair.logq[None, :]
    np.testing.assert_allclose(fixed.logw[:, None] + fixed.logq[None, :], outer, atol=1e-12)


def test_sweep_contracts_toward_fixed_point():
    gk = sl.gibbs_kernel(cost_matrix(permutation_instance(4, 2, 0.8)), 0.8)
    hist = sl.contraction_history(gk, sweeps=12)
    eta = hist["eta"]
    mu = hist["mu_w"]
    assert mu[0] > 0
    for m in range(len(mu) - 1):
        if mu[m] > 1e-12:
            assert mu[m + 1] <= eta * mu[m] + 1e-9


def test_normalization_shift_equals_normalizer_spread():
    rng = np.random.default_rng(4)
    A = rng.uniform(0.2, 2.0, (3, 3))
    sf, sg = sl.normalization_mu_shifts(A)
    c, r = np.log(sl.col_fn(A)), np.log(sl.row_fn(A))
    assert sf == pytest.approx(c.max() - c.min(), rel=1e-12)
    assert sg == pytest.approx(r.max() - r.min(), rel=1e-12)


def test_random_near_scaled_respects_cap():
    rng = np.random.default_rng(6)
    for n in (2, 5):
        cap = 1.0 / (3 * n) * 0.9
        A, eps = sl.random_near_scaled(rng, n, cap)
        assert np.all(A > 0)
        assert eps == pytest.approx(sl.marginal_error(A), rel=1e-12)
        assert eps <= cap


def test_harnesses_small_runs_clean():
    rep = sl.closure_harness(trials=40, ns=(2, 3), seed=1)
    assert rep["violations"] == 0 and rep["trials"] == 40
    assert 0.0 < rep["worst_slack"] <= 1.0
    rep = sl.shift_harness(trials=40, ns=(2, 3), seed=1)
    assert rep["violations"] == 0 and rep["trials"] == 40


def test_closure_bound_is_tight_enough_to_be_nontrivial():
    """One normalization can genuinely inflate the error; make sure the
    harness would notice a broken bound by checking the slack is not
    vacuously tiny."""
    rep = sl.closure_harness(trials=120, ns=(2, 3, 5), seed=3)
    assert rep["worst_slack"] > 0.05


def test_scaling_convergence_bound_preconditions():
    with pytest.raises(sl.BoundNotApplicableError):
        sl.scaling_convergence_bound(2, 1.0, 1.0, eta=0.5, depth=10)  # too shallow
    with pytest.raises(sl.BoundNotApplicableError):
        sl.scaling_convergence_bound(2, 0.1, 1.0, eta=1.0, depth=10**9)  # no contraction
    n, r, lam, eta = 2, 0.25, 1.0, 0.2
    depth = int(64 * n**3 * math.exp(3 * r / lam) * r) + 1
    bound = sl.scaling_convergence_bound(n, r, lam, eta, depth)
    expected = 36 * n**1.5 * math.exp(r / lam) * math.sqrt(r) / (math.sqrt(depth) * (1 - eta))
    assert bound == pytest.approx(expected, rel=1e-12)
