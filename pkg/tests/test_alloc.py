import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microgrid_risk.alloc import (
    CP,
    EP,
    Allocation,
    ReguEnsemble,
    project_feasible,
    solve,
    solve_correlated,
    solve_uncorrelated,
    verify_kkt,
)
from microgrid_risk.exceptions import InfeasibleDemandError, InvalidArgumentError

from oracles import random_allocation_instance, simplex_grid_full, simplex_grid_min

CP_INSTANCE = ReguEnsemble.uncorrelated([1.0, 1.0], [2.0, 1.0], 1.8)


def assert_feasible(result, mu, demand):
    w = result.weights
    assert np.all(w >= 0.0)
    assert abs(w.sum() - 1.0) <= 1e-10
    assert mu @ w >= demand - 1e-8


def test_symmetric_ep():
    result = solve_uncorrelated([1.0, 1.0], [3.0, 3.0], 1.0)
    assert result.kind == EP
    np.testing.assert_allclose(result.weights, [0.5, 0.5], atol=1e-12)
    assert result.gamma == 0.0
    assert result.objective == pytest.approx(0.25)
    assert result.achieved_mean == pytest.approx(3.0)


def test_weighted_ep():
    result = solve_uncorrelated([1.0, 2.0], [3.0, 3.0], 1.0)
    assert result.kind == EP
    np.testing.assert_allclose(result.weights, [2 / 3, 1 / 3], atol=1e-12)
    # Cross-check against the simplex grid at resolution 1e-3.
    grid = simplex_grid_full(np.diag([1.0, 2.0]), np.array([3.0, 3.0]), 1.0)
    assert result.objective <= grid + 1e-12
    assert grid - result.objective < 1e-5


def test_critical_production():
    result = solve(CP_INSTANCE)
    assert result.kind == CP
    np.testing.assert_allclose(result.weights, [0.8, 0.2], atol=1e-10)
    assert result.gamma == pytest.approx(0.6, abs=1e-10)
    assert result.delta == pytest.approx(0.4, abs=1e-10)
    assert result.achieved_mean == pytest.approx(1.8, abs=1e-10)
    assert result.multipliers == (result.gamma, result.delta)


def test_corner_solution_drops_a_unit():
    # The demand forces all weight onto the only unit able to meet it.
    result = solve_uncorrelated([1.0, 1.0, 1.0], [5.0, 1.0, 1.0], 5.0)
    assert result.kind == CP
    np.testing.assert_allclose(result.weights, [1.0, 0.0, 0.0], atol=1e-10)
    assert verify_kkt(ReguEnsemble.uncorrelated([1.0] * 3, [5.0, 1.0, 1.0], 5.0), result).passed


def test_infeasible_demand_rejected():
    with pytest.raises(InfeasibleDemandError):
        solve_uncorrelated([1.0, 1.0], [3.0, 3.0], 3.5)
    with pytest.raises(InfeasibleDemandError):
        solve_correlated(ReguEnsemble([3.0, 3.0], [[1.0, 0.5], [0.5, 1.0]], 4.0))


@pytest.mark.parametrize("variances", [[1.0, 0.0], [1.0, -1.0], [1.0, float("nan")]])
def test_nonpositive_variance_rejected(variances):
    with pytest.raises(InvalidArgumentError):
        solve_uncorrelated(variances, [3.0, 3.0], 1.0)


def test_length_mismatch_rejected():
    with pytest.raises(InvalidArgumentError):
        solve_uncorrelated([1.0, 1.0, 1.0], [3.0, 3.0], 1.0)


@pytest.mark.parametrize(
    "cov",
    [[[1.0, 2.0], [2.0, 1.0]], [[1.0, 0.5], [0.4, 1.0]], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]],
)
def test_bad_covariance_rejected(cov):
    with pytest.raises(InvalidArgumentError):
        ReguEnsemble([3.0, 3.0], cov, 1.0)


def test_negative_demand_rejected():
    with pytest.raises(InvalidArgumentError):
        ReguEnsemble.uncorrelated([1.0], [1.0], -0.1)


def test_correlated_symmetric():
    result = solve_correlated(ReguEnsemble([3.0, 3.0], [[1.0, 0.5], [0.5, 1.0]], 1.0))
    np.testing.assert_allclose(result.weights, [0.5, 0.5], atol=1e-9)
    assert result.kind == EP


def test_correlated_matches_closed_forms():
    for variances, means, demand in [
        ([1.0, 1.0], [3.0, 3.0], 1.0),
        ([1.0, 2.0], [3.0, 3.0], 1.0),
        ([1.0, 1.0], [2.0, 1.0], 1.8),
        ([0.5, 2.0, 3.0], [1.0, 4.0, 2.0], 3.5),
    ]:
        ens = ReguEnsemble.uncorrelated(variances, means, demand)
        closed = solve_uncorrelated(variances, means, demand)
        iterative = solve_correlated(ens)
        np.testing.assert_allclose(iterative.weights, closed.weights, atol=1e-6)
        assert iterative.kind == closed.kind


def test_semidefinite_covariance_via_general_solver():
    # A riskless unit (zero variance) takes all weight when its mean suffices.
    ens = ReguEnsemble([2.0, 3.0], [[0.0, 0.0], [0.0, 1.0]], 1.0)
    result = solve(ens)
    np.testing.assert_allclose(result.weights, [1.0, 0.0], atol=1e-8)
    assert result.objective == pytest.approx(0.0, abs=1e-12)


def test_zero_demand_is_allowed():
    result = solve_uncorrelated([1.0, 4.0], [1.0, 2.0], 0.0)
    assert result.kind == EP
    np.testing.assert_allclose(result.weights, [0.8, 0.2])


def test_project_feasible_is_a_projection():
    mu = np.array([1.0, 2.0, 4.0])
    inside = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_feasible(inside, mu, 2.0), inside, atol=1e-12)
    rng = np.random.default_rng(3)
    for _ in range(20):
        y = rng.normal(size=3)
        x = project_feasible(y, mu, 3.0)
        assert np.all(x >= 0) and abs(x.sum() - 1) < 1e-10 and mu @ x >= 3.0 - 1e-9
        # Obtuse-angle property of projections onto convex sets.
        for z in (np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.5, 0.5])):
            assert (y - x) @ (z - x) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(
    variances=st.lists(st.floats(0.05, 20.0), min_size=2, max_size=5),
    scale=st.floats(1e-3, 1e3),
)
def test_ep_weights_scale_invariant(variances, scale):
    n = len(variances)
    means = [5.0] * n
    a = solve_uncorrelated(variances, means, 1.0)
    b = solve_uncorrelated([v * scale for v in variances], means, 1.0)
    assert a.kind == b.kind == EP
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-12, atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6), diagonal=st.booleans())
def test_output_feasible_and_dichotomy(seed, n, diagonal):
    cov, mu, demand = random_allocation_instance(np.random.default_rng(seed), n, diagonal)
    ens = ReguEnsemble(mu, cov, demand)
    result = solve(ens)
    assert_feasible(result, mu, demand)
    if result.kind == EP:
        assert result.achieved_mean > demand
    else:
        assert abs(result.achieved_mean - demand) <= 1e-8
    assert result.objective == pytest.approx(0.5 * result.weights @ cov @ result.weights, rel=1e-12)


@pytest.mark.parametrize("seed", range(12))
def test_oracle_dominance_small(seed):
    rng = np.random.default_rng(1000 + seed)
    n = 2 + seed % 2
    cov, mu, demand = random_allocation_instance(rng, n, diagonal=seed % 4 < 2)
    result = solve(ReguEnsemble(mu, cov, demand))
    assert result.objective <= simplex_grid_min(cov, mu, demand) + 1e-5


def test_diagonal_dispatch_consistent():
    rng = np.random.default_rng(11)
    for _ in range(10):
        cov, mu, demand = random_allocation_instance(rng, 4, diagonal=True)
        ens = ReguEnsemble(mu, cov, demand)
        closed = solve(ens)
        general = solve_correlated(ens)
        assert abs(closed.objective - general.objective) <= 1e-9
        np.testing.assert_allclose(closed.weights, general.weights, atol=1e-6)


def test_verify_kkt_passes_on_ep():
    ens = ReguEnsemble.uncorrelated([1.0, 1.0], [3.0, 3.0], 1.0)
    report = verify_kkt(ens, solve(ens))
    assert report.passed, str(report)
    assert report.failed() == []


def test_verify_kkt_passes_on_cp_with_positive_gamma():
    result = solve(CP_INSTANCE)
    report = verify_kkt(CP_INSTANCE, result)
    assert report.passed, str(report)
    assert result.gamma > 0


def test_verify_kkt_rejects_perturbed_weights():
    result = solve(CP_INSTANCE)
    bad = Allocation(np.array([0.7, 0.3]), CP, result.gamma, result.delta, 1.7, 0.29)
    report = verify_kkt(CP_INSTANCE, bad)
    assert not report.passed
    assert "stationarity" in report.failed()
    assert "demand_met" in report.failed()
    assert "FAIL" in str(report)


def test_verify_kkt_shape_mismatch():
    result = solve(CP_INSTANCE)
    with pytest.raises(InvalidArgumentError):
        verify_kkt(ReguEnsemble.uncorrelated([1.0] * 3, [1.0] * 3, 0.5), result)


def test_grid_oracle_agrees_with_full_enumeration():
    rng = np.random.default_rng(99)
    for n in (2, 3):
        for diagonal in (True, False):
            cov, mu, demand = random_allocation_instance(rng, n, diagonal)
            full = simplex_grid_full(cov, mu, demand, step=1e-2)
            fast = simplex_grid_min(cov, mu, demand, step=1e-2)
            assert fast == pytest.approx(full, rel=1e-12, abs=1e-14)
