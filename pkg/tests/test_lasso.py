import warnings

import numpy as np
import pytest

from conftest import make_local
from vcqr.core import Dataset, QuerySpec, build_design
from vcqr.exceptions import VCQRWarning, DomainError, InvalidScale, NonConvergence, ZeroDesign
from vcqr.lasso import (
    SolverOptions,
    directional_kkt_gap,
    fit_step1,
    group_norm_12,
    lambda_b,
    post_refit,
    qr_objective,
    solve_group_qr,
    threshold_groups,
    weighted_qr,
)


def test_group_norm_examples():
    assert group_norm_12([3, 4]) == 5.0
    assert group_norm_12([0, 0, 0, 0]) == 0.0
    assert group_norm_12([1, 0, 0, 1]) == 2.0


def test_lambda_b_arithmetic():
    # n h p = e and max_j sum w^2 x^2 = 1
    e = np.e
    data = Dataset([0.0], [0.0], [[e]], (0,))
    des = build_design(data, QuerySpec(0.5, 0.0, e))
    assert lambda_b(des, data, 0.4) == pytest.approx(0.2, rel=1e-13)
    des1 = build_design(data, QuerySpec(0.1, 0.0, e))
    assert lambda_b(des, data, 0.4) / lambda_b(des1, data, 0.4) == pytest.approx(5.0 / 3.0, rel=1e-13)
    assert lambda_b(des, data, 0.0) == 0.0


def test_lambda_b_errors():
    data = Dataset([0.0], [0.0], [[1.0]], (0,))
    with pytest.raises(InvalidScale):
        lambda_b(build_design(data, QuerySpec(0.5, 0.0, 0.5)), data)
    data0 = Dataset(np.zeros(3), np.zeros(3), np.zeros((3, 1)), (0,))
    with pytest.raises(ZeroDesign):
        lambda_b(build_design(data0, QuerySpec(0.5, 0.0, 10.0)), data0)


def test_threshold_examples():
    out = threshold_groups(np.array([0.1, 0.05, 0.5, 0.2]), 0.3)
    np.testing.assert_array_equal(out, [0, 0, 0.5, 0.2])
    np.testing.assert_array_equal(threshold_groups(np.zeros(4), 0.3), 0)
    np.testing.assert_array_equal(threshold_groups(np.array([0.6, 0.8]), 1.0), 0)


def test_step1_five_points_against_grid():
    data, des = make_local([1, 2, 3, 4, 100], np.ones(5))
    fit = fit_step1(des, data, 0.001)
    # grid oracle at 1e-3 resolution; the derivative column is zero, so the
    # penalty alone pins the slope at 0
    grid = np.round(np.arange(-10.0, 110.0 + 5e-4, 1e-3), 10)
    w = des.weights
    res = data.y[None, :] - grid[:, None]
    obj = (0.5 * np.abs(res) * w).sum(axis=1) + 0.001 * np.abs(grid)
    best = grid[np.argmin(obj)]
    assert best == pytest.approx(3.0, abs=1e-3)
    assert fit.b_ini[0] == pytest.approx(best, abs=1e-3)
    assert fit.b_ini[1] == pytest.approx(0.0, abs=1e-3)
    coarse = [(a, s) for a in np.linspace(-10, 110, 241) for s in np.linspace(-1, 1, 41)]
    vals = [qr_objective(des.gamma, data.y, w, 0.5, np.array(c), 0.001) for c in coarse]
    assert fit.objective <= min(vals) + 1e-12


def test_step1_huge_penalty_gives_zero():
    data, des = make_local([1, 2, 30, 4, 100], np.arange(1, 6.0))
    w = des.weights
    lam = np.sum(w) * np.abs(data.y).max() * np.abs(des.gamma).max() * 2
    fit = fit_step1(des, data, lam)
    np.testing.assert_array_equal(fit.b_ini, 0.0)
    assert fit.active_groups == ()


def test_unpenalized_weighted_median():
    data, des = make_local([0, 1, 2], np.ones(3))
    # the derivative column is zero, so the slope is free and the optimum flat
    with pytest.warns(VCQRWarning, match="not unique"):
        fit = fit_step1(des, data, 0.0)
    assert fit.b_ini[0] == pytest.approx(1.0, abs=1e-10)


def test_weighted_median_oracle(rng):
    for _ in range(20):
        m = int(rng.integers(1, 15))
        y = rng.standard_normal(m)
        w = rng.uniform(0.1, 1.0, m)
        tau = float(rng.uniform(0.1, 0.9))
        b, info = weighted_qr(np.ones((m, 1)), y, w, tau)
        order = np.argsort(y)
        cw = np.cumsum(w[order]) / w.sum()
        q = y[order][np.argmax(cw >= tau)]
        obj = lambda c: np.sum(w * (y - c) * (tau - (y - c < 0)))  # noqa: E731
        assert obj(b[0]) <= obj(q) + 1e-12
        assert info["certified"]


def _random_instance(rng, m, d, lam):
    G = rng.standard_normal((m, d))
    y = G[:, :2] @ [1.0, 0.5] + rng.standard_normal(m)
    w = rng.uniform(0.05, 1.0, m) / m
    return G, y, w, float(rng.uniform(0.1, 0.9)), lam


@pytest.mark.parametrize("seed", range(8))
def test_conic_and_splitting_routes_agree(seed):
    rng = np.random.default_rng(seed)
    m, d = int(rng.integers(10, 40)), 2 * int(rng.integers(1, 12))
    G, y, w, tau, lam = _random_instance(rng, m, d, [0.01, 0.05][seed % 2])
    b1, i1 = solve_group_qr(G, y, w, tau, lam, opts=SolverOptions(method="conic"))
    b2, i2 = solve_group_qr(G, y, w, tau, lam, opts=SolverOptions(method="admm"))
    assert i1["method"] == "conic" and i2["method"] == "admm"
    o1 = qr_objective(G, y, w, tau, b1, lam)
    o2 = qr_objective(G, y, w, tau, b2, lam)
    assert o1 == pytest.approx(o2, abs=1e-8 * (1 + abs(o1)))
    assert i1["certified"] and i2["certified"]


def test_kkt_probe_on_random_fits(rng):
    for _ in range(10):
        m, d = int(rng.integers(5, 60)), 2 * int(rng.integers(1, 20))
        G, y, w, tau, lam = _random_instance(rng, m, d, 0.02)
        b, info = solve_group_qr(G, y, w, tau, lam)
        obj = qr_objective(G, y, w, tau, b, lam)
        gap = directional_kkt_gap(G, y, w, tau, lam, np.column_stack([np.arange(0, d, 2), np.arange(1, d, 2)]), b)
        assert gap >= -1e-6 * (1 + abs(obj))
        # a perturbed point must look worse to some probe
        assert directional_kkt_gap(
            G, y, w, tau, lam, np.column_stack([np.arange(0, d, 2), np.arange(1, d, 2)]), b + 0.3
        ) < 0


def test_monotone_in_lambda(rng):
    G, y, w, tau, _ = _random_instance(rng, 40, 12, 0.0)
    losses, norms = [], []
    for lam in [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.3]:
        b, _ = solve_group_qr(G, y, w, tau, lam)
        losses.append(qr_objective(G, y, w, tau, b))
        norms.append(group_norm_12(b))
    assert np.all(np.diff(losses) >= -1e-10)
    assert np.all(np.diff(norms) <= 1e-8)


def test_row_permutation_invariance(rng):
    G, y, w, tau, lam = _random_instance(rng, 35, 10, 0.02)
    b, info = solve_group_qr(G, y, w, tau, lam)
    perm = rng.permutation(35)
    bp, _ = solve_group_qr(G[perm], y[perm], w[perm], tau, lam)
    if info["unique"]:
        np.testing.assert_allclose(b, bp, atol=1e-10)


def test_threshold_reduces_support(small_problem):
    from vcqr.core import default_bandwidth

    des = build_design(small_problem, QuerySpec(0.5, 1.0, default_bandwidth(small_problem.n)))
    lam = lambda_b(des, small_problem)
    fit = fit_step1(des, small_problem, lam)
    ini = np.sum(np.abs(fit.b_ini.reshape(-1, 2)).sum(axis=1) > 0)
    assert len(fit.active_groups) <= ini
    for g, pair in enumerate(fit.b_hat.reshape(-1, 2)):
        assert np.all(pair == 0) or np.array_equal(pair, fit.b_ini[2 * g : 2 * g + 2])
    assert fit.objective == pytest.approx(
        qr_objective(des.gamma, small_problem.y, des.weights, 0.5, fit.b_ini, lam), rel=1e-14
    )
    assert fit.certified and fit.kkt_gap >= -1e-6


def test_nonconvergence_is_reported(small_problem):
    from vcqr.core import default_bandwidth

    des = build_design(small_problem, QuerySpec(0.5, 1.0, default_bandwidth(small_problem.n)))
    lam = lambda_b(des, small_problem)
    opts = SolverOptions(method="admm", max_iter=3, polish=False)
    with pytest.raises(NonConvergence) as err:
        fit_step1(des, small_problem, lam, opts)
    assert err.value.details["fit"].iters == 3


def test_post_refit_examples(small_problem):
    data, des = make_local([0, 1, 2], np.ones(3))
    with pytest.warns(VCQRWarning, match="flat"):
        b = post_refit(des, data, [0])
    assert b[0] == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(DomainError):
        post_refit(des, data, [])
    from vcqr.core import default_bandwidth

    des = build_design(small_problem, QuerySpec(0.5, 1.0, default_bandwidth(small_problem.n)))
    lam = lambda_b(des, small_problem)
    fit = fit_step1(des, small_problem, lam)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        full = post_refit(des, small_problem, range(des.p))
    G, y, w = des.gamma, small_problem.y, des.weights
    assert qr_objective(G, y, w, 0.5, full) <= qr_objective(G, y, w, 0.5, fit.b_ini) + 1e-12
    part = post_refit(des, small_problem, [0, 2])
    off = np.setdiff1d(np.arange(2 * des.p), [0, 1, 4, 5])
    np.testing.assert_array_equal(part[off], 0.0)


def test_solver_options_validation():
    with pytest.raises(DomainError):
        SolverOptions(method="newton")
