
import numpy as np
import pytest

from conftest import make_local, normal_pdf, normal_quantile
from vcqr.density import (
    estimate_density,
    f_hat,
    plugin_hessian,
    powell_bandwidth,
    residual_bandwidth_hf,
    weighted_quantile,
    weighted_variance,
)
from vcqr.exceptions import (
    AllZeroDensity,
    BandwidthOverflow,
    DegenerateResiduals,
    DomainError,
    VCQRWarning,
    ZeroWeights,
)


def powell_oracle(tau, n):
    z = normal_quantile(tau)
    return n ** (-1 / 3) * normal_quantile(0.975) ** (2 / 3) * (1.5 * normal_pdf(z) ** 2 / (2 * z * z + 1)) ** (1 / 3)


@pytest.mark.parametrize("tau,n,expected", [(0.5, 1000, 0.09717), (0.25, 1000, 0.06729)])
def test_powell_values(tau, n, expected):
    hp = powell_bandwidth(tau, n)
    assert hp == pytest.approx(powell_oracle(tau, n), rel=1e-12)
    # the quoted figures are rounded; the oracle value is the reference
    assert hp == pytest.approx(expected, abs=1e-4)


def test_powell_scaling():
    assert powell_bandwidth(0.5, 8e9) == pytest.approx(powell_bandwidth(0.5, 1000) / 200, rel=1e-12)
    for tau in (0.2, 0.5, 0.7):
        assert powell_bandwidth(tau, 800) / powell_bandwidth(tau, 100) == pytest.approx(0.5, abs=1e-12)


def test_powell_errors():
    with pytest.raises(BandwidthOverflow):
        powell_bandwidth(0.01, 10)
    with pytest.raises(DomainError):
        powell_bandwidth(0.5, 1)


def test_weighted_quantile_examples():
    assert weighted_quantile([1, 2, 3], [1, 1, 1], 0.5) == 2
    assert weighted_quantile([1, 2], [3, 1], 0.5) == 1
    assert weighted_quantile([5], [0.2], 0.9) == 5
    with pytest.raises(ZeroWeights):
        weighted_quantile([1, 2], [0, 0], 0.5)


def _scan_quantile(e, w, alpha):
    # reference: try every data value as q and keep the smallest that passes
    ok = [q for q in sorted(set(e)) if sum(wi for ei, wi in zip(e, w) if ei <= q) / sum(w) >= alpha]
    return ok[0]


def test_weighted_quantile_matches_scan(rng):
    for _ in range(10_000):
        m = int(rng.integers(1, 8))
        e = rng.integers(-3, 4, m).astype(float)
        w = rng.integers(1, 5, m).astype(float)
        alpha = float(rng.choice([0.25, 0.5, 0.75, rng.uniform(0.01, 0.99)]))
        assert weighted_quantile(e, w, alpha) == _scan_quantile(list(e), list(w), alpha)


def test_weighted_variance_plugin():
    assert weighted_variance([-1, 1], [1, 1]) == 1.0
    assert weighted_variance([0, 3], [2, 1]) == pytest.approx(2.0)


def test_hf_example():
    hp = 0.09717
    # sd = 1 and IQR / 1.34 = 2 / 1.34 > 1, so the sd branch is the minimum
    e, w = np.array([-1.0, 1.0]), np.ones(2)
    expected = normal_quantile(0.5 + hp) - normal_quantile(0.5 - hp)
    assert residual_bandwidth_hf(0.5, hp, e, w) == pytest.approx(expected, rel=1e-12)
    # quoted as about 0.4924; the exact difference of quantiles is 0.49206
    assert expected == pytest.approx(0.4924, abs=5e-4)


def test_hf_homogeneity_and_degenerate(rng):
    e = rng.standard_normal(200)
    w = rng.uniform(0, 1, 200)
    a = residual_bandwidth_hf(0.3, 0.05, e, w)
    assert residual_bandwidth_hf(0.3, 0.05, 3.5 * e, w) == pytest.approx(3.5 * a, rel=1e-12)
    with pytest.raises(DegenerateResiduals):
        residual_bandwidth_hf(0.5, 0.1, np.full(5, 2.0), np.ones(5))


def test_f_hat_examples():
    np.testing.assert_array_equal(f_hat([0.1, 0.6, 0.5, -0.5], 0.5), [1.0, 0.0, 1.0, 1.0])


def test_plugin_hessian_examples():
    data, des = make_local([0.0], [[1.0]], h=1.0)
    # single observation: w = 1 / (n h) = 1
    np.testing.assert_array_equal(plugin_hessian(des, [1.0]).h_mat, [[1, 0], [0, 0]])
    with pytest.raises(AllZeroDensity) as err:
        plugin_hessian(des, [0.0])
    np.testing.assert_array_equal(err.value.details["hessian"].h_mat, 0.0)
    # rows (1, 0) and (0, 1): level 1 at u = u0, level 0 with derivative 1 at u - u0 = 0.2
    data, des = make_local([0.0, 0.0], [[1.0], [5.0]], u=[0.0, 0.2], h=0.5)
    G = des.gamma
    H = plugin_hessian(des, [1.0, 1.0]).h_mat
    np.testing.assert_allclose(H, des.weights[0] * G.T @ G)


def test_plugin_hessian_psd_and_histogram(small_problem):
    from vcqr.core import QuerySpec, build_design, default_bandwidth
    from vcqr.lasso import fit_step1, lambda_b

    des = build_design(small_problem, QuerySpec(0.4, 1.0, default_bandwidth(small_problem.n)))
    fit = fit_step1(des, small_problem, lambda_b(des, small_problem))
    dens = estimate_density(des, small_problem.y, fit.b_hat)
    assert set(np.unique(dens.f_hat)) <= {0.0, 1.0 / (2 * dens.h_f)}
    w = des.weights
    lhs = np.sum(w * dens.f_hat * 2 * dens.h_f)
    assert lhs == pytest.approx(np.sum(w * (np.abs(dens.residuals) <= dens.h_f)), rel=1e-14)
    H = plugin_hessian(des, dens.f_hat).h_mat
    assert np.abs(H - H.T).max() <= 1e-12
    assert np.linalg.eigvalsh(H).min() >= -1e-10 * np.trace(H)


def test_estimate_density_clamps_with_warning():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(4)
    data, des = make_local(y, np.ones(4), tau=0.05)
    with pytest.warns(VCQRWarning, match="clamp"):
        dens = estimate_density(des, data.y, np.zeros(2))
    assert dens.clamped and dens.h_p == pytest.approx(0.99 * 0.05)
