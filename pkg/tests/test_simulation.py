import math

import numpy as np
import pytest
from dataclasses import replace

from conftest import normal_quantile
from vcqr.exceptions import CalibrationFailure, DomainError
from vcqr.simulation import (
    SimConfig,
    SimParams,
    _stream,
    calibrate_r2,
    generate_dataset,
    run_baseline_naive,
    run_baseline_oracle,
    run_study,
    summarize,
    true_quantile,
)

CAL = dict(c_x=3.119349781214487, c_y=1.6494731603248052)


def test_params_at_u_one():
    pr = SimParams()
    j = np.arange(2, 11)
    assert np.all(pr.a0 * j * (1.0**pr.a1 - 1.0) == 0.0)
    assert pr.rho_u(1.0) == pytest.approx(0.2, abs=1e-15)
    u = np.linspace(0, 2, 101)[1:]
    assert np.all((pr.rho_u(u) > 0) & (pr.rho_u(u) < 1))
    # at the boundary U = 0 the exponent vanishes
    assert pr.rho_u(0.0) == 1.0
    assert pr.beta_scale(1.0) == 1.0 and pr.sigma_u(1.0) == 1.0


def test_truth_beta_one():
    _, truth = generate_dataset(SimConfig(n=50, p=5, **CAL), _stream(1, 0))
    assert truth.beta_true == 0.5
    assert truth.slope_true == pytest.approx(0.25)
    np.testing.assert_allclose(truth.beta_u(1.0), truth.beta)


@pytest.mark.parametrize("gamma", [0, 1])
@pytest.mark.parametrize("dist", ["normal", "t3"])
def test_true_quantile_median(gamma, dist, rng):
    cfg = SimConfig(n=50, p=5, gamma=gamma, error_dist=dist, **CAL)
    _, truth = generate_dataset(cfg, _stream(2, 0))
    x = rng.standard_normal((7, 5))
    np.testing.assert_allclose(true_quantile(truth, x, 0.5, 1.0), x @ truth.beta, atol=1e-15)


def test_true_quantile_normal_upper(rng):
    _, truth = generate_dataset(SimConfig(n=50, p=5, **CAL), _stream(2, 0))
    x = rng.standard_normal((4, 5))
    for u in (0.5, 1.0, 1.7):
        want = x @ truth.beta_u(u) + truth.params.sigma_u(u) * normal_quantile(0.9)
        np.testing.assert_allclose(true_quantile(truth, x, 0.9, u), want, rtol=1e-12)
    assert normal_quantile(0.9) == pytest.approx(1.28155, abs=1e-5)
    with pytest.raises(DomainError):
        true_quantile(truth, x, 1.0, 1.0)


def test_summarize_examples():
    bias, sd, ese, cr = summarize([0.4, 0.6], [0.1, 0.1], [False, True], 0.5)
    assert bias == pytest.approx(0.0, abs=1e-15)
    assert sd == pytest.approx(0.14142, abs=1e-5)
    cis = [(0.3, 0.7), (0.6, 0.8)]
    covered = [lo <= 0.5 <= hi for lo, hi in cis]
    assert summarize([0.5, 0.7], [0.1, 0.1], covered, 0.5)[3] == 0.5
    assert all(math.isnan(v) for v in summarize([], [], [], 0.5))


def test_calibration():
    base = SimConfig(n=50, p=10, r2_targets=(0.0, 0.0))
    assert calibrate_r2(base, pilot_n=20_000) == (0.0, 0.0)
    cs = [calibrate_r2(replace(base, r2_targets=(r, 0.3)), pilot_n=20_000)[0] for r in (0.3, 0.5, 0.7)]
    assert cs[0] < cs[1] < cs[2]
    with pytest.raises(CalibrationFailure):
        calibrate_r2(replace(base, r2_targets=(1.0, 0.3)), pilot_n=1000)


def test_calibrated_targets_hit():
    cfg = SimConfig(n=100_000, p=100, **CAL)
    data, truth = generate_dataset(cfg, _stream(99, 5))
    x1 = data.x[:, 0]
    sig = data.x[:, 1:] @ (CAL["c_x"] / np.arange(2, 101) ** 2)
    assert np.corrcoef(x1, sig)[0, 1] ** 2 == pytest.approx(0.7, abs=0.01)
    g = truth.params.beta_scale(data.u)
    ysig = data.x[:, 1:] @ truth.beta[1:] * g
    resid = data.y - x1 * truth.beta[0] * g
    assert np.corrcoef(resid, ysig)[0, 1] ** 2 == pytest.approx(0.3, abs=0.01)


def test_requires_calibration():
    with pytest.raises(DomainError):
        generate_dataset(SimConfig(n=10, p=3), _stream(0))


@pytest.mark.parametrize("bad", [dict(gamma=2), dict(error_dist="cauchy"), dict(p=1), dict(methods=("XX",))])
def test_config_validation(bad):
    with pytest.raises(DomainError):
        SimConfig(**bad)


def test_baselines():
    cfg = SimConfig(n=300, p=20, **CAL)
    data, truth = generate_dataset(cfg, _stream(cfg.seed, 0, 0))
    orc = run_baseline_oracle(data, truth, cfg)
    assert orc.extras["support"] == truth.support(1.0, 0.05) == (0, 1, 2, 3, 4)
    # with no nuisance signal the oracle support is A only
    zcfg = replace(cfg, c_y=0.0)
    data0, truth0 = generate_dataset(zcfg, _stream(cfg.seed, 0, 0))
    assert run_baseline_oracle(data0, truth0, zcfg).extras["support"] == (0,)
    huge = replace(cfg, c_b=1e6)
    assert run_baseline_naive(data, huge).extras["support"] == (0,)


def test_study_reproducible():
    cfg = SimConfig(n=200, p=8, m_reps=3, seed=5, **CAL)
    a = run_study(cfg)
    b = run_study(cfg, n_jobs=3)
    assert a.rows == b.rows
    assert a.replications == b.replications
    for r in a.rows:
        assert 0 <= r.cr <= 1 and r.sd >= 0 and r.ese >= 0
