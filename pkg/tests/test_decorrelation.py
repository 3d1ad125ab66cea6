import numpy as np
import pytest

from conftest import normal_quantile
from vcqr.core import half_block_index
from vcqr.decorrelation import (
    Step2Options,
    block_kkt,
    block_support,
    boundedness_floor,
    fit_step2,
    group_norm_1F,
    lambda_v,
    step2_objective,
)
from vcqr.exceptions import DomainError, InvalidScale, UnboundedProgram, VCQRWarning


def test_lambda_v_formula():
    z = normal_quantile(1 - 0.05 / 200)
    # n^-1 c_v sqrt(n h) z = 0.01 * 0.02 * 10 * z
    assert lambda_v(100, 1, 1, 0.02) == pytest.approx(0.002 * z, rel=1e-12)
    # the figure 0.34808 is the same expression with c_v = 1
    assert lambda_v(100, 1, 1, 1.0) == pytest.approx(0.34808, abs=1e-4)
    assert lambda_v(300, 0.6, 100, 0.04) == pytest.approx(2 * lambda_v(300, 0.6, 100, 0.02), rel=1e-14)


def test_lambda_v_domain():
    with pytest.raises(InvalidScale):
        lambda_v(1, 0.01, 1)


def test_group_norm_1F_examples():
    assert group_norm_1F(np.eye(2)) == pytest.approx(np.sqrt(2))
    assert group_norm_1F(np.zeros((2, 4))) == 0.0
    assert group_norm_1F(np.hstack([np.eye(2), np.eye(2)])) == pytest.approx(2 * np.sqrt(2))


def test_identity_block_prox():
    dec = fit_step2(np.eye(2), 1, 0.2)
    np.testing.assert_allclose(dec.v_hat, (1 - 0.2 / np.sqrt(2)) * np.eye(2), atol=1e-8)
    assert dec.v_hat[0, 0] == pytest.approx(0.85858, abs=1e-5)
    for lam in (np.sqrt(2), 3.0):
        np.testing.assert_array_equal(fit_step2(np.eye(2), 1, lam).v_hat, 0.0)


def test_identity_prox_many_blocks(rng):
    for _ in range(10):
        p = int(rng.integers(1, 6))
        k = int(rng.integers(1, p + 1))
        lam = float(rng.uniform(0.01, 1.6))
        dec = fit_step2(np.eye(2 * p), k, lam)
        expected = np.zeros((2 * k, 2 * p))
        expected[:, : 2 * k] = max(0.0, 1 - lam / np.sqrt(2)) * np.eye(2 * k)
        np.testing.assert_allclose(dec.v_hat, expected, atol=1e-8)


def test_block_diagonal_closed_form(rng):
    p, k = 5, 3
    c = rng.uniform(0.5, 3.0, p)
    H = np.kron(np.diag(c), np.eye(2))
    lam = 0.3
    dec = fit_step2(H, k, lam)
    for i in range(k):
        block = dec.v_hat[2 * i : 2 * i + 2, 2 * i : 2 * i + 2]
        np.testing.assert_allclose(block, (1 - lam / np.sqrt(2)) / c[i] * np.eye(2), atol=1e-8)
    mask = np.ones_like(dec.v_hat, dtype=bool)
    for i in range(k):
        mask[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = False
    np.testing.assert_array_equal(dec.v_hat[mask], 0.0)


def test_small_lambda_matches_inverse(rng):
    for _ in range(20):
        p = int(rng.integers(1, 4))
        k = int(rng.integers(1, p + 1))
        A = rng.standard_normal((2 * p, 2 * p))
        H = A @ A.T + 0.5 * np.eye(2 * p)
        dec = fit_step2(H, k, 1e-9)
        direct = np.linalg.solve(H, np.eye(2 * p))[: 2 * k]
        np.testing.assert_allclose(dec.v_hat, direct, atol=1e-6)


def _random_psd(rng):
    d = 2 * int(rng.integers(1, 7))
    r = int(rng.integers(1, d + 1))
    A = rng.standard_normal((d, r))
    return A @ A.T / r


@pytest.mark.filterwarnings("ignore::vcqr.exceptions.VCQRWarning")
def test_block_kkt_random_psd(rng):
    for _ in range(100):
        H = _random_psd(rng)
        k = int(rng.integers(1, H.shape[0] // 2 + 1))
        lam = float(rng.uniform(0.01, 0.5))
        dec = fit_step2(H, k, lam, Step2Options(unbounded="escalate"))
        assert dec.block_kkt.max() <= 1e-6
        np.testing.assert_allclose(block_kkt(dec.v_hat, H, dec.lambda_v), dec.block_kkt)
        # sandwich sanity
        assert dec.objective <= step2_objective(np.zeros_like(dec.v_hat), H, dec.lambda_v) + 1e-12


def test_floor_simple_case():
    H = np.diag([1.0, 0.0])
    assert boundedness_floor(H, 1) == pytest.approx(1.0, abs=1e-6)
    # below the floor the direction D = e2 e2' drives the objective to -inf
    D = np.array([[0.0, 0.0], [0.0, 1.0]])
    lam = 0.9
    vals = [step2_objective(t * D, H, lam) for t in (1, 10, 100)]
    assert vals[0] > vals[1] > vals[2]
    with pytest.raises(UnboundedProgram):
        fit_step2(H, 1, lam, Step2Options(unbounded="raise"))
    with pytest.warns(VCQRWarning):
        dec = fit_step2(H, 1, lam)
    assert dec.escalated and dec.lambda_v == pytest.approx(1.5 * dec.floor)
    assert dec.block_kkt.max() <= 1e-6


def test_floor_zero_for_definite():
    assert boundedness_floor(np.eye(4), 2) == 0.0


def test_permutation_symmetry(rng):
    p, k = 4, 1
    A = rng.standard_normal((2 * p, 2 * p))
    H = A @ A.T + np.eye(2 * p)
    dec = fit_step2(H, k, 0.05)
    perm_vars = np.array([0, 3, 1, 2])
    cols = np.concatenate([[2 * v, 2 * v + 1] for v in perm_vars])
    dec_p = fit_step2(H[np.ix_(cols, cols)], k, 0.05)
    np.testing.assert_allclose(dec_p.v_hat, dec.v_hat[:, cols], atol=1e-8)


def test_block_map_matches_half_block_convention(rng):
    # blocks (i, i+k) x (j, j+p) in the half-block layout are the 2x2 tiles here
    p, k = 4, 2
    V = rng.standard_normal((2 * k, 2 * p))
    rows = half_block_index(k)
    cols = half_block_index(p)
    Vh = V[np.ix_(rows, cols)]
    total = sum(
        np.linalg.norm(Vh[np.ix_([i, i + k], [j, j + p])]) for i in range(k) for j in range(p)
    )
    assert group_norm_1F(V) == pytest.approx(total, rel=1e-14)


def test_v2_and_singular_v11():
    H = np.eye(4)
    dec = fit_step2(H, 1, 0.2)
    assert dec.v2 is not None and dec.v2.shape == (2, 2)
    np.testing.assert_allclose(dec.v2, 0.0, atol=1e-12)
    dead = fit_step2(H, 1, 2.0)
    assert dead.v2 is None and not np.isfinite(dead.v11_cond)
    assert not block_support(dead).any()


def test_argument_checks():
    with pytest.raises(DomainError):
        fit_step2(np.eye(2), 1, 0.0)
    with pytest.raises(DomainError):
        fit_step2(np.eye(2), 1, 0.1, Step2Options(unbounded="ignore"))
