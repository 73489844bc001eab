import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpbold.ar import (ArPrior, ar_covariance_oracle, autocovariances, companion_matrix,
                       conditional_loglik, draw_stationary, is_stationary, prewhiten_columns,
                       prewhiten_rows, simulate_ar, spectral_radius)
from gpbold.errors import NumericalError, ShapeError

from _oracles import dense_conditional_loglik

STUDY_RHO = (0.4, 0.1, 0.05)


def characteristic_root_radius(rho):
    """Largest |z| with z^K = rho_1 z^{K-1} + ... + rho_K, found by polynomial roots."""
    return np.max(np.abs(np.roots(np.concatenate(([1.0], -np.asarray(rho))))))


def test_companion_definitions():
    np.testing.assert_array_equal(companion_matrix([0.5]), [[0.5]])
    np.testing.assert_array_equal(companion_matrix([0.3, -0.2]), [[0.3, -0.2], [1.0, 0.0]])


def test_study_coefficients_spectral_radius():
    r = spectral_radius(STUDY_RHO)
    assert r == pytest.approx(characteristic_root_radius(STUDY_RHO), abs=1e-12)
    assert r == pytest.approx(0.6640, abs=1e-4)
    assert is_stationary(STUDY_RHO)


def test_stationarity_edge_cases():
    assert is_stationary([0.0, 0.0])
    assert is_stationary([])
    assert not is_stationary([1.0])
    assert not is_stationary([0.5, 0.6])


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=4))
def test_stationarity_matches_root_radius(rho):
    r = characteristic_root_radius(rho)
    if abs(r - 1) > 1e-9:
        assert is_stationary(rho) == (r < 1)


def test_prewhiten_identity_filter():
    x = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(prewhiten_columns(x, [0.0, 0.0]), x[2:])


def test_prewhiten_hand_example():
    np.testing.assert_allclose(prewhiten_columns(np.array([0.0, 1, 2, 3]), [0.5]), [1, 1.5, 2])


def test_prewhiten_too_short():
    with pytest.raises(ShapeError):
        prewhiten_columns(np.ones((3, 1)), [0.1, 0.1, 0.1])


def test_prewhiten_matches_lfilter(rng):
    from scipy import signal
    rho = np.array([0.4, 0.1, 0.05])
    x = rng.standard_normal((40, 3))
    full = signal.lfilter(np.concatenate(([1.0], -rho)), [1.0], x, axis=0)
    np.testing.assert_allclose(prewhiten_columns(x, rho), full[3:], atol=1e-13)


def test_loglik_matches_dense_oracle(rng):
    for _ in range(20):
        k = int(rng.integers(0, 4))
        rho = rng.uniform(-0.4, 0.4, k)
        sigma2 = rng.uniform(0.2, 2.0, 3)
        resid = rng.standard_normal((20 + k, 3))
        assert conditional_loglik(resid, rho, sigma2) == pytest.approx(
            dense_conditional_loglik(resid, rho, sigma2), abs=1e-8)


def test_prewhiten_rows_blocks(rng):
    rho = [0.3, -0.2]
    w = rng.standard_normal((2 * 10, 4))
    out = prewhiten_rows(w, rho, 10)
    expect = np.vstack([prewhiten_columns(w[:10], rho), prewhiten_columns(w[10:], rho)])
    np.testing.assert_allclose(out, expect, atol=0)
    np.testing.assert_array_equal(prewhiten_rows(w[:10], rho, 10), prewhiten_columns(w[:10], rho))
    zero = prewhiten_rows(w, [0.0, 0.0], 10)
    np.testing.assert_array_equal(zero, np.vstack([w[2:10], w[12:]]))
    with pytest.raises(ShapeError):
        prewhiten_rows(w[:15], rho, 10)


def test_white_noise_covariance_is_identity():
    np.testing.assert_array_equal(ar_covariance_oracle([0.0], 5), np.eye(5))


def test_ar1_textbook_covariance():
    phi = 0.6
    i = np.arange(6)
    expect = phi ** np.abs(i[:, None] - i[None, :]) / (1 - phi ** 2)
    np.testing.assert_allclose(ar_covariance_oracle([phi], 6), expect, rtol=1e-12)


def test_yule_walker_matches_long_simulation():
    rng = np.random.default_rng(3)
    x = simulate_ar(STUDY_RHO, 1.0, 1_000_000, rng)
    g = autocovariances(STUDY_RHO, 10)
    xc = x - x.mean()
    emp = np.array([xc[:x.size - h] @ xc[h:] / x.size for h in range(10)])
    m = ar_covariance_oracle(STUDY_RHO, 10)
    assert np.linalg.eigvalsh(m).min() > 0
    # 1% of gamma_0 for every lag (low lags are also within 1% relatively)
    assert np.all(np.abs(emp - g) < 0.01 * g[0])
    assert abs(emp[1] / emp[0] - g[1] / g[0]) < 0.01 * g[1] / g[0]


def test_simulation_edge_cases(rng):
    np.testing.assert_array_equal(simulate_ar(STUDY_RHO, 0.0, 7, rng), np.zeros(7))
    a = simulate_ar(STUDY_RHO, 1.0, 50, np.random.default_rng(9))
    b = simulate_ar(STUDY_RHO, 1.0, 50, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        simulate_ar([1.2], 1.0, 10, rng)


def test_stationary_start_has_stationary_variance():
    rng = np.random.default_rng(4)
    first = np.array([simulate_ar([0.9], 1.0, 2, rng)[0] for _ in range(20_000)])
    assert first.var() == pytest.approx(1 / (1 - 0.81), rel=0.05)


def test_shrinkage_prior():
    p = ArPrior.shrinkage(3, r=0.2)
    np.testing.assert_allclose(p.rho0, [0.2, 0, 0])
    np.testing.assert_allclose(np.diag(p.a0), [0.5, 0.5 / 32, 0.5 / 243])
    with pytest.raises(ValueError):
        ArPrior([0.0], [[-1.0]])


def test_rejection_sampler_gives_up():
    with pytest.raises(NumericalError):
        draw_stationary(np.array([5.0]), np.array([[1e-3]]), np.random.default_rng(0), 50)
