import numpy as np
import pytest

from hessian import (ClippedSecantApprox, IdentityApprox, ScaledIdentityApprox, eigenvalue_clip,
                     make_strategy, spectrum_range, verify_hessian_bounds)
from sim_utils import AssumptionViolation, ConfigError


def _rotation(theta: float) -> np.ndarray:
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


def _random_spd(rng, d: int, lo: float, hi: float) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return (Q * rng.uniform(lo, hi, size=d)) @ Q.T


def test_identity_strategy():
    strategy = IdentityApprox(3)
    H = strategy.update(np.ones(3), np.arange(3.0))
    np.testing.assert_array_equal(H, np.eye(3))
    assert strategy.theory_bounds() == (1.0, 1.0)
    assert strategy.gamma == 0.0
    g = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(strategy.direction(H, g), g)


def test_scaled_identity_strategy():
    strategy = ScaledIdentityApprox(2, M1=0.1, M2=2.0, scale=0.5)
    np.testing.assert_array_equal(strategy.update(np.zeros(2), np.ones(2)), 0.5 * np.eye(2))
    assert strategy.theory_bounds() == (0.5, 0.5)
    with pytest.raises(ConfigError):
        ScaledIdentityApprox(2, M1=0.1, M2=2.0, scale=3.0)


def test_invalid_bounds_rejected():
    with pytest.raises(ConfigError):
        ClippedSecantApprox(2, M1=2.0, M2=1.0)
    with pytest.raises(ConfigError):
        ClippedSecantApprox(2, M1=0.0, M2=1.0)


def test_clip_preserves_eigenvectors():
    Q = _rotation(0.3)
    candidate = Q @ np.diag([0.01, 5.0]) @ Q.T
    candidate = 0.5 * (candidate + candidate.T)
    out = eigenvalue_clip(candidate, 0.1, 2.0)
    np.testing.assert_allclose(out, Q @ np.diag([0.1, 2.0]) @ Q.T, atol=1e-12)
    lo, hi = spectrum_range(out)
    assert lo == pytest.approx(0.1) and hi == pytest.approx(2.0)


def test_clip_keeps_in_bounds_matrix():
    rng = np.random.default_rng(0)
    H = _random_spd(rng, 4, 0.5, 1.5)
    H = 0.5 * (H + H.T)
    out = eigenvalue_clip(H, 0.1, 2.0)
    assert np.linalg.norm(out - H) <= 1e-12


def test_clip_zero_matrix():
    np.testing.assert_allclose(eigenvalue_clip(np.zeros((3, 3)), 0.1, 2.0), 0.1 * np.eye(3), atol=1e-15)


def test_clip_random_candidates():
    rng = np.random.default_rng(1)
    for _ in range(50):
        A = rng.normal(scale=3.0, size=(5, 5))
        out = eigenvalue_clip(0.5 * (A + A.T), 0.1, 2.0)
        lo, hi = spectrum_range(out)
        assert lo >= 0.1 - 1e-10 and hi <= 2.0 + 1e-10
        np.testing.assert_array_equal(out, out.T)


def test_clip_rejects_asymmetric_input():
    with pytest.raises(AssumptionViolation) as exc:
        eigenvalue_clip(np.array([[1.0, 2.0], [0.0, 1.0]]), 0.1, 2.0)
    assert exc.value.clause == 'symmetry'


def test_verify_hessian_bounds():
    assert verify_hessian_bounds(np.eye(2), 0.5, 2.0)
    assert not verify_hessian_bounds(np.diag([0.4, 1.0]), 0.5, 2.0)
    assert not verify_hessian_bounds(np.diag([1.0, 2.1]), 0.5, 2.0)


def test_secant_update_satisfies_secant_equation():
    rng = np.random.default_rng(2)
    A = _random_spd(rng, 3, 0.8, 1.2)
    strategy = ClippedSecantApprox(3, M1=1e-3, M2=1e3)
    x0 = rng.normal(size=3)
    strategy.reset(x0, A @ x0)
    x1 = x0 + rng.normal(size=3)
    H = strategy.update(x1, A @ x1)
    s, y = x1 - x0, A @ (x1 - x0)
    np.testing.assert_allclose(H @ y, s, atol=1e-10)
    np.testing.assert_allclose(H, H.T, atol=0.0)


def test_secant_skips_negative_curvature():
    strategy = ClippedSecantApprox(2, M1=0.1, M2=10.0)
    strategy.reset(np.zeros(2), np.zeros(2))
    H = strategy.update(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert strategy.skipped == 1
    np.testing.assert_array_equal(H, np.eye(2))


def test_secant_stays_within_bounds_on_noisy_stream():
    rng = np.random.default_rng(3)
    strategy = make_strategy('clipped_secant', 4, M1=0.2, M2=3.0)
    x, g = rng.normal(size=(2, 4))
    strategy.reset(x, g)
    for _ in range(2000):
        x = x + rng.normal(scale=0.1, size=4)
        g = g + rng.normal(scale=0.5, size=4)
        H = strategy.update(x, g)
        assert verify_hessian_bounds(H, 0.2, 3.0)
        np.testing.assert_array_equal(H, H.T)


def test_first_update_without_reset_keeps_initial_matrix():
    strategy = ClippedSecantApprox(2, M1=0.1, M2=10.0)
    np.testing.assert_array_equal(strategy.update(np.ones(2), np.ones(2)), np.eye(2))


def test_make_strategy_names():
    assert isinstance(make_strategy('identity', 2), IdentityApprox)
    assert isinstance(make_strategy('scaled_identity', 2, 0.1, 2.0, scale=1.5), ScaledIdentityApprox)
    assert make_strategy('clipped_secant', 2, 0.1, 2.0).kappa_H == pytest.approx(20.0)
    with pytest.raises(ConfigError):
        make_strategy('dfp', 2)
