import numpy as np
import pytest

from src.errors import ConfigurationError, DomainRangeError, InfeasiblePinchError
from src.profile import (
    build_pinch_function,
    build_surface,
    comparison_return_time,
    curvature_integral_identity,
    gaussian_curvature,
    meridian_return_bound,
    round_sphere,
    shrink_to_return_bound,
    solve_profile,
    sweep_surfaces,
)


@pytest.fixture(scope="module")
def pinched():
    return build_surface(0.49, 4.25)


@pytest.fixture(scope="module")
def sphere():
    return round_sphere()


def test_round_pinch_function_is_linear():
    g = build_pinch_function(1.0, 1.0)
    x = np.linspace(0.0, 1.0, 11)
    assert g.degenerate
    np.testing.assert_allclose(g.value(x), 1.0 - x, atol=1e-15)


def test_pinch_function_shape():
    g = build_pinch_function(0.49, 4.25, smoothing=0.01)
    x = np.linspace(0.0, 0.49 ** 2, 1001)

    assert g.value(0.0) == pytest.approx(1.0, abs=1e-14)
    assert g.value(0.49 ** 2) == pytest.approx(0.0, abs=1e-14)
    slopes = g.slope(x)
    assert np.all(slopes >= -4.25 - 1e-12)
    assert np.all(slopes <= -1.0 + 1e-12)
    assert np.all(np.diff(slopes) >= -1e-12)
    assert np.all(g.convexity(x) >= 0.0)


def test_pinch_rejects_small_cap():
    with pytest.raises(InfeasiblePinchError):
        build_pinch_function(0.49, 4.0)


def test_pinch_rejects_wide_blend():
    with pytest.raises(ConfigurationError):
        build_pinch_function(0.49, 4.25, smoothing=0.02)


def test_round_profile_matches_cosine(sphere):
    assert sphere.L == pytest.approx(np.pi / 2, abs=1e-8)
    s = np.linspace(0.0, sphere.L - 1e-3, 500)
    np.testing.assert_allclose(sphere.rho(s), np.cos(s), atol=1e-8)
    np.testing.assert_allclose(sphere.curvature(s), 1.0, atol=1e-12)


def test_pinched_profile_bounds(pinched):
    s = pinched.s
    assert 0.0 < pinched.L <= np.pi / 2
    assert np.all(pinched.rho_samples <= 0.49 * np.cos(s) + 1e-10)

    interior = s[s < pinched.L - 1e-6]
    K = pinched.curvature(interior)
    assert np.all(K >= 1.0 - 1e-3)
    assert np.all(K <= 4.25 + 1e-3)
    assert gaussian_curvature(pinched, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert gaussian_curvature(pinched, pinched.L - 1e-3) == pytest.approx(4.25, abs=1e-6)


def test_pole_length_below_comparison(pinched):
    assert pinched.L <= comparison_return_time(0.49, 4.25) + 1e-9


def test_curvature_matches_finite_differences(pinched):
    g = pinched.pinch
    s = np.linspace(0.05, pinched.L - 0.2, 60)
    rho2 = pinched.rho(s) ** 2
    away = np.abs(rho2 - g.x_star) > 2.0 * g.smoothing
    s = s[away]
    assert len(s) > 20

    h = 1e-5
    rhoddot = (pinched.rhodot(s + h) - pinched.rhodot(s - h)) / (2.0 * h)
    np.testing.assert_allclose(-rhoddot / pinched.rho(s), pinched.curvature(s), atol=1e-4)


def test_curvature_outside_domain(pinched):
    with pytest.raises(DomainRangeError):
        gaussian_curvature(pinched, pinched.L)


def test_curvature_integral_identity(pinched):
    target, integral = curvature_integral_identity(pinched)
    assert target == pytest.approx(1.0 - 0.49 ** 2)
    assert integral == pytest.approx(target, abs=1e-5)


def test_meridian_return_bound():
    assert meridian_return_bound(1.0, 1.0, 1.001)
    assert meridian_return_bound(0.49, 1.001 / 0.49 ** 2, 1.05)
    assert not meridian_return_bound(0.49, 8.0, 1.01)


def test_shrink_to_return_bound():
    ratio, surface = shrink_to_return_bound(0.49, 1.05)
    assert 1.0 < ratio <= 1.01
    assert 2.0 * surface.L < 1.05 * np.pi * 0.49


def test_frame_and_description(pinched):
    frame = pinched.to_frame()
    assert list(frame.columns) == ['s', 'rho', 'rhodot', 'K']
    assert len(frame) == len(pinched.s)
    info = pinched.describe()
    assert info['R'] == 0.49
    assert info['Kmax'] == 4.25
    assert info['L'] == pytest.approx(pinched.L)


def test_sweep_keeps_order():
    surfaces = sweep_surfaces([(0.49, 4.25), (1.0, 1.0), (0.6, 3.0)])
    assert [s.R for s in surfaces] == [0.49, 1.0, 0.6]
    assert surfaces[1].L == pytest.approx(np.pi / 2, abs=1e-8)


def test_solve_profile_matches_build_surface(pinched):
    direct = solve_profile(build_pinch_function(0.49, 4.25))
    assert direct.L == pytest.approx(pinched.L, abs=1e-9)
    assert solve_profile(build_pinch_function(1.0, 1.0, 0.0)).L == pytest.approx(np.pi / 2, abs=1e-8)
