import numpy as np
import pytest

from src.config import settings
from src.errors import ClosureError, ConfigurationError, NoBracketError
from src.geodesics import equator_orbit, first_equator_return
from src.knots import k8_curve, k8_velocity, lift_contractibility_tag
from src.linearized import cz_index
from src.profile import build_surface, round_sphere
from src.randers import critical_angle, make_randers
from src.shooting import (
    ClosedCurve,
    close_up_figure_eight,
    count_self_intersections,
    default_phi_grid,
    extrapolated_limits,
    find_phi_star,
    pinch_window,
    return_map_limits,
    richardson_limit,
    sweep_returns,
    verify_theorem_ii,
)


def _cyclic_distance(a, b, period):
    d = abs(a - b) % period
    return min(d, period - d)


def test_pinch_window_inside_constructive_range():
    R, K_max = pinch_window(1.0, 0.24)
    assert R < 0.5
    assert 0.24 < 1.0 / K_max < 0.25
    assert K_max > 1.0 / R ** 2

    R, K_max = pinch_window(2.0, 0.43)
    assert R < 2.0 / 3.0
    assert 0.43 < 1.0 / K_max < 4.0 / 9.0


def test_pinch_window_rejects_delta_above_limit():
    with pytest.raises(ConfigurationError):
        pinch_window(1.0, 0.26)
    with pytest.raises(ConfigurationError):
        pinch_window(1.0, 0.0)


def test_default_phi_grid():
    grid = default_phi_grid(1.2, 16)
    assert len(grid) == 16
    assert np.all(np.diff(grid) > 0.0)
    assert grid[0] > 0.0 and grid[-1] < 1.2


def test_round_sphere_has_no_bracket():
    metric = make_randers(round_sphere(), 1.0)
    table = sweep_returns(metric, default_phi_grid(critical_angle(metric), 8))
    np.testing.assert_allclose(table['theta_adv'], np.pi, atol=1e-6)
    with pytest.raises(NoBracketError):
        find_phi_star(metric, table)


def test_default_phi_grid_is_log_spaced():
    grid = default_phi_grid(1.0, 16)
    left = grid[:8]
    ratios = left[1:] / left[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
    np.testing.assert_allclose(grid + grid[::-1], 1.0, atol=1e-15)
    assert grid[0] == pytest.approx(settings.SWEEP_END_GAP)
    assert len(default_phi_grid(1.0, 15)) == 15


def test_richardson_limit_is_exact_for_cubics():
    h = 0.01 * 2.0 ** -np.arange(6)
    y = 3.0 - h + 2.0 * h ** 2 - 5.0 * h ** 3
    assert richardson_limit(h, y) == pytest.approx(3.0, abs=1e-12)
    shuffled = np.array([3, 0, 5, 1, 4, 2])
    assert richardson_limit(h[shuffled], y[shuffled]) == pytest.approx(3.0, abs=1e-12)


@pytest.fixture(scope="module")
def pinched_sweep():
    metric = make_randers(build_surface(0.49, 4.25), 1.0)
    return metric, sweep_returns(metric, default_phi_grid(critical_angle(metric), 24))


def test_theta_advance_is_monotone_and_continuous(pinched_sweep):
    metric, table = pinched_sweep
    phi = table['phi'].to_numpy()
    theta = table['theta_adv'].to_numpy()
    assert np.all(np.diff(theta) <= settings.SWEEP_WIGGLE_TOL)

    # no jump hides inside the widest gap
    k = int(np.argmax(np.abs(np.diff(theta))))
    middle = first_equator_return(metric, 0.5 * (phi[k] + phi[k + 1])).theta_adv
    assert theta[k + 1] - 1e-9 <= middle <= theta[k] + 1e-9


def test_irreversible_endpoint_limit_stays_below_two_pi():
    R, K_max = pinch_window(2.0, 0.43)
    limits = return_map_limits(make_randers(build_surface(R, K_max), 2.0))
    assert np.pi < limits['theta_adv_at_phi0'] < 2.0 * np.pi
    assert limits['theta_adv_at_0'] > 2.0 * np.pi


@pytest.mark.parametrize("r, delta", [(1.0, 0.24), (2.0, 0.43)])
def test_double_equator_index_on_shooting_metric(r, delta):
    metric = make_randers(build_surface(*pinch_window(r, delta)), r)
    record = cz_index(metric, equator_orbit(metric, 2), 'equator2')
    assert record.I[1] < 1.0
    assert record.cz == 1


def test_return_map_limits_on_pinched_sphere(pinched_sweep):
    metric, table = pinched_sweep
    assert list(table.columns) == ['phi', 'T_phi', 'theta_adv']

    closed_form = return_map_limits(metric)
    assert closed_form['theta_adv_at_0'] == pytest.approx(np.pi / 0.49)
    assert closed_form['theta_adv_at_phi0'] == pytest.approx(np.pi)

    limits = extrapolated_limits(metric, table)
    assert limits['theta_adv_at_0'] == pytest.approx(np.pi / 0.49, abs=1e-2)
    assert limits['theta_adv_at_phi0'] == pytest.approx(np.pi, abs=1e-2)


def test_figure_eight_has_one_transverse_crossing():
    curve = ClosedCurve(k8_curve, k8_velocity, 2.0 * np.pi)
    (crossing,) = count_self_intersections(curve)
    assert crossing.kind == 'transverse'
    assert crossing.angle == pytest.approx(np.pi / 2, abs=1e-6)
    assert _cyclic_distance(crossing.t_i, 0.0, np.pi) < 1e-6
    assert _cyclic_distance(crossing.t_j, 0.0, np.pi) < 1e-6
    assert _cyclic_distance(crossing.t_i, crossing.t_j, 2.0 * np.pi) == pytest.approx(np.pi, abs=1e-6)


def test_great_circle_is_embedded():
    curve = ClosedCurve(
        lambda t: np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=-1),
        lambda t: np.stack([-np.sin(t), np.cos(t), np.zeros_like(t)], axis=-1),
        2.0 * np.pi,
    )
    assert count_self_intersections(curve) == []


@pytest.fixture(scope="module")
def reversible_report():
    return verify_theorem_ii(1.0, 0.24)


def test_reversible_counterexample(reversible_report):
    report = reversible_report
    assert len(report.self_intersections) == 1
    assert report.self_intersections[0].kind == 'transverse'
    assert report.closure_residual < 1e-6
    assert 0.24 < report.K_min_scaled <= report.K_max_scaled <= 1.0 + 1e-9
    assert report.reversibility == pytest.approx(1.0, abs=1e-6)
    assert report.length >= report.contractible_lift_bound
    assert report.length >= report.rademacher_bound
    assert 0.0 < report.phi_star < np.pi / 2

    limits = report.limits
    assert limits['extrapolated_theta_adv_at_0'] == pytest.approx(limits['closed_form_theta_adv_at_0'], abs=1e-2)
    assert limits['extrapolated_theta_adv_at_phi0'] == pytest.approx(limits['closed_form_theta_adv_at_phi0'], abs=1e-2)


def test_counterexample_lift_is_contractible(reversible_report):
    closed = reversible_report.closed_geodesic
    points = closed.ambient / np.linalg.norm(closed.ambient, axis=1)[:, None]
    assert lift_contractibility_tag(points[:-1])


def test_report_dump_skips_trajectory(reversible_report):
    dumped = reversible_report.model_dump()
    assert 'closed_geodesic' not in dumped
    assert len(dumped['table']) > 0


def test_irreversible_counterexample():
    report = verify_theorem_ii(2.0, 0.43)
    assert len(report.self_intersections) == 1
    assert report.reversibility == pytest.approx(2.0, abs=1e-6)
    assert 0.43 < report.K_min_scaled < 4.0 / 9.0
    assert report.length >= report.contractible_lift_bound


def test_close_up_reproduces_the_report(reversible_report):
    report = reversible_report
    metric = make_randers(build_surface(report.R, report.K_max), report.r)
    closed = close_up_figure_eight(metric, report.phi_star)
    assert closed.metadata['T_star'] == pytest.approx(report.T_star, abs=1e-8)
    assert closed.metadata['closure_residual'] < 1e-6
    assert closed.metadata['reflection_residual'] < 1e-6


def test_close_up_rejects_a_wrong_angle(reversible_report):
    report = reversible_report
    metric = make_randers(build_surface(report.R, report.K_max), report.r)
    with pytest.raises(ClosureError):
        close_up_figure_eight(metric, 0.5 * report.phi_star)
