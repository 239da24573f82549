from types import SimpleNamespace
from unittest.mock import patch

import numpy as np
import pytest

from src.errors import ContractViolation, ReturnNotFoundError
from src.geodesics import (
    GeodesicState,
    Trajectory,
    covariant_derivative,
    equator_orbit,
    equator_period,
    first_equator_return,
    integrate_finsler_geodesic,
    integrate_h_geodesic,
    launch_geodesic,
    orthogonal_complement,
    parallel_transport,
    spray_oracle,
    trajectory_deviation,
)
from src.profile import build_surface, round_sphere
from src.randers import critical_angle, make_randers, unit_vector_at_angle


@pytest.fixture(scope="module")
def surface():
    return build_surface(0.49, 4.25)


@pytest.fixture(scope="module")
def sphere():
    return round_sphere()


@pytest.fixture(scope="module")
def windy(surface):
    return make_randers(surface, 2.0)


def test_great_circle_returns_to_equator(sphere):
    alpha = 1.0
    traj = integrate_h_geodesic(sphere, GeodesicState(0.0, 0.0, 0.0, np.sin(alpha), np.cos(alpha)), np.pi)
    end = traj.at(np.pi)
    assert end[0] == pytest.approx(0.0, abs=1e-6)
    assert end[1] == pytest.approx(np.pi, abs=1e-6)
    assert traj.s.max() == pytest.approx(alpha, abs=1e-5)
    assert not traj.pole_proximity


def test_clairaut_and_energy_conserved(surface):
    init = GeodesicState(0.0, 0.0, 0.0, 0.4, 1.5)
    traj = integrate_h_geodesic(surface, init, 2.0 * np.pi)
    assert traj.metadata['clairaut_drift'] < 1e-9
    assert traj.metadata['energy_drift'] < 1e-9
    assert traj.metadata['clairaut'] == pytest.approx(init.clairaut(surface))


def test_meridian_hits_pole(surface):
    traj = integrate_h_geodesic(surface, GeodesicState(0.0, 0.0, 0.0, 1.0, 0.0), 3.0)
    assert traj.pole_proximity
    assert traj.duration < 3.0


def test_zero_velocity_rejected(surface):
    with pytest.raises(ContractViolation):
        integrate_h_geodesic(surface, GeodesicState(0.0, 0.0, 0.0, 0.0, 0.0), 1.0)


def test_windless_finsler_geodesic_is_h_geodesic(surface):
    metric = make_randers(surface, 1.0)
    v = unit_vector_at_angle(metric, (0.0, 0.0), 0.4)
    finsler = integrate_finsler_geodesic(metric, v, 3.0)
    riemann = integrate_h_geodesic(surface, GeodesicState(0.0, 0.0, 0.0, v.vs, v.vtheta), 3.0)
    np.testing.assert_allclose(finsler.states, riemann.states, atol=1e-12)


def test_non_unit_vector_rejected(windy):
    v = unit_vector_at_angle(windy, (0.0, 0.0), 0.4).scaled(2.0)
    with pytest.raises(ContractViolation):
        integrate_finsler_geodesic(windy, v, 1.0)


def test_equator_orbit_period(windy):
    period = equator_period(windy)
    assert period == pytest.approx(2.0 * np.pi * 0.49 / (1.0 + 1.0 / 3.0))
    assert equator_period(windy, -1) == pytest.approx(2.0 * np.pi * 0.49 / (1.0 - 1.0 / 3.0))

    orbit = equator_orbit(windy, turns=1)
    assert orbit.metadata['orbit'] == 'equator1'
    assert orbit.duration == pytest.approx(period)
    assert np.abs(orbit.s).max() < 1e-9
    assert orbit.theta[-1] == pytest.approx(2.0 * np.pi, abs=1e-8)
    assert orbit.metadata['speed_drift'] < 1e-9


def test_spray_oracle_agrees_with_commuting_flows(windy, surface):
    rng = np.random.default_rng(5)
    accepted = 0
    while accepted < 20:
        s0 = rng.uniform(-0.6, 0.6)
        phi = rng.uniform(0.0, critical_angle(windy, s0))
        v = unit_vector_at_angle(windy, (s0, 0.0), phi)
        fast = integrate_finsler_geodesic(windy, v, 3.0)
        if fast.pole_proximity or surface.rho(fast.s).min() < 0.1:
            continue
        slow = spray_oracle(windy, v, 3.0)
        assert trajectory_deviation(fast, slow) < 1e-6
        assert fast.metadata['speed_drift'] < 1e-7
        assert slow.metadata['speed_drift'] < 1e-6
        accepted += 1


def test_spray_oracle_horizon_limited(windy):
    with pytest.raises(ContractViolation):
        spray_oracle(windy, unit_vector_at_angle(windy, (0.0, 0.0), 0.3), 6.0)


@pytest.fixture(scope="module")
def low_geodesic(windy):
    # stays inside the equatorial band where the curvature is constant
    return launch_geodesic(windy, 0.05, 2.0)


def test_velocity_is_parallel_along_geodesic(windy, low_geodesic):
    DV, guaranteed = covariant_derivative(windy, low_geodesic, low_geodesic.states[:, 2:])
    assert guaranteed
    assert np.abs(DV[20:-20]).max() < 1e-6


def test_covariant_derivative_flags_foreign_curves(windy, surface):
    traj = integrate_h_geodesic(surface, GeodesicState(0.0, 0.0, 0.0, 0.1, 1.0), 0.5)
    _, guaranteed = covariant_derivative(windy, traj, traj.states[:, 2:])
    assert not guaranteed


def test_parallel_transport_keeps_orthonormal_frame(windy, low_geodesic):
    start = low_geodesic.states[0]
    V0 = orthogonal_complement(windy, start[0], start[2:])
    t_eval = np.linspace(0.0, low_geodesic.duration, 21)
    V = parallel_transport(windy, low_geodesic, V0, t_eval)
    for t, Vt in zip(t_eval, V):
        state = low_geodesic.at(t)
        g = windy.tensor_at(state[0], state[2:])
        assert Vt @ g @ Vt == pytest.approx(1.0, abs=1e-6)
        assert Vt @ g @ state[2:] == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_allclose(Vt, orthogonal_complement(windy, state[0], state[2:]), atol=1e-6)


def test_round_sphere_first_return(sphere):
    metric = make_randers(sphere, 1.0)
    ret = first_equator_return(metric, 0.7)
    assert ret.T == pytest.approx(np.pi, abs=1e-6)
    assert ret.theta_adv == pytest.approx(np.pi, abs=1e-6)
    assert ret.min_thetadot > 0.0


def test_pinched_first_return_near_equator(surface):
    metric = make_randers(surface, 1.0)
    ret = first_equator_return(metric, 1e-3)
    assert ret.theta_adv == pytest.approx(np.pi / 0.49, abs=1e-4)
    assert ret.T == pytest.approx(np.pi, abs=1e-4)


def test_first_return_skips_hits_at_launch(sphere):
    metric = make_randers(sphere, 1.0)
    t = np.linspace(0.0, 4.0, 41)
    states = np.column_stack([np.zeros_like(t), t, np.zeros_like(t), np.ones_like(t)])
    sol = SimpleNamespace(
        t_events=[np.array([]), np.array([1e-6, 2.5, 3.5])],
        y_events=[np.empty((0, 4)), np.array([[0.0, 1e-6, -1.0, 1.0], [0.0, 2.5, -1.0, 1.0], [0.0, 3.5, -1.0, 1.0]])],
    )
    fake = Trajectory(t, states, np.zeros((len(t), 3)), {'_sol': sol})
    with patch('src.geodesics.integrate_finsler_geodesic', return_value=fake):
        ret = first_equator_return(metric, 0.7)
    assert ret.T == 2.5
    assert ret.theta_adv == 2.5


def test_first_return_missing(sphere):
    metric = make_randers(sphere, 1.0)
    t = np.linspace(0.0, 1.0, 11)
    states = np.column_stack([np.zeros_like(t), t, np.zeros_like(t), np.ones_like(t)])
    sol = SimpleNamespace(t_events=[np.array([]), np.array([1e-6])],
                          y_events=[np.empty((0, 4)), np.array([[0.0, 1e-6, -1.0, 1.0]])])
    fake = Trajectory(t, states, np.zeros((len(t), 3)), {'_sol': sol})
    with patch('src.geodesics.integrate_finsler_geodesic', return_value=fake):
        with pytest.raises(ReturnNotFoundError):
            first_equator_return(metric, 0.7)
