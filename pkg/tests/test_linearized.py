import numpy as np
import pytest

from src.errors import ContractViolation
from src.geodesics import equator_orbit, launch_geodesic
from src.knots import lift_contractibility_tag
from src.linearized import (
    contractible_lift_bound,
    cz_index,
    dynamical_convexity_report,
    jacobi_scalar,
    linearized_flow_oracle,
    mu_hat,
    rademacher_bound,
    rotation_angle,
    rotation_interval,
)
from src.profile import build_surface, round_sphere
from src.randers import make_randers


@pytest.fixture(scope="module")
def pinched_metric():
    return make_randers(build_surface(0.49, 4.25), 1.0)


@pytest.fixture(scope="module")
def round_metric():
    return make_randers(round_sphere(), 1.0)


def test_jacobi_constant_curvature():
    field = jacobi_scalar(1.0, 0.0, 1.0, 4.0)
    assert field.zeros[0] == pytest.approx(np.pi, abs=1e-8)
    np.testing.assert_allclose(field.f, np.sin(field.t), atol=1e-8)

    flat = jacobi_scalar(0.0, 1.0, 2.0, 3.0)
    np.testing.assert_allclose(flat.f, 1.0 + 2.0 * flat.t, atol=1e-8)
    assert len(flat.zeros) == 0

    pinched = jacobi_scalar(4.0, 0.0, 1.0, 2.0)
    assert pinched.zeros[0] == pytest.approx(np.pi / 2, abs=1e-8)


def test_jacobi_sampled_curvature():
    t = np.linspace(0.0, 4.0, 200)
    field = jacobi_scalar((t, np.ones_like(t)), 0.0, 1.0, 4.0)
    assert field.zeros[0] == pytest.approx(np.pi, abs=1e-8)


def test_rotation_angle_uniform():
    assert rotation_angle(1.0, (1.0, 0.0), 2.0 * np.pi) == pytest.approx(1.0, abs=1e-9)
    assert rotation_angle(1.0, (0.3, -2.0), 4.0 * np.pi * 0.49) == pytest.approx(0.98, abs=1e-9)


def test_rotation_angle_scale_free():
    K = lambda t: 1.0 + 0.5 * np.sin(t)
    assert rotation_angle(K, (1.0, 2.0), 5.0) == pytest.approx(rotation_angle(K, (3.0, 6.0), 5.0), abs=1e-12)


def test_rotation_angle_rejects_zero():
    with pytest.raises(ContractViolation):
        rotation_angle(1.0, (0.0, 0.0), 1.0)


def test_rotation_interval_constant_curvature():
    (lo, hi), min_rate = rotation_interval(1.0, 2.0 * np.pi)
    assert lo == pytest.approx(1.0, abs=1e-9)
    assert hi == pytest.approx(1.0, abs=1e-9)
    assert min_rate == pytest.approx(1.0)


def test_rotation_interval_spreads_for_varying_curvature():
    (lo, hi), min_rate = rotation_interval(4.0, np.pi)
    # the rate cos^2 + 4 sin^2 averages to a full turn in time pi, whatever the start
    assert lo == pytest.approx(1.0, abs=1e-8)
    assert hi == pytest.approx(1.0, abs=1e-8)

    (lo, hi), min_rate = rotation_interval(4.0, 1.0)
    assert hi - lo > 0.01
    assert min_rate >= 1.0 - 1e-9


@pytest.mark.parametrize("interval, expected", [
    ((0.2, 0.3), 1),
    ((0.9, 1.1), 2),
    ((1.0, 1.3), 2),
    ((0.7, 1.0), 1),
    ((0.98, 0.98), 1),
    ((1.0, 1.0), 1),
    ((2.0, 2.0), 3),
    ((-0.3, -0.2), -1),
])
def test_mu_hat_examples(interval, expected):
    assert mu_hat(interval) == expected


@pytest.mark.parametrize("interval", [(0.2, 0.3), (0.9, 1.1), (0.7, 1.0), (1.0, 1.0)])
def test_mu_hat_shift(interval):
    for n in (-2, 1, 3):
        shifted = (interval[0] + n, interval[1] + n)
        assert mu_hat(shifted) == mu_hat(interval) + 2 * n


def test_mu_hat_rejects_long_interval():
    with pytest.raises(ContractViolation):
        mu_hat((0.1, 0.7))


def test_cz_double_equator(pinched_metric):
    record = cz_index(pinched_metric, equator_orbit(pinched_metric, 2))
    assert record.orbit == 'equator2'
    assert record.I[0] == pytest.approx(0.98, abs=1e-8)
    assert record.I[1] == pytest.approx(0.98, abs=1e-8)
    assert record.cz == 1
    assert record.min_rate >= 0.999


def test_cz_round_double_great_circle(round_metric):
    record = cz_index(round_metric, equator_orbit(round_metric, 2))
    assert record.I[0] == pytest.approx(2.0, abs=1e-8)
    assert record.cz == 3


def test_cz_rejects_open_orbit(pinched_metric):
    with pytest.raises(ContractViolation):
        cz_index(pinched_metric, launch_geodesic(pinched_metric, 0.3, 2.0))


def test_length_bounds():
    assert rademacher_bound(1.0, 1.0) == pytest.approx(2.0 * np.pi)
    assert contractible_lift_bound(2.0, 4.0) == pytest.approx(2.0 * np.pi * 1.5 / 2.0)


def test_dynamical_convexity_report(round_metric, pinched_metric):
    (round_verdict,) = dynamical_convexity_report(round_metric, [(equator_orbit(round_metric, 2), True)])
    assert round_verdict.cz == 3
    assert round_verdict.cz_at_least_3
    assert round_verdict.convex_consistent
    assert round_verdict.rotation_exceeds_one_turn

    verdicts = dynamical_convexity_report(pinched_metric, [
        (equator_orbit(pinched_metric, 2), True),
        (equator_orbit(pinched_metric, 1), False),
    ])
    assert [v.orbit for v in verdicts] == ['equator2', 'equator1']
    assert not verdicts[0].convex_consistent
    assert verdicts[1].convex_consistent
    assert verdicts[0].length == pytest.approx(4.0 * np.pi * 0.49)


def test_mildly_pinched_sphere_is_convex_consistent():
    metric = make_randers(build_surface(0.6, 3.0), 1.0)
    orbits = [equator_orbit(metric, 1), equator_orbit(metric, 2)]
    tags = [lift_contractibility_tag(orbit.ambient) for orbit in orbits]
    assert tags == [False, True]

    single, double = dynamical_convexity_report(metric, list(zip(orbits, tags)))
    assert single.cz == 1
    assert double.cz == 3
    assert double.rotation_exceeds_one_turn
    assert single.convex_consistent and double.convex_consistent


def test_linearized_flow_matches_jacobi_field(round_metric):
    geodesic = launch_geodesic(round_metric, 0.3, 3.0)
    coarse = linearized_flow_oracle(round_metric, geodesic, 1e-4)
    fine = linearized_flow_oracle(round_metric, geodesic, 5e-5)
    assert coarse.deviation < 1e-3
    assert 1.5 <= coarse.deviation / fine.deviation <= 2.5
    assert coarse.orthogonality < 1e-6
