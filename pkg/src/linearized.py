"""Jacobi fields, rotation intervals and the Conley-Zehnder index.

Along a unit-speed geodesic the transverse linearized flow reduces to the
planar system u' = [[0, -K], [1, 0]] u.  Its argument obeys

    theta' = cos(theta)^2 + K(t) sin(theta)^2,

which is what we integrate: it is scale free and never under- or overflows.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .config import settings
from .errors import ContractViolation, IntegrationError
from .geodesics import Trajectory, launch_geodesic, orthogonal_complement
from .randers import RandersMetric, unit_vector_at_angle

logger = logging.getLogger(__name__)

CurvatureInput = Union[float, Callable[[float], float], Tuple[np.ndarray, np.ndarray]]


class RotationRecord(BaseModel):
    """Rotation interval and index of one closed orbit."""
    orbit: str
    T: float = Field(..., gt=0, description="Period")
    I: Tuple[float, float] = Field(..., description="Interval of total rotations over the period")
    cz: int
    min_rate: float = Field(..., description="Smallest observed angular rate")


class ConvexityVerdict(BaseModel):
    orbit: str
    contractible: bool
    cz: int
    cz_at_least_3: bool
    length: float
    length_bound: float
    length_ok: bool
    rotation_exceeds_one_turn: bool
    convex_consistent: bool


def _curvature_function(K_of_t: CurvatureInput) -> Callable:
    if callable(K_of_t):
        return K_of_t
    if isinstance(K_of_t, tuple):
        t, K = K_of_t
        return CubicSpline(np.asarray(t), np.asarray(K))
    K = float(K_of_t)
    return lambda t: K


@dataclass
class JacobiField:
    t: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    zeros: np.ndarray


def jacobi_scalar(K_of_t: CurvatureInput, f0: float, df0: float, T: float, n: int = 2001) -> JacobiField:
    """Solve f'' = -K(t) f on [0, T]."""
    K = _curvature_function(K_of_t)

    def vanishes(t, y):
        return y[0]

    t = np.linspace(0.0, T, n)
    sol = solve_ivp(lambda tt, y: [y[1], -K(tt) * y[0]], (0.0, T), [f0, df0], t_eval=t,
                    events=[vanishes], **settings.ivp_options)
    if not sol.success:
        raise IntegrationError(f"Jacobi integration failed: {sol.message}", stage="jacobi")
    zeros = sol.t_events[0]
    return JacobiField(sol.t, sol.y[0], sol.y[1], zeros[zeros > 1e-9])


def _rotation_fan(K: Callable, angles: np.ndarray, T: float, n: int = 2001) -> Tuple[np.ndarray, float]:
    t = np.linspace(0.0, T, n)
    sol = solve_ivp(lambda tt, th: np.cos(th) ** 2 + K(tt) * np.sin(th) ** 2, (0.0, T), angles,
                    t_eval=t, **settings.ivp_options)
    if not sol.success:
        raise IntegrationError(f"Rotation integration failed: {sol.message}", stage="rotation")
    K_t = np.array([K(tt) for tt in t])
    rates = np.cos(sol.y) ** 2 + K_t[None, :] * np.sin(sol.y) ** 2
    return (sol.y[:, -1] - angles) / (2.0 * np.pi), float(rates.min())


def rotation_angle(K_of_t: CurvatureInput, w0: Sequence[float], T: float) -> float:
    """Total rotation (in turns) of the planar solution starting at w0 = (f', f)."""
    w0 = np.asarray(w0, dtype=float)
    if not np.any(w0):
        raise ContractViolation("Initial vector must be nonzero", stage="rotation")
    delta, _ = _rotation_fan(_curvature_function(K_of_t), np.array([math.atan2(w0[1], w0[0])]), T)
    return float(delta[0])


def rotation_interval(K_of_t: CurvatureInput, T: float, fan: int = None) -> Tuple[Tuple[float, float], float]:
    """[min, max] of the rotation over a fan of initial directions, refined at the extremes."""
    fan = fan or settings.ROTATION_FAN_SIZE
    K = _curvature_function(K_of_t)
    # rotation depends on the line through w only
    angles = np.linspace(0.0, np.pi, fan, endpoint=False)
    deltas, min_rate = _rotation_fan(K, angles, T)
    step = angles[1] - angles[0]

    def single(a):
        return float(_rotation_fan(K, np.array([a]), T, n=3)[0][0])

    lo = float(deltas.min())
    hi = float(deltas.max())
    if hi - lo > 1e-9:
        a_lo, a_hi = angles[np.argmin(deltas)], angles[np.argmax(deltas)]
        res_lo = minimize_scalar(single, bounds=(a_lo - step, a_lo + step), method='bounded')
        res_hi = minimize_scalar(lambda a: -single(a), bounds=(a_hi - step, a_hi + step), method='bounded')
        lo, hi = min(lo, float(res_lo.fun)), max(hi, -float(res_hi.fun))
    return (lo, hi), min_rate


def mu_hat(I: Tuple[float, float], snap: float = 1e-7) -> int:
    """2k if k lies in I, 2k + 1 if I sits inside (k, k + 1).

    Intervals touching the integers take the limit of I - eps as eps -> 0+.
    Endpoints within ``snap`` of an integer are treated as that integer.
    """
    lo, hi = float(I[0]), float(I[1])
    if hi - lo >= 0.5:
        raise ContractViolation(f"Interval {I} is not shorter than 1/2", stage="mu_hat")
    if abs(lo - round(lo)) < snap:
        lo = float(round(lo))
    if abs(hi - round(hi)) < snap:
        hi = float(round(hi))
    k = math.ceil(lo)
    if k < hi:
        return 2 * k
    return 2 * (math.ceil(hi) - 1) + 1


def curvature_along(metric: RandersMetric, orbit: Trajectory) -> Callable[[float], float]:
    """Flag curvature along the orbit; for these navigation metrics it is K of h."""
    def K(t):
        return float(metric.surface.curvature(orbit.at(t)[0]))
    return K


def closure_residual(orbit: Trajectory) -> float:
    start, end = orbit.states[0], orbit.states[-1]
    dtheta = (end[1] - start[1] + np.pi) % (2.0 * np.pi) - np.pi
    return float(abs(end[0] - start[0]) + abs(dtheta) + np.abs(end[2:] - start[2:]).sum())


def cz_index(metric: RandersMetric, closed_orbit: Trajectory, orbit_id: str = None) -> RotationRecord:
    orbit_id = orbit_id or closed_orbit.metadata.get('orbit', 'orbit')
    residual = closure_residual(closed_orbit)
    if residual > settings.CLOSURE_TOL:
        raise ContractViolation(f"Orbit {orbit_id} does not close (residual {residual:.2e})", stage="cz_index",
                                residual=residual)
    T = closed_orbit.duration
    I, min_rate = rotation_interval(curvature_along(metric, closed_orbit), T)
    record = RotationRecord(orbit=orbit_id, T=T, I=I, cz=mu_hat(I), min_rate=min_rate)
    logger.info(f"CZ index of {orbit_id}: I=[{I[0]:.8f}, {I[1]:.8f}], cz={record.cz}")
    return record


def rademacher_bound(r: float, K_max: float) -> float:
    """Lower bound on the length of a closed geodesic."""
    return math.pi * (1.0 + 1.0 / r) / math.sqrt(K_max)


def contractible_lift_bound(r: float, K_max: float) -> float:
    """Lower bound for closed geodesics whose unit-tangent lift is contractible."""
    return 2.0 * rademacher_bound(r, K_max)


def dynamical_convexity_report(metric: RandersMetric, orbits: List[Tuple[Trajectory, bool]]) -> List[ConvexityVerdict]:
    """Per-orbit verdict; ``orbits`` pairs each closed orbit with its contractibility tag."""
    r = metric.analytic_reversibility
    bound = contractible_lift_bound(r, metric.surface.K_max)
    verdicts = []
    for n, (orbit, contractible) in enumerate(orbits):
        record = cz_index(metric, orbit, orbit.metadata.get('orbit', f'orbit{n}'))
        length = record.T
        verdict = ConvexityVerdict(
            orbit=record.orbit,
            contractible=contractible,
            cz=record.cz,
            cz_at_least_3=record.cz >= 3,
            length=length,
            length_bound=bound,
            length_ok=length >= bound,
            rotation_exceeds_one_turn=record.I[0] > 1.0,
            convex_consistent=(not contractible) or record.cz >= 3,
        )
        if contractible and not verdict.cz_at_least_3:
            logger.warning(f"Orbit {record.orbit} has cz={record.cz} < 3: not dynamically convex")
        verdicts.append(verdict)
    return verdicts


@dataclass
class LinearizedOracleResult:
    deviation: float
    orthogonality: float


def linearized_flow_oracle(metric: RandersMetric, geodesic: Trajectory, dphi: float) -> LinearizedOracleResult:
    """Compare d/dphi of the launch family against the Jacobi field f(t) c'^perp(t).

    ``geodesic`` must come from ``launch_geodesic`` so its launch angle is known.
    """
    phi = geodesic.metadata['phi']
    T = geodesic.duration
    t = np.linspace(0.0, T, 401)
    base = geodesic.at(t)
    forward = launch_geodesic(metric, phi + dphi, T).at(t)
    J_fd = (forward[:2] - base[:2]) / dphi

    v0 = base[2:, 0]
    perp0 = orthogonal_complement(metric, base[0, 0], v0)
    g0 = metric.tensor_at(base[0, 0], v0)
    dv = (unit_vector_at_angle(metric, (0.0, 0.0), phi + 1e-6).components
          - unit_vector_at_angle(metric, (0.0, 0.0), max(phi - 1e-6, 0.0)).components) / (phi + 1e-6 - max(phi - 1e-6, 0.0))
    df0 = float(perp0 @ g0 @ dv)

    jacobi = jacobi_scalar(curvature_along(metric, geodesic), 0.0, df0, T, n=len(t))
    perps = np.array([orthogonal_complement(metric, s, y) for s, y in zip(base[0], base[2:].T)])
    J_pred = jacobi.f[:, None] * perps
    deviation = float(np.max(np.abs(J_fd.T - J_pred)) / np.max(np.abs(J_pred)))

    if phi - dphi >= 0.0:
        backward = launch_geodesic(metric, phi - dphi, T).at(t)
        J_c = (forward[:2] - backward[:2]) / (2.0 * dphi)
        ortho = max(abs(float(y @ metric.tensor_at(s, y) @ j)) for s, y, j in zip(base[0], base[2:].T, J_c.T))
    else:
        ortho = float('nan')
    logger.info(f"Linearized oracle at phi={phi}, dphi={dphi}: deviation={deviation:.3e}")
    return LinearizedOracleResult(deviation, ortho)
