"""Geodesics of the profile metric h and of the Randers metric F.

Production Finsler geodesics use the commuting flows of the wind and of h:
c(t) = R_{eta t}(gamma_0(t)) where gamma_0 is the h-geodesic with initial
velocity v - X and R_t rotates by t in theta.  ``spray_oracle`` integrates
the Finsler spray directly from F and is only used to check that path.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .config import settings
from .errors import ContractViolation, DegeneracyError, IntegrationError, ReturnNotFoundError
from .profile import ProfileSurface
from .randers import RandersMetric, TangentVector, finsler_norm, unit_vector_at_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeodesicState:
    t: float
    s: float
    theta: float
    sdot: float
    thetadot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.theta, self.sdot, self.thetadot])

    def clairaut(self, surface: ProfileSurface) -> float:
        return float(surface.rho(self.s) ** 2 * self.thetadot)


@dataclass
class Trajectory:
    """Samples of (s, theta, sdot, thetadot) with ambient points on the surface."""

    t: np.ndarray
    states: np.ndarray
    ambient: np.ndarray
    metadata: Dict = field(default_factory=dict)
    dense: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pole_proximity: bool = False

    @property
    def s(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def theta(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def sdot(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def thetadot(self) -> np.ndarray:
        return self.states[:, 3]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def at(self, t) -> np.ndarray:
        if self.dense is None:
            raise ContractViolation("Trajectory has no dense interpolant", stage="trajectory")
        return self.dense(t)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            't': self.t,
            's': self.s,
            'theta': self.theta,
            'sdot': self.sdot,
            'thetadot': self.thetadot,
            'x': self.ambient[:, 0],
            'y': self.ambient[:, 1],
            'z': self.ambient[:, 2],
        })


def _sample_count(T: float) -> int:
    return max(401, int(400 * T) + 1)


def _h_rhs(surface: ProfileSurface):
    def rhs(t, y):
        s, _, sdot, thdot = y
        rho = surface.rho(s)
        drho = surface.rhodot(s)
        return [sdot, thdot, rho * drho * thdot ** 2, -2.0 * (drho / rho) * sdot * thdot]
    return rhs


def _pole_event(surface: ProfileSurface):
    limit = surface.L - settings.POLE_MARGIN

    def near_pole(t, y):
        return limit - abs(y[0])
    near_pole.terminal = True
    near_pole.direction = -1
    return near_pole


def _solve_h(surface: ProfileSurface, y0, T: float, extra_events=()):
    sol = solve_ivp(
        _h_rhs(surface),
        (0.0, T),
        y0,
        dense_output=True,
        events=[_pole_event(surface), *extra_events],
        **settings.ivp_options,
    )
    if sol.status == -1:
        raise IntegrationError(f"Geodesic integration failed: {sol.message}", stage="geodesic")
    return sol


def _trajectory_from(surface: ProfileSurface, sol, wind: float, metadata: Dict) -> Trajectory:
    T_end = float(sol.t[-1])
    t = np.linspace(0.0, T_end, _sample_count(T_end))

    def dense(tt):
        y = np.array(sol.sol(tt), dtype=float)
        y[1] = y[1] + wind * np.asarray(tt)
        y[3] = y[3] + wind
        return y

    states = dense(t).T
    ambient = surface.embedding(states[:, 0], states[:, 1])
    pole = bool(len(sol.t_events[0]))
    if pole:
        logger.info(f"Trajectory stopped near a pole at t={T_end:.6f}")
    return Trajectory(t, states, ambient, metadata, dense, pole)


def integrate_h_geodesic(surface: ProfileSurface, init: GeodesicState, T: float) -> Trajectory:
    """Integrate s'' = rho rho' theta'^2, theta'' = -2 (rho'/rho) s' theta'."""
    if init.sdot == 0.0 and init.thetadot == 0.0:
        raise ContractViolation("Initial velocity must be nonzero", stage="h_geodesic")
    sol = _solve_h(surface, init.as_array(), T)
    metadata = {'kind': 'h-geodesic', 'geodesic': True, 'eta': 0.0, 'init': init.as_array().tolist(), 'nfev': int(sol.nfev)}
    traj = _trajectory_from(surface, sol, 0.0, metadata)
    rho = surface.rho(traj.s)
    energy = traj.sdot ** 2 + (rho * traj.thetadot) ** 2
    clairaut = rho ** 2 * traj.thetadot
    traj.metadata['energy_drift'] = float(np.ptp(energy))
    traj.metadata['clairaut_drift'] = float(np.ptp(clairaut))
    traj.metadata['clairaut'] = float(clairaut[0])
    return traj


def integrate_finsler_geodesic(metric: RandersMetric, v0: TangentVector, T: float, extra_events=()) -> Trajectory:
    """Unit-speed F-geodesic through commuting flows of the wind and of h."""
    F0 = finsler_norm(metric, v0)
    if abs(F0 - 1.0) > 1e-8:
        raise ContractViolation(f"Initial vector must be F-unit, F = {F0}", stage="finsler_geodesic")
    y0 = [v0.s, v0.theta, v0.vs, v0.vtheta - metric.eta]
    sol = _solve_h(metric.surface, y0, T, extra_events)
    metadata = {'kind': 'finsler-geodesic', 'geodesic': True, 'eta': metric.eta,
                'init': [v0.s, v0.theta, v0.vs, v0.vtheta], 'nfev': int(sol.nfev)}
    traj = _trajectory_from(metric.surface, sol, metric.eta, metadata)
    speeds = metric.norm(traj.s, traj.sdot, traj.thetadot)
    traj.metadata['speed_drift'] = float(np.max(np.abs(speeds - 1.0)))
    traj.metadata['_sol'] = sol
    return traj


def spray(metric: RandersMetric, s: float, y: np.ndarray) -> np.ndarray:
    """Spray coefficients G^i = 1/4 g^il ([F^2]_{x^k y^l} y^k - [F^2]_{x^l})."""
    h = settings.FD_STEP
    ys, yth = y
    dgrad_ds = (metric.fiber_gradient(s + h, y) - metric.fiber_gradient(s - h, y)) / (2.0 * h)
    dF2_ds = (metric.norm_squared(s + h, ys, yth) - metric.norm_squared(s - h, ys, yth)) / (2.0 * h)
    g = metric.tensor_at(s, y)
    if np.linalg.cond(g) > 1e12:
        raise DegeneracyError("Fundamental tensor is ill-conditioned", stage="spray", s=s)
    rhs = dgrad_ds * ys - np.array([dF2_ds, 0.0])
    return 0.25 * np.linalg.solve(g, rhs)


def nonlinear_connection(metric: RandersMetric, s: float, y: np.ndarray) -> np.ndarray:
    """Gamma^i_k = dG^i/dy^k by a five-point stencil in the fiber."""
    y = np.asarray(y, dtype=float)
    steps = 1e2 * metric.fiber_steps(s, y)
    N = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = steps[k]
        N[:, k] = (-spray(metric, s, y + 2 * e) + 8 * spray(metric, s, y + e)
                   - 8 * spray(metric, s, y - e) + spray(metric, s, y - 2 * e)) / (12.0 * steps[k])
    return N


def spray_oracle(metric: RandersMetric, v0: TangentVector, T: float) -> Trajectory:
    """Integrate x'' = -2 G(x, x') straight from F."""
    if T > 5.0:
        raise ContractViolation("Spray oracle is limited to horizons T <= 5", stage="spray_oracle", T=T)

    def rhs(t, state):
        G = spray(metric, state[0], state[2:])
        return [state[2], state[3], -2.0 * G[0], -2.0 * G[1]]

    sol = solve_ivp(rhs, (0.0, T), [v0.s, v0.theta, v0.vs, v0.vtheta], dense_output=True,
                    events=[_pole_event(metric.surface)], **settings.ivp_options)
    if sol.status == -1:
        raise IntegrationError(f"Spray oracle failed: {sol.message}", stage="spray_oracle")
    metadata = {'kind': 'spray-oracle', 'geodesic': True, 'eta': metric.eta, 'nfev': int(sol.nfev)}
    traj = _trajectory_from(metric.surface, sol, 0.0, metadata)
    speeds = metric.norm(traj.s, traj.sdot, traj.thetadot)
    traj.metadata['speed_drift'] = float(np.max(np.abs(speeds - speeds[0])))
    return traj


def trajectory_deviation(a: Trajectory, b: Trajectory, n: int = 301) -> float:
    """Max state difference on a common time grid."""
    T = min(a.t[-1], b.t[-1])
    t = np.linspace(0.0, T, n)
    return float(np.max(np.abs(a.at(t) - b.at(t))))


def covariant_derivative(metric: RandersMetric, geodesic: Trajectory, V: np.ndarray) -> Tuple[np.ndarray, bool]:
    """DV/dt = dV/dt + Gamma^i_k(c, c') V^k along the samples of ``geodesic``.

    The flag is False when the curve is not an F-geodesic, where the
    formula loses its meaning for metric compatibility.
    """
    V = np.asarray(V, dtype=float)
    dV = CubicSpline(geodesic.t, V, axis=0).derivative()(geodesic.t)
    out = np.empty_like(V)
    for n, (s, yv) in enumerate(zip(geodesic.s, geodesic.states[:, 2:])):
        out[n] = dV[n] + nonlinear_connection(metric, s, yv) @ V[n]
    guaranteed = bool(geodesic.metadata.get('geodesic')) and np.isclose(geodesic.metadata.get('eta', -1.0), metric.eta)
    if not guaranteed:
        logger.warning("Covariant derivative taken along a curve that is not a geodesic of this metric")
    return out, guaranteed


def parallel_transport(metric: RandersMetric, geodesic: Trajectory, V0, t_eval: np.ndarray) -> np.ndarray:
    """Solve V' = -Gamma(c, c') V along the geodesic; returns V at t_eval."""
    def rhs(t, V):
        state = geodesic.at(t)
        return -nonlinear_connection(metric, state[0], state[2:]) @ V

    sol = solve_ivp(rhs, (float(t_eval[0]), float(t_eval[-1])), np.asarray(V0, dtype=float), t_eval=t_eval,
                    method=settings.INTEGRATOR_METHOD, rtol=1e-9, atol=1e-11)
    if not sol.success:
        raise IntegrationError(f"Parallel transport failed: {sol.message}", stage="parallel_transport")
    return sol.y.T


def orthogonal_complement(metric: RandersMetric, s: float, v: np.ndarray) -> np.ndarray:
    """c'^perp: g_v-unit, g_v-orthogonal to v and positively oriented."""
    g = metric.tensor_at(s, v)
    gv = g @ v
    w = np.array([-gv[1], gv[0]])
    return w / np.sqrt(w @ g @ w)


def equator_period(metric: RandersMetric, direction: int = 1) -> float:
    """F-length of the equator traversed with (+1) or against (-1) the wind."""
    return float(2.0 * np.pi * metric.R / (1.0 + direction * metric.wind_at_equator))


def equator_orbit(metric: RandersMetric, turns: int = 2) -> Trajectory:
    """Equator traversed ``turns`` times along the wind."""
    v = unit_vector_at_angle(metric, (0.0, 0.0), 0.0)
    traj = integrate_finsler_geodesic(metric, v, turns * equator_period(metric))
    traj.metadata['orbit'] = f"equator{turns}"
    return traj


def launch_geodesic(metric: RandersMetric, phi: float, T: float) -> Trajectory:
    """Geodesic from (0, 0) with initial vector at h-angle phi to the wind."""
    traj = integrate_finsler_geodesic(metric, unit_vector_at_angle(metric, (0.0, 0.0), phi), T)
    traj.metadata['phi'] = float(phi)
    return traj


@dataclass
class EquatorReturn:
    phi: float
    T: float
    theta_adv: float
    point: Tuple[float, float]
    trajectory: Trajectory
    min_thetadot: float


def first_equator_return(metric: RandersMetric, phi: float) -> EquatorReturn:
    """First transverse return to the equator of the geodesic launched at angle phi."""
    v = unit_vector_at_angle(metric, (0.0, 0.0), phi)

    def crosses_equator(t, y):
        return y[0]
    crosses_equator.direction = -1

    traj = integrate_finsler_geodesic(metric, v, 4.0 * np.pi, extra_events=(crosses_equator,))
    sol = traj.metadata['_sol']
    hits = np.asarray(sol.t_events[1])
    # crossings before t_min are the launch point itself
    later = np.flatnonzero(hits > settings.RETURN_T_MIN)
    if not len(later):
        raise ReturnNotFoundError(f"No equator return for phi={phi}", stage="first_return", phi=phi,
                                  pole_proximity=traj.pole_proximity)
    k = int(later[0])
    T = float(hits[k])
    theta_adv = float(sol.y_events[1][k][1] + metric.eta * T)

    min_rate = float(traj.thetadot[traj.t <= T].min())
    if min_rate < -settings.MONOTONICITY_TOL:
        logger.warning(f"theta decreases along the geodesic for phi={phi}: min rate {min_rate:.3e}")
    elif min_rate <= 0.0:
        logger.debug(f"theta rate within noise of zero for phi={phi}: {min_rate:.3e}")
    return EquatorReturn(phi, T, theta_adv, (0.0, theta_adv % (2.0 * np.pi)), traj, min_rate)
