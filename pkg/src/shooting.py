"""Shooting for the figure-eight closed geodesic.

Geodesics leave the equator point theta = 0 at h-angle phi to the wind and
come back to the equator after time T_phi, having advanced by theta_adv in
longitude.  As phi runs from 0 to phi_0 the advance moves from pi/R + eta*pi
down to pi + T_{phi_0} eta, so for R < r/(r+1) it crosses 2 pi.  At the
crossing the geodesic closes up after two returns (the second half is the
mirror image of the first under s -> -s) and self-intersects exactly once.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq, least_squares
from scipy.spatial import cKDTree

from .config import settings
from .errors import ClosureError, ConfigurationError, ConsistencyError, NoBracketError, ReturnNotFoundError
from .geodesics import Trajectory, first_equator_return, launch_geodesic
from .linearized import closure_residual, contractible_lift_bound, rademacher_bound
from .profile import build_surface
from .randers import RandersMetric, critical_angle, make_randers, normalized_descriptor, reversibility

logger = logging.getLogger(__name__)


class SelfIntersection(BaseModel):
    t_i: float
    t_j: float
    angle: float = Field(..., description="Angle between the two velocity directions, radians")
    kind: str = Field(..., description="transverse, negative-tangency, positive-tangency or ambiguous")
    distance: float


class ShootingReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    r: float
    delta: float
    R: float
    K_max: float
    eta: float
    table: List[Dict[str, float]]
    limits: Dict[str, float]
    phi_star: float
    T_star: float
    closure_residual: float
    self_intersections: List[SelfIntersection]
    K_min_scaled: float
    K_max_scaled: float
    reversibility: float
    length: float
    length_normalized: float
    rademacher_bound: float
    contractible_lift_bound: float
    closed_geodesic: Optional[Any] = Field(default=None, exclude=True)


def pinch_window(r: float, delta: float) -> Tuple[float, float]:
    """(R, K_max) inside the constructive window with 1/K_max > delta."""
    ratio = r / (r + 1.0)
    if not 0.0 < delta < ratio ** 2:
        raise ConfigurationError(f"delta={delta} must lie in (0, {ratio ** 2:.6f})", stage="window", r=r, delta=delta)
    slack = settings.PINCH_WINDOW_SLACK
    while ratio ** 2 * (1.0 - slack) ** 2 / (1.0 + slack) <= delta:
        slack *= 0.5
        if slack < 1e-8:
            raise ConfigurationError("delta too close to the pinching limit", stage="window", r=r, delta=delta)
    R = ratio * (1.0 - slack)
    return R, (1.0 + slack) / R ** 2


def default_phi_grid(phi0: float, n: Optional[int] = None) -> np.ndarray:
    """Log-spaced points in (0, phi0), mirrored so they accumulate at both ends."""
    n = n or settings.SWEEP_POINTS
    half = np.geomspace(settings.SWEEP_END_GAP, 0.5, n // 2, endpoint=False)
    middle = np.full(n % 2, 0.5)
    return phi0 * np.concatenate([half, middle, 1.0 - half[::-1]])


def _return_row(metric: RandersMetric, phi: float) -> Dict[str, float]:
    ret = first_equator_return(metric, phi)
    return {'phi': float(phi), 'T_phi': ret.T, 'theta_adv': ret.theta_adv}


def sweep_returns(metric: RandersMetric, phis: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Table of (phi, T_phi, theta_adv) over the grid."""
    phis = default_phi_grid(critical_angle(metric)) if phis is None else np.asarray(phis)
    try:
        with ThreadPoolExecutor(max_workers=settings.N_WORKERS) as pool:
            rows = list(pool.map(lambda p: _return_row(metric, p), phis))
    except ReturnNotFoundError as e:
        e.stage = "sweep"
        logger.error(f"Sweep aborted: {str(e)}")
        raise
    table = pd.DataFrame(rows)

    jumps = np.diff(table['theta_adv'].to_numpy())
    if np.any(jumps > settings.SWEEP_WIGGLE_TOL):
        logger.warning(f"theta_adv is not monotone on the sweep grid (max rise {jumps.max():.3e})")
    logger.info(f"Swept {len(table)} launch angles: theta_adv in [{table['theta_adv'].min():.6f}, {table['theta_adv'].max():.6f}]")
    return table


def richardson_limit(h: np.ndarray, y: np.ndarray, levels: int = 3) -> float:
    """Value at h = 0 from the Neville tableau over the levels + 1 points with smallest h."""
    order = np.argsort(h)[:levels + 1]
    h = np.asarray(h, dtype=float)[order]
    tableau = np.asarray(y, dtype=float)[order].copy()
    n = len(h)
    for k in range(1, n):
        tableau[:n - k] = (h[k:] * tableau[:n - k] - h[:n - k] * tableau[1:n - k + 1]) / (h[k:] - h[:n - k])
    return float(tableau[0])


def extrapolated_limits(metric: RandersMetric, table: pd.DataFrame) -> Dict[str, float]:
    """theta_adv at phi -> 0+ and phi -> phi_0- from the sweep endpoints."""
    phi0 = critical_angle(metric)
    phi = table['phi'].to_numpy()
    theta = table['theta_adv'].to_numpy()
    return {
        'theta_adv_at_0': richardson_limit(phi, theta),
        'theta_adv_at_phi0': richardson_limit(phi0 - phi, theta),
    }


def return_map_limits(metric: RandersMetric) -> Dict[str, float]:
    """Closed-form limits pi/R + eta*pi and pi + T_{phi_0} eta, with T_{phi_0} = 2L."""
    return {
        'theta_adv_at_0': math.pi / metric.R + metric.eta * math.pi,
        'theta_adv_at_phi0': math.pi + 2.0 * metric.surface.L * metric.eta,
        'T_phi0': 2.0 * metric.surface.L,
    }


def find_phi_star(metric: RandersMetric, table: Optional[pd.DataFrame] = None) -> float:
    """Launch angle whose first return advances theta by exactly 2 pi."""
    table = sweep_returns(metric) if table is None else table
    gap = table['theta_adv'].to_numpy() - 2.0 * math.pi
    crossings = np.nonzero(np.sign(gap[:-1]) * np.sign(gap[1:]) <= 0)[0]
    if not len(crossings):
        raise NoBracketError("theta_adv never crosses 2 pi: metric is outside the constructive window",
                             stage="phi_star", theta_min=float(table['theta_adv'].min()),
                             theta_max=float(table['theta_adv'].max()))
    k = int(crossings[0])
    a, b = float(table['phi'].iloc[k]), float(table['phi'].iloc[k + 1])
    if gap[k] == 0.0:
        return a

    phi_star = brentq(lambda p: first_equator_return(metric, p).theta_adv - 2.0 * math.pi, a, b,
                      xtol=1e-15, rtol=4 * np.finfo(float).eps)
    residual = abs(first_equator_return(metric, phi_star).theta_adv - 2.0 * math.pi)
    if residual > settings.PHI_STAR_TOL:
        logger.warning(f"phi* residual {residual:.2e} above tolerance")
    logger.info(f"phi* = {phi_star:.12f} (residual {residual:.2e})")
    return float(phi_star)


def _reflect(states: np.ndarray) -> np.ndarray:
    out = states.copy()
    out[:, 0] *= -1.0
    out[:, 2] *= -1.0
    return out


def close_up_figure_eight(metric: RandersMetric, phi_star: float) -> Trajectory:
    """Integrate the phi* geodesic over two returns and check that it closes."""
    T_star = first_equator_return(metric, phi_star).T
    closed = launch_geodesic(metric, phi_star, 2.0 * T_star)
    closed.metadata['orbit'] = 'figure_eight'
    closed.metadata['T_star'] = T_star

    residual = closure_residual(closed)
    closed.metadata['closure_residual'] = residual
    if residual > settings.CLOSURE_TOL:
        raise ClosureError(f"Figure eight does not close (residual {residual:.2e})", stage="close_up", residual=residual)

    t = np.linspace(0.0, T_star, 201)
    first = closed.at(t).T
    second = closed.at(t + T_star).T
    mirrored = _reflect(first)
    mirrored[:, 1] += 2.0 * math.pi
    symmetry = float(np.max(np.abs(second - mirrored)))
    closed.metadata['reflection_residual'] = symmetry
    if symmetry > settings.CLOSURE_TOL:
        raise ClosureError(f"Second half is not the mirror of the first ({symmetry:.2e})", stage="close_up",
                           residual=symmetry)
    logger.info(f"Figure eight closed: length {2 * T_star:.10f}, residual {residual:.2e}")
    return closed


@dataclass
class ClosedCurve:
    """Closed curve in 3-space given by a periodic parametrization."""
    position: Callable[[np.ndarray], np.ndarray]
    velocity: Callable[[np.ndarray], np.ndarray]
    period: float

    @classmethod
    def from_trajectory(cls, metric: RandersMetric, traj: Trajectory) -> "ClosedCurve":
        surface = metric.surface

        def position(t):
            st = traj.at(np.mod(t, traj.duration))
            return surface.embedding(st[0], st[1])

        def velocity(t):
            st = traj.at(np.mod(t, traj.duration))
            s, th, sd, thd = st
            rho, drho, dz = surface.rho(s), surface.rhodot(s), np.sqrt(np.clip(1.0 - surface.rhodot(s) ** 2, 0.0, None))
            return np.stack([drho * sd * np.cos(th) - rho * thd * np.sin(th),
                             drho * sd * np.sin(th) + rho * thd * np.cos(th),
                             dz * sd], axis=-1)

        return cls(position, velocity, traj.duration)


def _cyclic_close(a: float, b: float, period: float, tol: float = 1e-6) -> bool:
    d = abs(a - b) % period
    return min(d, period - d) < tol


def _same_pair(p: Tuple[float, float], q: Tuple[float, float], period: float) -> bool:
    return ((_cyclic_close(p[0], q[0], period) and _cyclic_close(p[1], q[1], period))
            or (_cyclic_close(p[0], q[1], period) and _cyclic_close(p[1], q[0], period)))


def _classify(angle: float) -> str:
    if angle < settings.TANGENCY_ANGLE:
        return 'positive-tangency'
    if angle > math.pi - settings.TANGENCY_ANGLE:
        return 'negative-tangency'
    return 'transverse'


def count_self_intersections(curve: Union[ClosedCurve, Tuple[RandersMetric, Trajectory]], n_samples: int = 4000) -> List[SelfIntersection]:
    """Self-intersections of a closed curve, located by proximity search and refined by least squares."""
    if isinstance(curve, tuple):
        curve = ClosedCurve.from_trajectory(*curve)
    P = curve.period
    t = np.linspace(0.0, P, n_samples, endpoint=False)
    points = curve.position(t)
    step = float(np.max(np.linalg.norm(np.diff(np.vstack([points, points[:1]]), axis=0), axis=1)))
    window = 20

    pairs = sorted(cKDTree(points).query_pairs(r=3.0 * step))
    candidates: List[Tuple[int, int]] = []
    for i, j in pairs:
        sep = min(j - i, n_samples - (j - i))
        if sep <= window:
            continue
        if any(abs(i - a) + abs(j - b) < 2 * window for a, b in candidates):
            continue
        candidates.append((i, j))

    found: List[SelfIntersection] = []
    for i, j in candidates:
        fit = least_squares(lambda p: curve.position(np.array([p[0]]))[0] - curve.position(np.array([p[1]]))[0],
                            [t[i], t[j]], xtol=1e-15, ftol=1e-15, gtol=1e-15)
        a, b = sorted(np.mod(fit.x, P))
        if min(b - a, P - (b - a)) < window * P / n_samples:
            continue
        if any(_same_pair((a, b), (x.t_i, x.t_j), P) for x in found):
            continue
        dist = float(np.linalg.norm(fit.fun))
        u, w = curve.velocity(np.array([a]))[0], curve.velocity(np.array([b]))[0]
        angle = float(np.arccos(np.clip(u @ w / (np.linalg.norm(u) * np.linalg.norm(w)), -1.0, 1.0)))
        kind = _classify(angle)
        if dist < settings.INTERSECTION_DISTANCE:
            found.append(SelfIntersection(t_i=float(a), t_j=float(b), angle=angle, kind=kind, distance=dist))
        elif kind != 'transverse' and dist < 1e-3:
            logger.warning(f"Near-tangency at t=({a:.6f}, {b:.6f}) with separation {dist:.2e}")
            found.append(SelfIntersection(t_i=float(a), t_j=float(b), angle=angle, kind='ambiguous', distance=dist))
    for x in found:
        if x.kind == 'positive-tangency':
            logger.warning(f"Positive tangency at t=({x.t_i:.6f}, {x.t_j:.6f}): curve leaves the admissible class")
    return found


def verify_theorem_ii(r: float, delta: float) -> ShootingReport:
    """Build the counterexample metric for (r, delta) and check the figure eight end to end."""
    R, K_max = pinch_window(r, delta)
    logger.info(f"Pinch window for r={r}, delta={delta}: R={R:.10f}, K_max={K_max:.10f}")
    metric = make_randers(build_surface(R, K_max), r)

    table = sweep_returns(metric)
    phi_star = find_phi_star(metric, table)
    closed = close_up_figure_eight(metric, phi_star)
    crossings = count_self_intersections((metric, closed))
    transverse = [x for x in crossings if x.kind == 'transverse']
    if len(crossings) != 1 or len(transverse) != 1:
        raise ConsistencyError(f"Expected one transverse self-intersection, found {[x.kind for x in crossings]}",
                               stage="self_intersections", count=len(crossings))

    scale = normalized_descriptor(metric)
    K_trace = metric.surface.curvature(closed.s) / K_max
    K_grid = metric.surface.curvature(metric.surface.s[:-1]) / K_max
    K_min_scaled = float(min(K_trace.min(), K_grid.min()))
    K_max_scaled = float(max(K_trace.max(), K_grid.max()))
    if not delta < K_min_scaled <= K_max_scaled <= 1.0 + 1e-9:
        raise ConsistencyError("Normalized curvature leaves (delta, 1]", stage="normalization",
                               K_min_scaled=K_min_scaled, K_max_scaled=K_max_scaled)

    rev = reversibility(metric)
    if abs(rev - r) > 1e-6:
        raise ConsistencyError(f"Reversibility {rev} differs from {r}", stage="reversibility", reversibility=rev)

    T_star = closed.metadata['T_star']
    length = 2.0 * T_star
    lift_bound = contractible_lift_bound(r, K_max)
    if length < lift_bound:
        raise ConsistencyError(f"Length {length} below the contractible-lift bound {lift_bound}", stage="length")

    return ShootingReport(
        r=r, delta=delta, R=R, K_max=K_max, eta=metric.eta,
        table=table.to_dict(orient='records'),
        limits={**{f'extrapolated_{k}': v for k, v in extrapolated_limits(metric, table).items()},
                **{f'closed_form_{k}': v for k, v in return_map_limits(metric).items()}},
        phi_star=phi_star, T_star=T_star,
        closure_residual=closed.metadata['closure_residual'],
        self_intersections=crossings,
        K_min_scaled=K_min_scaled, K_max_scaled=K_max_scaled,
        reversibility=rev,
        length=length, length_normalized=length * scale['length_scale'],
        rademacher_bound=rademacher_bound(r, K_max),
        contractible_lift_bound=lift_bound,
        closed_geodesic=closed,
    )
