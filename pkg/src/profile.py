"""Pinched spheres of revolution.

A surface is described by its meridian profile s -> rho(s) with rho(0) = R on
the equator.  The profile solves rho' = -sqrt(g(rho^2)) for a convex function
g on [0, R^2] built from the piecewise-linear comparison function

    h(x) = 1 - K_max x   on [0, x*],      h(x) = R^2 - x   on [x*, R^2],

with x* = (1 - R^2) / (K_max - 1), and the corner at x* replaced by a C^2
convex blend.  Differentiating the profile ODE gives K = -g'(rho^2), so the
curvature is K_max near the poles and 1 near the equator.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .config import settings
from .errors import (
    ConfigurationError,
    ConsistencyError,
    DomainRangeError,
    InfeasiblePinchError,
    IntegrationError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PinchFunction:
    """Convex g on [0, R^2] with g(0) = 1, g(R^2) = 0 and g' in [-K_max, -1]."""

    R: float
    K_max: float
    smoothing: float  # full width of the corner blend
    x_star: float
    degenerate: bool = False

    @property
    def half_width(self) -> float:
        return 0.5 * self.smoothing

    def _blend_coordinate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        w = self.half_width
        if w <= 0.0:
            return np.zeros_like(x), np.zeros_like(x, dtype=bool)
        u = (x - (self.x_star - w)) / (2.0 * w)
        inside = (u > 0.0) & (u < 1.0)
        return np.clip(u, 0.0, 1.0), inside

    def value(self, x):
        x = np.asarray(x, dtype=float)
        K, w = self.K_max, self.half_width
        left = 1.0 - K * x
        out = np.where(x <= self.x_star, left, self.R ** 2 - x)
        u, inside = self._blend_coordinate(x)
        if w > 0.0:
            blended = left + (K - 1.0) * 2.0 * w * (u ** 3 - 0.5 * u ** 4)
            out = np.where(inside, blended, out)
        return out

    def slope(self, x):
        """g'(x)."""
        x = np.asarray(x, dtype=float)
        K = self.K_max
        out = np.where(x <= self.x_star, -K, -1.0)
        u, inside = self._blend_coordinate(x)
        if self.half_width > 0.0:
            out = np.where(inside, -K + (K - 1.0) * (3.0 * u ** 2 - 2.0 * u ** 3), out)
        return out

    def convexity(self, x):
        """g''(x), zero outside the blend."""
        x = np.asarray(x, dtype=float)
        u, inside = self._blend_coordinate(x)
        if self.half_width <= 0.0:
            return np.zeros_like(x)
        return np.where(inside, 3.0 * (self.K_max - 1.0) * u * (1.0 - u) / self.half_width, 0.0)


def build_pinch_function(R: float, K_max: float, smoothing: Optional[float] = None) -> PinchFunction:
    """Build g for an equator of radius R and curvature cap K_max.

    ``smoothing`` is the full width of the corner blend; ``None`` picks half
    of the room left by the two linear pieces.
    """
    if not 0.0 < R <= 1.0:
        raise ConfigurationError(f"Equator radius must lie in (0, 1], got {R}", stage="pinch", R=R)

    if np.isclose(R, 1.0):
        if np.isclose(K_max, 1.0):
            logger.info("Round sphere requested, using g(x) = 1 - x")
            return PinchFunction(R=1.0, K_max=1.0, smoothing=0.0, x_star=0.0, degenerate=True)
        raise ConfigurationError("R = 1 is only accepted for the round sphere (K_max = 1)", stage="pinch", R=R, K_max=K_max)

    if K_max <= 1.0 / R ** 2:
        raise InfeasiblePinchError(
            f"K_max = {K_max} must exceed 1/R^2 = {1.0 / R ** 2:.6f}", stage="pinch", R=R, K_max=K_max
        )

    x_star = (1.0 - R ** 2) / (K_max - 1.0)
    room = min(x_star, R ** 2 - x_star)
    if smoothing is None:
        smoothing = 0.5 * room
    if smoothing < 0.0:
        raise ConfigurationError("Smoothing width must be non-negative", stage="pinch", smoothing=smoothing)
    if 0.5 * smoothing >= room:
        raise ConfigurationError(
            f"Smoothing {smoothing} leaves no linear piece (room {room:.3e})",
            stage="pinch",
            smoothing=smoothing,
            room=room,
        )
    return PinchFunction(R=float(R), K_max=float(K_max), smoothing=float(smoothing), x_star=float(x_star))


class ProfileSurface:
    """Meridian profile sampled on [0, L] with Hermite interpolation.

    The surface is symmetric under s -> -s, so rho is evaluated on (-L, L).
    Arrays are read-only once built.
    """

    def __init__(self, pinch: PinchFunction, s: np.ndarray, rho: np.ndarray, rhodot: np.ndarray, L: float, residual: float):
        self.pinch = pinch
        self.L = float(L)
        self.residual = float(residual)
        self.s = s
        self.rho_samples = rho
        self.rhodot_samples = rhodot
        rhoddot = pinch.slope(rho ** 2) * rho
        self._rho = CubicHermiteSpline(s, rho, rhodot)
        self._rhodot = CubicHermiteSpline(s, rhodot, rhoddot)

        dz = np.sqrt(np.clip(1.0 - rhodot ** 2, 0.0, None))
        z = cumulative_trapezoid(dz, s, initial=0.0)
        self._z = CubicHermiteSpline(s, z, dz)
        for arr in (self.s, self.rho_samples, self.rhodot_samples):
            arr.setflags(write=False)

    @property
    def R(self) -> float:
        return self.pinch.R

    @property
    def K_max(self) -> float:
        return self.pinch.K_max

    def rho(self, s):
        return self._rho(np.abs(s))

    def rhodot(self, s):
        return np.sign(s) * self._rhodot(np.abs(s))

    def height(self, s):
        return np.sign(s) * self._z(np.abs(s))

    def curvature(self, s):
        return -self.pinch.slope(self.rho(s) ** 2)

    def embedding(self, s, theta):
        """Ambient (x, y, z) of the point (s, theta)."""
        r = self.rho(s)
        return np.stack([r * np.cos(theta), r * np.sin(theta), self.height(s)], axis=-1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            's': self.s,
            'rho': self.rho_samples,
            'rhodot': self.rhodot_samples,
            'K': self.curvature(self.s),
        })

    def describe(self) -> dict:
        return {
            'R': self.R,
            'Kmax': self.K_max,
            'smoothing': self.pinch.smoothing,
            'L': self.L,
            'residual': self.residual,
        }


def solve_profile(g: PinchFunction, tol: Optional[float] = None) -> ProfileSurface:
    """Integrate the meridian from the equator to the pole."""
    tol = tol or settings.INTEGRATOR_RTOL
    R = g.R
    s0 = settings.PROFILE_SEED_S
    floor = settings.PROFILE_RHO_FLOOR

    def rhs(s, y):
        return [y[1], g.slope(y[0] ** 2) * y[0]]

    def reached_floor(s, y):
        return y[0] - floor
    reached_floor.terminal = True
    reached_floor.direction = -1

    def turned_back(s, y):
        return y[1]
    turned_back.terminal = True
    turned_back.direction = 1

    sol = solve_ivp(
        rhs,
        (s0, np.pi),
        [R * np.cos(s0), -R * np.sin(s0)],
        method=settings.INTEGRATOR_METHOD,
        rtol=tol,
        atol=tol,
        dense_output=True,
        events=[reached_floor, turned_back],
    )
    if not sol.success:
        raise IntegrationError(f"Profile integration failed: {sol.message}", stage="profile")
    if len(sol.t_events[1]):
        raise ConsistencyError("Profile started increasing before reaching the pole", stage="profile", s=float(sol.t_events[1][0]))
    if not len(sol.t_events[0]):
        raise ConsistencyError("Profile never reached the pole", stage="profile")

    s_end = float(sol.t_events[0][0])
    rho_end, rhodot_end = sol.y_events[0][0]
    L = s_end + rho_end / (-rhodot_end)

    head = np.linspace(0.0, s0, 11)[:-1]
    body = np.linspace(s0, s_end, settings.PROFILE_GRID_POINTS)
    values = sol.sol(body)
    s = np.concatenate([head, body, [L]])
    rho = np.concatenate([R * np.cos(head), values[0], [0.0]])
    rhodot = np.concatenate([-R * np.sin(head), values[1], [rhodot_end]])

    residual = float(np.max(np.abs(rhodot + np.sqrt(np.clip(g.value(rho ** 2), 0.0, None)))))
    if residual > 1e-6:
        raise ConsistencyError(f"Profile violates rho' = -sqrt(g(rho^2)) by {residual:.2e}", stage="profile", residual=residual)

    logger.info(f"Profile solved for R={R}, K_max={g.K_max}: L={L:.10f}, residual={residual:.2e}")
    return ProfileSurface(g, s, rho, rhodot, L, residual)


def build_surface(R: float, K_max: float, smoothing: Optional[float] = None, tol: Optional[float] = None) -> ProfileSurface:
    return solve_profile(build_pinch_function(R, K_max, smoothing), tol)


def round_sphere() -> ProfileSurface:
    return build_surface(1.0, 1.0, 0.0)


def gaussian_curvature(surface: ProfileSurface, s):
    """K(s) = -g'(rho(s)^2) for |s| < L."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(np.abs(s_arr) >= surface.L):
        raise DomainRangeError(f"Arc length outside (-L, L) with L={surface.L}", stage="curvature")
    K = surface.curvature(s_arr)
    return float(K) if np.ndim(K) == 0 else K


def meridian_return_bound(R: float, K_max: float, b: float) -> bool:
    """True iff the built meridian satisfies 2L < b*pi*R."""
    surface = build_surface(R, K_max)
    holds = 2.0 * surface.L < b * np.pi * R
    logger.debug(f"Return bound R={R}, K_max={K_max}, b={b}: 2L={2 * surface.L:.8f}, holds={holds}")
    return bool(holds)


def comparison_return_time(R: float, K_max: float) -> float:
    """Time for the comparison profile driven by h to reach the pole."""
    x_star = (1.0 - R ** 2) / (K_max - 1.0)
    s1 = np.arccos(min(1.0, np.sqrt(x_star) / R))
    s2 = np.arcsin(min(1.0, np.sqrt(K_max * x_star))) / np.sqrt(K_max)
    return float(s1 + s2)


def shrink_to_return_bound(R: float, b: float, start_ratio: float = 1.01, max_halvings: int = 16) -> Tuple[float, ProfileSurface]:
    """Shrink K_max toward 1/R^2 until 2L < b*pi*R; returns (K_max * R^2, surface)."""
    excess = start_ratio - 1.0
    for _ in range(max_halvings):
        surface = build_surface(R, (1.0 + excess) / R ** 2)
        if 2.0 * surface.L < b * np.pi * R:
            logger.info(f"Return bound met at K_max*R^2 = {1.0 + excess}")
            return 1.0 + excess, surface
        excess *= 0.5
    raise ConfigurationError(f"Could not meet 2L < {b}*pi*R for R={R}", stage="return_bound", R=R, b=b)


def curvature_integral_identity(surface: ProfileSurface) -> Tuple[float, float]:
    """(1 - R^2, integral of (K - 1)(-2 rho rho') over [0, L])."""
    s = surface.s
    integrand = (surface.curvature(s) - 1.0) * (-2.0 * surface.rho_samples * surface.rhodot_samples)
    return 1.0 - surface.R ** 2, float(simpson(integrand, x=s))


def sweep_surfaces(params: Iterable[Tuple[float, float]], tol: Optional[float] = None) -> List[ProfileSurface]:
    """Build surfaces for (R, K_max) pairs, in input order."""
    with ThreadPoolExecutor(max_workers=settings.N_WORKERS) as pool:
        return list(pool.map(lambda p: build_surface(p[0], p[1], tol=tol), params))
