"""Randers metrics from Zermelo navigation on a pinched sphere.

The navigation data is the profile metric h = ds^2 + rho(s)^2 dtheta^2 and
the rotational wind X = eta d/dtheta.  With eps = 1 - |X|_h^2 the metric is
F = sqrt(a(v, v)) + b(v) where

    a_ij = h_ij / eps + X_i X_j / eps^2,     b_i = -X_i / eps.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .config import settings
from .errors import ConfigurationError, ContractViolation, ConvexityViolation, DomainRangeError
from .profile import ProfileSurface

logger = logging.getLogger(__name__)

COMPLEX_STEP = 1e-30


@dataclass(frozen=True)
class TangentVector:
    """Vector v_s d/ds + v_theta d/dtheta based at (s, theta)."""

    s: float
    theta: float
    vs: float
    vtheta: float

    @property
    def components(self) -> np.ndarray:
        return np.array([self.vs, self.vtheta])

    def scaled(self, t: float) -> "TangentVector":
        return TangentVector(self.s, self.theta, t * self.vs, t * self.vtheta)


class RandersMetric:
    def __init__(self, surface: ProfileSurface, eta: float):
        if eta < 0.0:
            raise ConfigurationError("Wind strength must be non-negative", stage="randers", eta=eta)
        if eta * surface.R >= 1.0:
            raise ConfigurationError(
                f"Navigation condition |X|_h < 1 fails: eta*R = {eta * surface.R}", stage="randers", eta=eta
            )
        self.surface = surface
        self.eta = float(eta)

    @property
    def R(self) -> float:
        return self.surface.R

    @property
    def wind_at_equator(self) -> float:
        return self.eta * self.R

    @property
    def analytic_reversibility(self) -> float:
        a = self.wind_at_equator
        return (1.0 + a) / (1.0 - a)

    def epsilon(self, s):
        return 1.0 - (self.eta * self.surface.rho(s)) ** 2

    def coefficients(self, s) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(a_ss, a_thth, b_th); a_sth and b_s vanish for a rotational wind."""
        rho = self.surface.rho(s)
        eps = 1.0 - (self.eta * rho) ** 2
        a_ss = 1.0 / eps
        a_thth = rho ** 2 / eps + (rho ** 4) * self.eta ** 2 / eps ** 2
        b_th = -(rho ** 2) * self.eta / eps
        return a_ss, a_thth, b_th

    def riemannian_part(self, s) -> np.ndarray:
        a_ss, a_thth, _ = self.coefficients(s)
        return np.array([[a_ss, 0.0], [0.0, a_thth]])

    def one_form(self, s) -> np.ndarray:
        _, _, b_th = self.coefficients(s)
        return np.array([0.0, b_th])

    def norm(self, s, ys, yth):
        """F at (s, y); broadcasts and accepts complex fiber components."""
        a_ss, a_thth, b_th = self.coefficients(s)
        return np.sqrt(a_ss * ys ** 2 + a_thth * yth ** 2) + b_th * yth

    def norm_squared(self, s, ys, yth):
        return self.norm(s, ys, yth) ** 2

    def h_norm(self, s, ys, yth):
        return np.sqrt(ys ** 2 + (self.surface.rho(s) * yth) ** 2)

    def fiber_gradient(self, s: float, y: np.ndarray) -> np.ndarray:
        """d(F^2)/dy by complex-step differentiation."""
        ys, yth = y
        h = COMPLEX_STEP * max(1.0, float(np.abs(y).max()))
        return np.array([
            self.norm_squared(s, ys + 1j * h, yth).imag / h,
            self.norm_squared(s, ys, yth + 1j * h).imag / h,
        ])

    def fiber_steps(self, s: float, y: np.ndarray) -> np.ndarray:
        scale = float(self.h_norm(s, y[0], y[1]))
        rho = float(self.surface.rho(s))
        return settings.FIBER_FD_STEP * scale * np.array([1.0, 1.0 / rho])

    def tensor_at(self, s: float, y: np.ndarray) -> np.ndarray:
        """Half fiber Hessian of F^2 (central differences of the exact gradient)."""
        y = np.asarray(y, dtype=float)
        steps = self.fiber_steps(s, y)
        g = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = steps[j]
            g[:, j] = (self.fiber_gradient(s, y + e) - self.fiber_gradient(s, y - e)) / (4.0 * steps[j])
        return 0.5 * (g + g.T)

    def describe(self) -> dict:
        return {
            **self.surface.describe(),
            'eta': self.eta,
            'r': self.analytic_reversibility,
        }


def make_randers(surface: ProfileSurface, r_target: float) -> RandersMetric:
    """Metric with reversibility r_target: eta*R = (r - 1) / (r + 1)."""
    if r_target < 1.0:
        raise ConfigurationError(f"Reversibility must be >= 1, got {r_target}", stage="randers", r=r_target)
    eta = (r_target - 1.0) / ((r_target + 1.0) * surface.R)
    metric = RandersMetric(surface, eta)
    logger.info(f"Randers metric with r={r_target}: eta={eta:.10f}, eta*R={metric.wind_at_equator:.10f}")
    return metric


def finsler_norm(metric: RandersMetric, v: TangentVector) -> float:
    return float(metric.norm(v.s, v.vs, v.vtheta))


def navigation_norm(metric: RandersMetric, v: TangentVector) -> float:
    """Positive root of eps F^2 + 2 h(v, X) F - |v|_h^2 = 0."""
    rho = float(metric.surface.rho(v.s))
    eps = 1.0 - (metric.eta * rho) ** 2
    hvx = rho ** 2 * metric.eta * v.vtheta
    hvv = v.vs ** 2 + (rho * v.vtheta) ** 2
    return float((-hvx + np.sqrt(hvx ** 2 + eps * hvv)) / eps)


def fundamental_tensor(metric: RandersMetric, v: TangentVector) -> np.ndarray:
    y = v.components
    if not np.any(y):
        raise ContractViolation("Fundamental tensor is undefined at the zero vector", stage="fundamental_tensor")
    g = metric.tensor_at(v.s, y)
    eigenvalues = np.linalg.eigvalsh(g)
    if eigenvalues.min() <= 0.0:
        raise ConvexityViolation(
            "Fundamental tensor is not positive definite", stage="fundamental_tensor", eigenvalues=eigenvalues.tolist()
        )
    return g


def reversibility(metric: RandersMetric, grid: int = 256) -> float:
    """max F(-v) over F(v) = 1, by grid search refined with bounded 1-D searches."""
    if metric.eta == 0.0:
        return 1.0
    s_max = metric.surface.L - settings.POLE_MARGIN
    s_grid = np.linspace(0.0, s_max, grid)
    psi_grid = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)

    def ratio(s, psi):
        rho = metric.surface.rho(s)
        us, uth = np.sin(psi), np.cos(psi) / rho
        return metric.norm(s, -us, -uth) / metric.norm(s, us, uth)

    values = ratio(s_grid[:, None], psi_grid[None, :])
    i, j = np.unravel_index(np.argmax(values), values.shape)
    s_best, psi_best = s_grid[i], psi_grid[j]
    dpsi = psi_grid[1] - psi_grid[0]
    psi_fit = minimize_scalar(lambda p: -ratio(s_best, p), bounds=(psi_best - dpsi, psi_best + dpsi), method='bounded',
                              options={'xatol': 1e-12})
    ds = s_grid[1] - s_grid[0]
    s_fit = minimize_scalar(lambda q: -ratio(q, psi_fit.x), bounds=(max(0.0, s_best - ds), min(s_max, s_best + ds)),
                            method='bounded', options={'xatol': 1e-12})
    best = max(float(values[i, j]), -float(psi_fit.fun), -float(s_fit.fun))
    logger.debug(f"Reversibility argmax near s={s_best:.4f}, psi={psi_best:.4f}: {best:.12f}")
    return best


def reversibility_argmax(metric: RandersMetric, grid: int = 256) -> Tuple[float, float]:
    """Grid location (s, psi) of the reversibility sup; psi is the h-angle to X."""
    s_grid = np.linspace(0.0, metric.surface.L - settings.POLE_MARGIN, grid)
    psi_grid = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
    rho = metric.surface.rho(s_grid)[:, None]
    us, uth = np.sin(psi_grid)[None, :], np.cos(psi_grid)[None, :] / rho
    values = metric.norm(s_grid[:, None], -us, -uth) / metric.norm(s_grid[:, None], us, uth)
    i, j = np.unravel_index(np.argmax(values), values.shape)
    return float(s_grid[i]), float(psi_grid[j])


def critical_angle(metric: RandersMetric, s: float = 0.0) -> float:
    """phi_0: h-angle to X of the unit vector with h(v - X, X) = 0."""
    a = metric.eta * float(metric.surface.rho(s))
    return float(np.arctan2(1.0, a))


def unit_vector_at_angle(metric: RandersMetric, point: Tuple[float, float], phi: float) -> TangentVector:
    """F-unit vector at h-angle phi from X, not pointing south."""
    s, theta = point
    phi0 = critical_angle(metric, s)
    if not 0.0 <= phi <= phi0 + 1e-12:
        raise DomainRangeError(f"Angle {phi} outside [0, {phi0}]", stage="unit_vector", phi=phi, phi0=phi0)
    rho = float(metric.surface.rho(s))
    a = metric.eta * rho
    lam = a * np.cos(phi) + np.sqrt((a * np.cos(phi)) ** 2 + 1.0 - a ** 2)
    return TangentVector(s, theta, lam * np.sin(phi), lam * np.cos(phi) / rho)


def normalized_descriptor(metric: RandersMetric) -> dict:
    """Dilation by sqrt(K_max): curvatures / K_max, lengths * sqrt(K_max)."""
    K_max = metric.surface.K_max
    return {
        'length_scale': float(np.sqrt(K_max)),
        'K_min_scaled': 1.0 / K_max,
        'K_max_scaled': 1.0,
        'eta_scaled': metric.eta / np.sqrt(K_max),
        'r': metric.analytic_reversibility,
    }
