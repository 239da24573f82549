"""Reeb flows of f * lambda_0 on the 3-sphere near the Hopf flow.

For f = 1 the Reeb field is R_0 = 2 i (z, w): every orbit is a Hopf circle
of period pi.  The chart Psi(z, w) = (arg z / 2, w / sqrt(1 - |w|^2)) turns
that flow into (tau, zeta) -> (tau + t, e^{2it} zeta), so linking with the
binding L_0 = {w = 0} is the winding of zeta around 0.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .config import settings
from .errors import ChartError, ConfigurationError, DegeneracyError, IntegrationError, ProximityError, QuadratureError
from .knots import PolylineKnot, contact_frame, gauss_link, hopf_fiber

logger = logging.getLogger(__name__)

_CHART_FLOOR = 1e-6
_FIXED_POINT_TOL = 1e-8


def times_i(v: np.ndarray) -> np.ndarray:
    """Complex multiplication by i on (Re z, Im z, Re w, Im w)."""
    v = np.asarray(v)
    return np.stack([-v[..., 1], v[..., 0], -v[..., 3], v[..., 2]], axis=-1)


def omega(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d lambda_0 = dq0 ^ dp0 + dq1 ^ dp1."""
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0] + u[..., 2] * v[..., 3] - u[..., 3] * v[..., 2]


def lambda0(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return 0.5 * omega(x, v)


def _sphere_grid(n: int = 512) -> np.ndarray:
    pts = np.random.default_rng(settings.DEFAULT_SEED).normal(size=(n, 4))
    return pts / np.linalg.norm(pts, axis=1)[:, None]


@dataclass
class PerturbedContactForm:
    """The contact form f * lambda_0; ``f`` and ``grad`` act on (N, 4) arrays."""

    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    label: str = 'f'
    samples: np.ndarray = field(default_factory=_sphere_grid, repr=False)

    def __post_init__(self):
        values = self.f(self.samples)
        if np.min(values) <= 0.0:
            raise ConfigurationError(f"Form {self.label} has f <= 0", stage="hopf", min_f=float(np.min(values)))

    def value(self, x: np.ndarray) -> float:
        return float(self.f(np.atleast_2d(x))[0])

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.grad(np.atleast_2d(x))[0]

    @property
    def deviation(self) -> float:
        """max |f - 1| on the sample grid."""
        return float(np.max(np.abs(self.f(self.samples) - 1.0)))

    def perturbation_size(self, h: float = 1e-3) -> float:
        """C^2 surrogate of |f - 1|: values, first and second differences along great circles."""
        x = self.samples
        u = np.random.default_rng(settings.DEFAULT_SEED + 1).normal(size=x.shape)
        u -= np.sum(u * x, axis=1)[:, None] * x
        u /= np.linalg.norm(u, axis=1)[:, None]
        f0 = self.f(x)
        fp = self.f(np.cos(h) * x + np.sin(h) * u)
        fm = self.f(np.cos(h) * x - np.sin(h) * u)
        first = np.abs(fp - fm) / (2.0 * h)
        second = np.abs(fp - 2.0 * f0 + fm) / h ** 2
        return float(max(np.max(np.abs(f0 - 1.0)), first.max(), second.max()))


def constant_form(c: float = 1.0) -> PerturbedContactForm:
    return PerturbedContactForm(
        f=lambda x: np.full(len(x), float(c)),
        grad=lambda x: np.zeros_like(x),
        label=f'const({c})',
    )


def harmonic_perturbation(eps: float, degree: int = 2) -> PerturbedContactForm:
    """f = 1 + eps * Y with Y = |z|^2 - |w|^2 (degree 2) or Y = Re z (degree 1).

    A degree-1 perturbation is a translated sphere to first order, so its
    return map is the identity up to O(eps^2).
    """
    if degree == 1:
        return PerturbedContactForm(
            f=lambda x: 1.0 + eps * x[:, 0],
            grad=lambda x: np.tile([eps, 0.0, 0.0, 0.0], (len(x), 1)),
            label=f'1+{eps}*x1',
        )
    if degree == 2:
        sign = np.array([1.0, 1.0, -1.0, -1.0])
        return PerturbedContactForm(
            f=lambda x: 1.0 + eps * (x ** 2 @ sign),
            grad=lambda x: 2.0 * eps * x * sign,
            label=f'1+{eps}*(|z|^2-|w|^2)',
        )
    raise ConfigurationError(f"Unsupported harmonic degree {degree}", stage="hopf")


@dataclass(frozen=True)
class ChartPoint:
    tau: float
    zeta: complex


def _chart(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(points)
    z = x[:, 0] + 1j * x[:, 1]
    w = x[:, 2] + 1j * x[:, 3]
    if np.min(np.abs(z)) <= _CHART_FLOOR:
        raise ChartError("Point lies on the fiber z = 0 outside the chart", stage="psi", min_abs_z=float(np.min(np.abs(z))))
    tau = np.mod(np.angle(z) / 2.0, np.pi)
    # |z| = sqrt(1 - |w|^2) on the sphere
    return tau, w / np.abs(z)


def psi(point: np.ndarray) -> ChartPoint:
    tau, zeta = _chart(point)
    return ChartPoint(float(tau[0]), complex(zeta[0]))


def psi_inverse(chart_point: ChartPoint) -> np.ndarray:
    modulus = 1.0 / np.sqrt(1.0 + abs(chart_point.zeta) ** 2)
    z = modulus * np.exp(2j * chart_point.tau)
    w = modulus * chart_point.zeta
    return np.array([z.real, z.imag, w.real, w.imag])


def reeb_field(form: PerturbedContactForm, point: np.ndarray) -> np.ndarray:
    """Reeb vector of f * lambda_0 at ``point`` from a 3x3 solve on T_x S^3.

    Basis of the tangent space: i x and the contact frame e, i e.  The kernel
    conditions are taken against e and i e, which span ker(f lambda_0).
    """
    x = np.asarray(point, dtype=float)
    x = x / np.linalg.norm(x)
    e = contact_frame(x)[0]
    basis = np.stack([times_i(x), e, times_i(e)])
    f = form.value(x)
    df = basis @ form.gradient(x)
    lam = lambda0(x, basis)

    M = np.empty((3, 3))
    M[0] = f * lam
    for row, j in enumerate((1, 2), start=1):
        # d(f lambda_0)(v_k, v_j)
        M[row] = df * lam[j] - df[j] * lam + f * omega(basis, basis[j])
    if abs(np.linalg.det(M)) < 1e-12:
        raise DegeneracyError("Reeb system is singular", stage="reeb_field", point=x.tolist())
    coefficients = np.linalg.solve(M, np.array([1.0, 0.0, 0.0]))
    return coefficients @ basis


def _reeb_rhs(form: PerturbedContactForm):
    def rhs(t, y):
        x = y / np.linalg.norm(y)
        R = reeb_field(form, x)
        return R - (R @ x) * x
    return rhs


@dataclass
class ReebOrbit:
    """Uniform samples over one period; ``x`` excludes the closing endpoint."""

    t: np.ndarray
    x: np.ndarray
    period: float
    zeta: complex = 0j
    action: float = float('nan')

    def closed_points(self) -> np.ndarray:
        return np.vstack([self.x, self.x[:1]])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'t': self.t, 'x1': self.x[:, 0], 'x2': self.x[:, 1], 'x3': self.x[:, 2], 'x4': self.x[:, 3]})


def reeb_flow(form: PerturbedContactForm, x0: np.ndarray, T: float, n_samples: int = 2000,
              endpoint: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Integrate the Reeb field with tangency projection; samples are renormalized."""
    t = np.linspace(0.0, T, n_samples, endpoint=endpoint)
    sol = solve_ivp(_reeb_rhs(form), (0.0, T), np.asarray(x0, dtype=float), t_eval=t, **settings.ivp_options)
    if not sol.success:
        raise IntegrationError(f"Reeb flow failed: {sol.message}", stage="reeb_flow")
    x = sol.y.T
    drift = float(np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0)))
    logger.debug(f"Reeb flow over T={T:.3f}: sphere drift {drift:.2e}")
    return sol.t, x / np.linalg.norm(x, axis=1)[:, None]


def action(form: PerturbedContactForm, t: np.ndarray, x: np.ndarray) -> float:
    """Integral of f lambda_0(x') over a closed loop sampled uniformly in t (endpoint excluded).

    Velocities come from spectral differentiation of the samples.
    """
    N = len(t)
    T = (t[1] - t[0]) * N
    freq = 2.0 * np.pi * np.fft.fftfreq(N, d=T / N)
    xdot = np.fft.ifft(1j * freq[:, None] * np.fft.fft(x, axis=0), axis=0).real
    return float(T * np.mean(form.f(x) * lambda0(x, xdot)))


def return_map(form: PerturbedContactForm, zeta: complex) -> Tuple[complex, float]:
    """First return to the section {tau = 0}: (zeta', return time)."""
    x0 = psi_inverse(ChartPoint(0.0, zeta))
    rhs = _reeb_rhs(form)
    t_min = settings.RETURN_T_MIN
    head = solve_ivp(rhs, (0.0, t_min), x0, **settings.ivp_options)

    def crosses_section(t, y):
        return y[1]
    crosses_section.terminal = True
    crosses_section.direction = 1

    horizon = 4.0 * np.pi * max(1.0, float(np.max(form.f(form.samples))))
    tail = solve_ivp(rhs, (t_min, horizon), head.y[:, -1], events=[crosses_section], **settings.ivp_options)
    if not (head.success and tail.success) or len(tail.t_events[0]) == 0:
        raise IntegrationError("No return to the section", stage="return_map", zeta=str(zeta))
    x1 = tail.y_events[0][0]
    _, zeta1 = _chart(x1 / np.linalg.norm(x1))
    return complex(zeta1[0]), float(tail.t_events[0][0])


def _return_jacobian(form: PerturbedContactForm, zeta: complex, h: float = 1e-6) -> np.ndarray:
    J = np.empty((2, 2))
    for k, d in enumerate((h, 1j * h)):
        plus, _ = return_map(form, zeta + d)
        minus, _ = return_map(form, zeta - d)
        diff = (plus - minus) / (2.0 * h)
        J[:, k] = [diff.real, diff.imag]
    return J


def newton_fixed_point(form: PerturbedContactForm, seed: complex) -> Optional[Tuple[complex, float]]:
    """Damped Newton for P(zeta) = zeta; None when it fails."""
    zeta = complex(seed)
    image, T = return_map(form, zeta)
    residual = abs(image - zeta)
    for iteration in range(settings.NEWTON_MAX_ITER):
        if residual < _FIXED_POINT_TOL:
            return zeta, T
        J = _return_jacobian(form, zeta) - np.eye(2)
        if abs(np.linalg.det(J)) < 1e-14:
            logger.warning(f"Seed {seed}: singular Newton system at iteration {iteration}")
            return None
        G = image - zeta
        step = np.linalg.solve(J, -np.array([G.real, G.imag]))
        step = complex(step[0], step[1])
        damping = 1.0
        while damping > 1.0 / 64:
            trial = zeta + damping * step
            trial_image, trial_T = return_map(form, trial)
            if abs(trial_image - trial) < residual:
                break
            damping /= 2.0
        else:
            logger.warning(f"Seed {seed}: Newton line search failed at iteration {iteration}")
            return None
        zeta, image, T = trial, trial_image, trial_T
        residual = abs(image - zeta)
        if abs(zeta) > 10.0:
            logger.warning(f"Seed {seed}: Newton left the chart region")
            return None
    if residual < _FIXED_POINT_TOL:
        return zeta, T
    logger.warning(f"Seed {seed}: Newton did not converge (residual {residual:.2e})")
    return None


def fiber_seeds(radii: Sequence[float] = (0.0, 0.3, 0.8), angles: int = 4) -> List[complex]:
    """Section points, one per Hopf fiber of a small grid."""
    seeds = []
    for r in radii:
        if r == 0.0:
            seeds.append(0j)
            continue
        seeds.extend(r * np.exp(2j * np.pi * np.arange(angles) / angles))
    return [complex(s) for s in seeds]


def orbit_from_section(form: PerturbedContactForm, zeta: complex, period: float, n_samples: int = 2000) -> ReebOrbit:
    t, x = reeb_flow(form, psi_inverse(ChartPoint(0.0, zeta)), period, n_samples)
    orbit = ReebOrbit(t, x, period, zeta)
    orbit.action = action(form, t, x)
    return orbit


class ShortOrbitReport(BaseModel):
    form: str
    actions: List[float]
    eps_tilde: float
    discarded: int


def short_window(form: PerturbedContactForm) -> float:
    """Half width of the short-action window around pi."""
    return 1.5 * np.pi * form.deviation + 1e-8


def find_short_orbits(form: PerturbedContactForm, seeds: Optional[Sequence[complex]] = None) -> Tuple[List[ReebOrbit], ShortOrbitReport]:
    size = form.perturbation_size()
    if size > settings.HOPF_PERTURBATION_MAX:
        raise ConfigurationError(f"Perturbation size {size:.3f} exceeds {settings.HOPF_PERTURBATION_MAX}",
                                 stage="find_short_orbits", size=size)
    seeds = list(seeds) if seeds is not None else fiber_seeds()
    with ThreadPoolExecutor(max_workers=settings.N_WORKERS) as pool:
        results = list(pool.map(lambda s: newton_fixed_point(form, s), seeds))

    orbits: List[ReebOrbit] = []
    discarded = 0
    for result in results:
        if result is None:
            discarded += 1
            continue
        zeta, T = result
        if any(abs(o.zeta - zeta) < 1e-6 for o in orbits):
            continue
        orbits.append(orbit_from_section(form, zeta, T))

    eps_tilde = max([abs(o.action - np.pi) for o in orbits], default=0.0)
    report = ShortOrbitReport(form=form.label, actions=[o.action for o in orbits], eps_tilde=eps_tilde, discarded=discarded)
    logger.info(f"{form.label}: {len(orbits)} short orbits, eps_tilde={eps_tilde:.3e}, {discarded} seeds discarded")
    return orbits, report


def return_map_eigenvalues(form: PerturbedContactForm, orbit: ReebOrbit) -> np.ndarray:
    return np.linalg.eigvals(_return_jacobian(form, orbit.zeta))


def _reference_trace(orbit: Optional[ReebOrbit]) -> Callable[[np.ndarray], np.ndarray]:
    """zeta of the reference orbit as a function of tau; zero for the binding."""
    if orbit is None or np.allclose(orbit.x[:, 2:], 0.0):
        return lambda tau: np.zeros_like(tau, dtype=complex)
    tau, zeta = _chart(orbit.x)
    order = np.argsort(np.mod(tau, np.pi))
    knots_tau = np.mod(tau, np.pi)[order]
    values = zeta[order]
    knots_tau = np.append(knots_tau, knots_tau[0] + np.pi)
    values = np.append(values, values[0])
    spline = CubicSpline(knots_tau, values, bc_type='periodic')
    return lambda t: spline(knots_tau[0] + np.mod(t - knots_tau[0], np.pi))


def _winding(zeta: np.ndarray) -> float:
    if np.min(np.abs(zeta)) < settings.LINK_MIN_DISTANCE:
        raise ProximityError("Loop passes too close to the reference orbit", stage="winding_link",
                             distance=float(np.min(np.abs(zeta))))
    angles = np.unwrap(np.angle(zeta))
    return float(angles[-1] - angles[0]) / (2.0 * np.pi)


def winding_link(points: np.ndarray, reference: Optional[ReebOrbit] = None) -> int:
    """Linking number of a closed loop with the reference orbit (default the binding L_0)."""
    loop = np.vstack([points, points[:1]])
    tau, zeta = _chart(loop)
    relative = zeta - _reference_trace(reference)(tau)
    raw = _winding(relative)
    value = int(round(raw))
    if abs(raw - value) >= settings.LINK_RESIDUAL_MAX:
        raise QuadratureError(f"Winding {raw:.4f} is not near an integer", stage="winding_link", raw=raw)
    return value


class GrowthReport(BaseModel):
    min_rate: float
    mean_rate: float
    revolutions: float
    periods: float
    complete: bool


def linking_growth_check(form: PerturbedContactForm, short_orbit: Optional[ReebOrbit], start: complex,
                         n_periods: float = 50.0, samples_per_unit: int = 200) -> GrowthReport:
    """Angular speed of zeta relative to the short orbit along a long segment in the tube."""
    T = n_periods * np.pi
    t, x = reeb_flow(form, psi_inverse(ChartPoint(0.0, start)), T, int(T * samples_per_unit), endpoint=True)
    tau, zeta = _chart(x)
    relative = zeta - _reference_trace(short_orbit)(tau)
    inside = np.abs(relative) < settings.HOPF_TUBE_RADIUS
    complete = bool(inside.all())
    if not complete:
        stop = int(np.argmin(inside))
        logger.warning(f"Segment leaves the tube at t={t[stop]:.3f}; reporting the part inside")
        t, relative = t[:stop], relative[:stop]
    angles = np.unwrap(np.angle(relative))
    rates = np.gradient(angles, t)
    duration = float(t[-1] - t[0])
    report = GrowthReport(
        min_rate=float(rates.min()),
        mean_rate=float((angles[-1] - angles[0]) / duration),
        revolutions=float((angles[-1] - angles[0]) / (2.0 * np.pi)),
        periods=duration / np.pi,
        complete=complete,
    )
    logger.info(f"{form.label}: min winding rate {report.min_rate:.4f} over {report.periods:.1f} periods")
    return report


def chart_field_derivative(form: PerturbedContactForm, tau: float = 0.0, h: float = 1e-5) -> np.ndarray:
    """Derivative at zeta = 0 of the zeta-component of the Reeb field in the chart."""
    def zeta_velocity(zeta: complex) -> complex:
        x = psi_inverse(ChartPoint(tau, zeta))
        R = reeb_field(form, x)
        forward = (x + 1e-7 * R) / np.linalg.norm(x + 1e-7 * R)
        backward = (x - 1e-7 * R) / np.linalg.norm(x - 1e-7 * R)
        return complex((_chart(forward)[1][0] - _chart(backward)[1][0]) / 2e-7)

    D = np.empty((2, 2))
    for k, d in enumerate((h, 1j * h)):
        diff = (zeta_velocity(d) - zeta_velocity(-d)) / (2.0 * h)
        D[:, k] = [diff.real, diff.imag]
    return D


class DichotomyScan(BaseModel):
    form: str
    cap: float
    eps_tilde: float
    within_threshold: bool
    periods: List[float]
    long_seeds: int
    gap_findings: List[float]
    histogram: List[int]
    bin_edges: List[float]


def _prime_period(form: PerturbedContactForm, seed: complex, cap: float) -> Optional[float]:
    zeta, elapsed = seed, 0.0
    while elapsed <= cap:
        zeta, T = return_map(form, zeta)
        elapsed += T
        if abs(zeta - seed) < 1e-6 * max(1.0, abs(seed)) and elapsed <= cap:
            return elapsed
    return None


def period_dichotomy_scan(form: PerturbedContactForm, cap: float = 20.0, n_seeds: int = 8,
                          seed: Optional[int] = None) -> DichotomyScan:
    """Prime periods up to ``cap`` from short-orbit, grid and random seeds."""
    size = form.perturbation_size()
    within = size <= settings.HOPF_PERTURBATION_MAX
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    random_seeds = rng.uniform(0.0, 1.0, n_seeds) * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, n_seeds))
    seeds = fiber_seeds() + [complex(s) for s in random_seeds]
    if within:
        orbits, _ = find_short_orbits(form)
        seeds = [o.zeta for o in orbits] + seeds

    with ThreadPoolExecutor(max_workers=settings.N_WORKERS) as pool:
        found = list(pool.map(lambda s: _prime_period(form, s, cap), seeds))

    periods = sorted(p for p in found if p is not None)
    eps_tilde = short_window(form)
    gap = [p for p in periods if abs(p - np.pi) > eps_tilde]
    if within and gap:
        logger.error(f"{form.label}: prime periods inside the forbidden gap: {gap}")
    counts, edges = np.histogram(periods, bins=np.linspace(0.0, cap, 41))
    return DichotomyScan(
        form=form.label, cap=cap, eps_tilde=eps_tilde, within_threshold=within, periods=periods,
        long_seeds=sum(p is None for p in found), gap_findings=gap,
        histogram=counts.tolist(), bin_edges=edges.tolist(),
    )


def torus_loop(p: int, q: int, a: float, n: int = 1024) -> np.ndarray:
    """(cos a e^{ips}, sin a e^{iqs}); its linking with L_0 is q."""
    s = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    z = np.cos(a) * np.exp(1j * p * s)
    w = np.sin(a) * np.exp(1j * q * s)
    return np.column_stack([z.real, z.imag, w.real, w.imag])


def gauss_link_agreement(pairs: int = 10, seed: Optional[int] = None) -> dict:
    """winding_link against gauss_link with the binding on random torus loops."""
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    binding = hopf_fiber(np.array([1.0, 0.0, 0.0, 0.0]))
    mismatches = []
    checked = 0
    while checked < pairs:
        p, q = int(rng.integers(1, 4)), int(rng.integers(-2, 4))
        if math.gcd(p, q) != 1:
            continue
        loop = torus_loop(p, q, float(rng.uniform(0.35, 1.2)))
        by_winding = winding_link(loop)
        by_gauss = gauss_link(binding, PolylineKnot.from_samples(loop)).value
        if by_winding != by_gauss:
            mismatches.append({'p': p, 'q': q, 'winding': by_winding, 'gauss': by_gauss})
        checked += 1
    if mismatches:
        logger.error(f"winding_link and gauss_link disagree on {len(mismatches)} of {pairs} loops")
    return {'agree': not mismatches, 'pairs': pairs, 'mismatches': mismatches}
