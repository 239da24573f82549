"""Linking and self-linking of closed curves in the 3-sphere.

Points of the 3-sphere are unit 4-vectors (Re z, Im z, Re w, Im w).  The
standard contact form is lambda_0 = 1/2 Im(conj(z) dz + conj(w) dw) and
its kernel is trivialized by the global frame (-conj(w), conj(z)).

The unit tangent bundle of the round 2-sphere is covered twice by the
3-sphere through D(A) = (A^-1 j A, -A^-1 k A), with A = [[z, w], [-conj(w),
conj(z)]] and 3-vectors (x, y, t) read as [[i t, u], [-conj(u), -i t]],
u = x + i y.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .config import settings
from .errors import ContractViolation, FramingError, ProximityError, QuadratureError

logger = logging.getLogger(__name__)

J_MAT = np.array([[0, 1], [-1, 0]], dtype=complex)
K_MAT = np.array([[0, 1j], [1j, 0]], dtype=complex)


@dataclass(frozen=True)
class PolylineKnot:
    """Closed polyline; ``points`` repeats the first vertex at the end."""

    points: np.ndarray
    kind: str = 'S3'  # 'S3' for unit 4-vectors, 'UTB' for (base, tangent) 6-vectors
    orientation: int = 1

    @classmethod
    def from_samples(cls, samples: np.ndarray, kind: str = 'S3') -> "PolylineKnot":
        samples = np.asarray(samples, dtype=float)
        knot = cls(np.vstack([samples, samples[:1]]), kind)
        knot.validate()
        return knot

    @property
    def vertices(self) -> np.ndarray:
        """Vertices in traversal order without the closing repeat."""
        pts = self.points[:-1]
        return pts if self.orientation > 0 else pts[::-1]

    def reversed(self) -> "PolylineKnot":
        return PolylineKnot(self.points, self.kind, -self.orientation)

    def validate(self) -> None:
        pts = self.points
        if not np.allclose(pts[0], pts[-1]):
            raise ContractViolation("Polyline is not closed", stage="knot")
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if chords.max() >= 0.1:
            raise ContractViolation(f"Chord of length {chords.max():.3f} is too long", stage="knot")
        if chords.min() == 0.0:
            raise ContractViolation("Polyline repeats a vertex", stage="knot")
        if self.kind == 'S3' and not np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-10):
            raise ContractViolation("Vertices must lie on the 3-sphere", stage="knot")


@njit
def _dot(u, v):
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


@njit
def _triple(a, b, c):
    return (a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))


@njit(parallel=True)
def _segment_pair_sums(ls, ks):
    """Per-segment sums of the polygon solid-angle kernel; ls, ks are closed (N, 3)."""
    Nl = ls.shape[0]
    Nk = ks.shape[0]
    rows = np.zeros(Nk - 1)
    for i in prange(Nk - 1):
        acc = 0.0
        for j in range(Nl - 1):
            a = ls[j] - ks[i]
            b = ls[j] - ks[i + 1]
            c = ls[j + 1] - ks[i + 1]
            d = ls[j + 1] - ks[i]
            p = _triple(a, b, c)
            an = math.sqrt(_dot(a, a))
            bn = math.sqrt(_dot(b, b))
            cn = math.sqrt(_dot(c, c))
            dn = math.sqrt(_dot(d, d))
            d1 = an * bn * cn + _dot(a, b) * cn + _dot(b, c) * an + _dot(c, a) * bn
            d2 = an * dn * cn + _dot(a, d) * cn + _dot(d, c) * an + _dot(c, a) * dn
            acc += math.atan2(p, d1) + math.atan2(p, d2)
        rows[i] = acc
    return rows


def polygon_linking(ls: np.ndarray, ks: np.ndarray) -> float:
    """Gauss linking number of two closed polygons in 3-space (not rounded)."""
    rows = _segment_pair_sums(np.ascontiguousarray(ls, dtype=np.float64), np.ascontiguousarray(ks, dtype=np.float64))
    return float(np.sum(rows)) / (2.0 * np.pi)


def _chart_basis(pole: np.ndarray) -> np.ndarray:
    """Rows e1, e2, e3 completing ``pole`` to a positively oriented basis of R^4."""
    q, _ = np.linalg.qr(np.column_stack([pole, np.eye(4)]))
    basis = q[:, 1:4].T.copy()
    if np.linalg.det(np.vstack([basis, pole])) < 0:
        basis[0] *= -1.0
    return basis


def stereographic_projection(points: np.ndarray, pole: np.ndarray) -> np.ndarray:
    """Orientation-preserving projection of the 3-sphere minus ``pole`` to 3-space."""
    pole = np.asarray(pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    basis = _chart_basis(pole)
    points = np.asarray(points, dtype=float)
    return (points @ basis.T) / (1.0 - points @ pole)[:, None]


_POLE_CANDIDATES = np.random.default_rng(20240917).normal(size=(256, 4))
_POLE_CANDIDATES /= np.linalg.norm(_POLE_CANDIDATES, axis=1)[:, None]


def choose_pole(*curves: np.ndarray, rank: int = 0) -> np.ndarray:
    """Candidate pole farthest from the given curves (``rank`` picks runners-up)."""
    tree = cKDTree(np.vstack(curves))
    distance, _ = tree.query(_POLE_CANDIDATES)
    return _POLE_CANDIDATES[np.argsort(distance)[::-1][rank]]


@dataclass
class LinkResult:
    value: int
    raw: float
    residual: float


def gauss_link(A: PolylineKnot, B: PolylineKnot, pole: Optional[np.ndarray] = None) -> LinkResult:
    """Linking number of two disjoint knots in the 3-sphere."""
    va, vb = A.vertices, B.vertices
    distance, _ = cKDTree(vb).query(va)
    if distance.min() <= settings.LINK_MIN_DISTANCE:
        raise ProximityError(f"Curves come within {distance.min():.2e}", stage="gauss_link", distance=float(distance.min()))

    pole = choose_pole(va, vb) if pole is None else pole
    pa = stereographic_projection(va, pole)
    pb = stereographic_projection(vb, pole)
    raw = polygon_linking(np.vstack([pa, pa[:1]]), np.vstack([pb, pb[:1]]))
    value = int(round(raw))
    residual = abs(raw - value)
    if residual >= settings.LINK_RESIDUAL_MAX:
        raise QuadratureError(f"Linking integral {raw:.4f} is not near an integer; refine the polylines",
                              stage="gauss_link", raw=raw)
    logger.debug(f"Gauss linking {raw:.6f} -> {value}")
    return LinkResult(value, raw, residual)


def contact_frame(points: np.ndarray) -> np.ndarray:
    """(-conj(w), conj(z)) as real 4-vectors, spanning ker lambda_0 with its i-multiple."""
    x = np.atleast_2d(points)
    return np.column_stack([-x[:, 2], x[:, 3], x[:, 0], -x[:, 1]])


def contact_form(points: np.ndarray, tangents: np.ndarray) -> np.ndarray:
    """lambda_0 evaluated on tangent vectors at the given points."""
    x, v = np.atleast_2d(points), np.atleast_2d(tangents)
    return 0.5 * (x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0] + x[:, 2] * v[:, 3] - x[:, 3] * v[:, 2])


def push_off(K: PolylineKnot, frame: np.ndarray, eps: float) -> PolylineKnot:
    pts = K.vertices + eps * frame
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    return PolylineKnot.from_samples(pts)


def self_linking(K: PolylineKnot, frame: Optional[np.ndarray] = None, eps: Optional[float] = None) -> int:
    """Linking of K with its push-off along ``frame``, stable under halving eps."""
    frame = contact_frame(K.vertices) if frame is None else np.asarray(frame)
    if np.min(np.linalg.norm(frame, axis=1)) < 1e-8:
        raise FramingError("Frame vanishes along the knot", stage="self_linking")
    eps = eps or settings.PUSH_OFF
    values = [gauss_link(K, push_off(K, frame, e)).value for e in (eps, eps / 2, eps / 4)]
    if len(set(values)) != 1:
        raise FramingError(f"Self-linking changes under push-off halving: {values}", stage="self_linking", values=values)
    return values[0]


def hopf_fiber(point: np.ndarray, n: int = 512) -> PolylineKnot:
    """The Hopf circle {e^{it} (z, w)} through ``point``."""
    x = np.asarray(point, dtype=float)
    z, w = complex(x[0], x[1]), complex(x[2], x[3])
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    zt, wt = np.exp(1j * t) * z, np.exp(1j * t) * w
    return PolylineKnot.from_samples(np.column_stack([zt.real, zt.imag, wt.real, wt.imag]))


def gamma_R(R: float, n: int = 512) -> PolylineKnot:
    """(1, R e^{i theta}) / sqrt(1 + R^2)."""
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    c = 1.0 / np.sqrt(1.0 + R ** 2)
    return PolylineKnot.from_samples(np.column_stack([np.full(n, c), np.zeros(n), c * R * np.cos(t), c * R * np.sin(t)]))


def to_matrix(point: np.ndarray) -> np.ndarray:
    x = np.asarray(point, dtype=float)
    z, w = complex(x[0], x[1]), complex(x[2], x[3])
    return np.array([[z, w], [-np.conj(w), np.conj(z)]])


def vector_to_matrix(v: np.ndarray) -> np.ndarray:
    x, y, t = v
    u = complex(x, y)
    return np.array([[1j * t, u], [-np.conj(u), -1j * t]])


def matrix_to_vector(M: np.ndarray) -> np.ndarray:
    u = M[0, 1]
    return np.array([u.real, u.imag, M[0, 0].imag])


def double_cover(point: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """D(A) = (A^-1 j A, -A^-1 k A) as (base, unit tangent) in 3-space."""
    x = np.asarray(point, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-10:
        raise ContractViolation("Point is not on the 3-sphere", stage="double_cover")
    A = to_matrix(x)
    A_inv = A.conj().T
    return matrix_to_vector(A_inv @ J_MAT @ A), -matrix_to_vector(A_inv @ K_MAT @ A)


_UNIT_BASIS = [np.array([1, 0], dtype=complex), np.array([1j, 0]), np.array([0, 1], dtype=complex), np.array([0, 1j])]


def _lift_point(base: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Unit 4-vector A (up to sign) with D(A) = (base, tangent).

    A^-1 M_e A = M_{Oe} is the linear condition M_e A = A M_{Oe} because A is unitary.
    """
    targets = [(J_MAT, vector_to_matrix(base)), (K_MAT, -vector_to_matrix(tangent))]
    columns = []
    for zw in _UNIT_BASIS:
        A = np.array([[zw[0], zw[1]], [-np.conj(zw[1]), np.conj(zw[0])]])
        residual = np.concatenate([(M @ A - A @ N).ravel() for M, N in targets])
        columns.append(np.concatenate([residual.real, residual.imag]))
    _, _, vh = np.linalg.svd(np.column_stack(columns))
    x = vh[-1]
    return x / np.linalg.norm(x)


def lift_to_sphere3(base: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Continuous preimage under D of a closed curve in the unit tangent bundle."""
    lifted = np.array([_lift_point(b, v) for b, v in zip(base, tangent)])
    for n in range(1, len(lifted)):
        if lifted[n] @ lifted[n - 1] < 0:
            lifted[n] *= -1.0
    return lifted


@dataclass
class K8Curves:
    theta: np.ndarray
    c: np.ndarray
    cdot: np.ndarray
    Gamma1: np.ndarray
    gamma1: np.ndarray
    tangency: Dict[str, str] = field(default_factory=dict)  # hemisphere of cdot and Gamma1 at 0 and pi


def tangent_hemisphere(base: np.ndarray, v: np.ndarray) -> str:
    """'north' or 'south' half of the tangent circle at ``base``, split by the meridian through it."""
    base = np.asarray(base, dtype=float)
    up = np.array([0.0, 0.0, 1.0]) - base[2] * base
    if np.linalg.norm(up) < 1e-12:
        raise ContractViolation("No meridian direction at a pole", stage="tangent_hemisphere")
    height = float(np.asarray(v, dtype=float) @ up)
    if abs(height) < 1e-12:
        raise ContractViolation("Tangent vector lies on the splitting meridian", stage="tangent_hemisphere")
    return 'north' if height > 0.0 else 'south'


def k8_curve(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return 0.5 * np.stack([1.0 + np.cos(2 * theta), np.sin(2 * theta), 2.0 * np.sin(theta)], axis=-1)


def k8_velocity(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([-np.sin(2 * theta), np.cos(2 * theta), np.cos(theta)], axis=-1)


def k8_tangent_lift(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([-0.5 * np.sin(2 * theta), 0.5 * (np.cos(2 * theta) - 1.0), np.cos(theta)], axis=-1)


def k8_curves(n_samples: int = 1024) -> K8Curves:
    """The figure-eight c, its transverse unit-tangent lift Gamma_1 and a preimage gamma_1 in the 3-sphere."""
    if n_samples < 256:
        raise ContractViolation("Need at least 256 samples", stage="k8_curves")
    theta = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    Gamma1 = k8_tangent_lift(theta)
    c = k8_curve(theta)
    gamma1 = lift_to_sphere3(c, Gamma1)
    closing = float(np.linalg.norm(gamma1[0] - gamma1[-1]))
    logger.debug(f"k8 lift closing gap {closing:.3e}")

    tangency = {}
    for label, t in (('0', 0.0), ('pi', np.pi)):
        base = k8_curve(t)
        tangency[f'cdot_{label}'] = tangent_hemisphere(base, k8_velocity(t))
        tangency[f'Gamma1_{label}'] = tangent_hemisphere(base, k8_tangent_lift(t))
    return K8Curves(theta, c, k8_velocity(theta), Gamma1, gamma1, tangency)


def turning_number(curve: np.ndarray, pole: Optional[np.ndarray] = None) -> int:
    """Turning number of a closed spherical curve in the stereographic chart from ``pole``."""
    curve = np.asarray(curve, dtype=float)
    # radial projection; surfaces of revolution here are star-shaped about the origin
    curve = curve / np.linalg.norm(curve, axis=1)[:, None]
    if pole is None:
        candidates = _POLE_CANDIDATES[:, :3] / np.linalg.norm(_POLE_CANDIDATES[:, :3], axis=1)[:, None]
        distance, _ = cKDTree(curve).query(candidates)
        pole = candidates[np.argmax(distance)]
    pole = np.asarray(pole, dtype=float) / np.linalg.norm(pole)
    if np.min(np.linalg.norm(curve - pole, axis=1)) < 1e-3:
        raise ContractViolation("Curve passes through the chart pole", stage="turning_number")
    q, _ = np.linalg.qr(np.column_stack([pole, np.eye(3)]))
    e1, e2 = q[:, 1], q[:, 2]
    denom = 1.0 - curve @ pole
    plane = np.column_stack([(curve @ e1) / denom, (curve @ e2) / denom])
    steps = np.diff(np.vstack([plane, plane[:1]]), axis=0)
    steps = steps[np.linalg.norm(steps, axis=1) > 0.0]
    angles = np.unwrap(np.arctan2(steps[:, 1], steps[:, 0]))
    total = angles[-1] - angles[0] + _wrap(np.arctan2(steps[0, 1], steps[0, 0]) - angles[-1])
    return int(round(total / (2.0 * np.pi)))


def _wrap(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def lift_contractibility_tag(curve: np.ndarray) -> bool:
    """True iff the unit-tangent lift is contractible, i.e. the turning number is even."""
    try:
        n = turning_number(curve)
    except ContractViolation:
        alt = _POLE_CANDIDATES[1, :3]
        n = turning_number(curve, pole=alt)
    return n % 2 == 0
