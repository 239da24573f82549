"""Experiment drivers behind the command line.

Each kind validates its own parameter model, runs one pipeline and writes
stamped artifacts.  Exit codes: 0 success, 1 experiment failure (with
diagnostics.json), 2 configuration or schema error (no artifacts).
"""
import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from .config import settings
from .data_processor import ArtifactStore, knot_frame, public_metadata, read_json, read_knot_csv
from .errors import ConfigurationError, LabError, OracleDisagreement
from .geodesics import (GeodesicState, equator_orbit, integrate_finsler_geodesic, integrate_h_geodesic, spray_oracle,
                        trajectory_deviation)
from .hopf import (constant_form, find_short_orbits, gauss_link_agreement, harmonic_perturbation,
                   period_dichotomy_scan, PerturbedContactForm)
from .knots import PolylineKnot, gamma_R, gauss_link, hopf_fiber, k8_curves, lift_contractibility_tag, self_linking
from .linearized import cz_index, dynamical_convexity_report
from .profile import build_surface, comparison_return_time, curvature_integral_identity, round_sphere
from .randers import make_randers, reversibility, unit_vector_at_angle
from .shooting import verify_theorem_ii
from .visualization import LabVisualization

logger = logging.getLogger(__name__)

Kind = Literal['surface', 'geodesic', 'shoot', 'cz', 'knots', 'hopf']


class SurfaceParams(BaseModel):
    R: float = Field(0.49, gt=0, le=1, description="Equator radius")
    K_max: float = Field(4.25, gt=0, description="Curvature on the polar caps")
    smoothing: Optional[float] = Field(None, gt=0, description="Blend width in x = rho^2")


class GeodesicParams(SurfaceParams):
    r: float = Field(1.0, ge=1, description="Reversibility")
    phi: float = Field(0.5, ge=0, description="Launch angle to the wind at the equator")
    T: float = Field(3.0, gt=0, description="Integration horizon")
    oracle: bool = Field(False, description="Also integrate the spray and report the deviation")


class ShootParams(BaseModel):
    r: float = Field(..., ge=1, description="Reversibility")
    delta: float = Field(..., gt=0, lt=1, description="Pinching to reach")


class CzParams(SurfaceParams):
    r: float = Field(1.0, ge=1)
    orbit: Literal['equator1', 'equator2'] = 'equator2'


class KnotsParams(BaseModel):
    link: Optional[Tuple[str, str]] = Field(None, description="Two knot CSV files to link")
    n_samples: int = Field(1024, ge=256)


class HopfParams(BaseModel):
    f: str = Field('harmonic:0.01', description="const:<c> | harmonic:<eps>[:<degree>]")
    cap: float = Field(20.0, gt=0)
    seeds: int = Field(8, ge=1)
    report_name: str = 'scan.json'


PARAMS = {
    'surface': SurfaceParams,
    'geodesic': GeodesicParams,
    'shoot': ShootParams,
    'cz': CzParams,
    'knots': KnotsParams,
    'hopf': HopfParams,
}


class ExperimentConfig(BaseModel):
    kind: Kind
    params: Dict[str, Any] = Field(default_factory=dict)
    out_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    tol: Optional[float] = Field(None, gt=0, lt=1e-3, description="Integrator rtol/atol override")


@contextmanager
def tolerance_override(tol: Optional[float]):
    saved = settings.INTEGRATOR_RTOL, settings.INTEGRATOR_ATOL
    if tol is not None:
        settings.INTEGRATOR_RTOL = settings.INTEGRATOR_ATOL = tol
    try:
        yield
    finally:
        settings.INTEGRATOR_RTOL, settings.INTEGRATOR_ATOL = saved


def _surface(params: SurfaceParams):
    if params.R == 1.0 and params.K_max == 1.0:
        return round_sphere()
    return build_surface(params.R, params.K_max, params.smoothing)


def run_surface(params: SurfaceParams, store: ArtifactStore, seed: int) -> None:
    surface = _surface(params)
    frame = surface.to_frame()
    target, integral = curvature_integral_identity(surface)
    store.write_table('profile.csv', frame)
    store.write_json('surface.json', {
        **surface.describe(),
        'K_min_observed': float(frame['K'].min()),
        'K_max_observed': float(frame['K'].max()),
        'comparison_return_time': comparison_return_time(surface.R, surface.K_max) if not surface.pinch.degenerate else math.pi / 2,
        'curvature_identity': {'target': target, 'integral': integral},
    })
    store.write_figure('profile_figure.json', LabVisualization().create_profile_chart(frame, surface.R, surface.K_max))


def run_geodesic(params: GeodesicParams, store: ArtifactStore, seed: int) -> None:
    metric = make_randers(_surface(params), params.r)
    v0 = unit_vector_at_angle(metric, (0.0, 0.0), params.phi)
    traj = integrate_finsler_geodesic(metric, v0, params.T)
    summary = {'phi': params.phi, 'T': params.T, **metric.describe(), **public_metadata(traj.metadata)}
    if params.oracle:
        summary['spray_deviation'] = trajectory_deviation(traj, spray_oracle(metric, v0, params.T))
    store.write_table('geodesic.csv', traj.to_frame())
    store.write_json('geodesic.json', summary)


def run_shoot(params: ShootParams, store: ArtifactStore, seed: int) -> None:
    report = verify_theorem_ii(params.r, params.delta)
    sweep = pd.DataFrame(report.table)
    store.write_table('sweep.csv', sweep)
    if report.closed_geodesic is not None:
        frame = report.closed_geodesic.to_frame()
        store.write_table('closed_geodesic.csv', frame)
        store.write_figure('closed_geodesic_figure.json', LabVisualization().create_geodesic_chart(frame))
    store.write_figure('return_map_figure.json', LabVisualization().create_return_map_chart(sweep, report.limits))
    store.write_json('report.json', report.model_dump())


def run_cz(params: CzParams, store: ArtifactStore, seed: int) -> None:
    metric = make_randers(_surface(params), params.r)
    turns = 2 if params.orbit == 'equator2' else 1
    orbit = equator_orbit(metric, turns)
    record = cz_index(metric, orbit, params.orbit)
    verdict = dynamical_convexity_report(metric, [(orbit, lift_contractibility_tag(orbit.ambient))])[0]
    store.write_json('cz.json', {**record.model_dump(), 'verdict': verdict.model_dump()})


def run_knots(params: KnotsParams, store: ArtifactStore, seed: int) -> None:
    if params.link is not None:
        A, B = (PolylineKnot.from_samples(read_knot_csv(p)) for p in params.link)
        result = gauss_link(A, B)
        store.write_json('link.json', {'link': result.value, 'raw': result.raw, 'residual': result.residual})
        return
    p0 = hopf_fiber(np.array([1.0, 0.0, 0.0, 0.0]), params.n_samples)
    p1 = hopf_fiber(np.array([0.0, 0.0, 1.0, 0.0]), params.n_samples)
    gamma = gamma_R(1.0, params.n_samples)
    k8 = k8_curves(params.n_samples)
    lift = PolylineKnot.from_samples(k8.gamma1)
    summary = {
        'hopf_fiber_link': gauss_link(p0, p1).value,
        'sl_P0': self_linking(p0),
        'sl_gamma_R1': self_linking(gamma),
        'sl_k8_lift': self_linking(lift),
        'k8_lift_contractible': lift_contractibility_tag(k8.c),
        'k8_tangency': k8.tangency,
    }
    store.write_table('p0.csv', knot_frame(p0.vertices))
    store.write_table('k8_lift.csv', knot_frame(lift.vertices))
    store.write_json('knots.json', summary)


def parse_form(spec: str) -> PerturbedContactForm:
    name, _, rest = spec.partition(':')
    args = [a for a in rest.split(':') if a]
    try:
        if name == 'const':
            return constant_form(float(args[0]) if args else 1.0)
        if name == 'harmonic':
            return harmonic_perturbation(float(args[0]), int(args[1]) if len(args) > 1 else 2)
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"Malformed form spec {spec!r}", stage="hopf") from exc
    raise ConfigurationError(f"Unknown form {name!r}", stage="hopf")


def run_hopf(params: HopfParams, store: ArtifactStore, seed: int) -> None:
    form = parse_form(params.f)
    scan = period_dichotomy_scan(form, params.cap, params.seeds, seed)
    if scan.within_threshold:
        orbits, _ = find_short_orbits(form)
        for n, orbit in enumerate(orbits):
            store.write_table(f'short_orbit_{n}.csv', orbit.to_frame())
    store.write_figure('periods_figure.json', LabVisualization().create_period_histogram(scan.histogram, scan.bin_edges, scan.eps_tilde))
    store.write_json(params.report_name, scan.model_dump())


RUNNERS: Dict[str, Callable[[BaseModel, ArtifactStore, int], None]] = {
    'surface': run_surface,
    'geodesic': run_geodesic,
    'shoot': run_shoot,
    'cz': run_cz,
    'knots': run_knots,
    'hopf': run_hopf,
}


def run(config: ExperimentConfig) -> int:
    try:
        params = PARAMS[config.kind].model_validate(config.params)
    except ValidationError as exc:
        logger.error(f"Invalid {config.kind} parameters: {exc}")
        return 2

    store = ArtifactStore(config.out_dir, config.model_dump(), config.seed)
    logger.info(f"Running {config.kind} experiment (config {store.config_hash[:12]})")
    with tolerance_override(config.tol):
        try:
            RUNNERS[config.kind](params, store, config.seed)
        except ConfigurationError as exc:
            logger.error(f"Configuration error in {config.kind}: {exc}")
            return 2
        except LabError as exc:
            logger.error(f"{config.kind} failed at stage {exc.stage}: {exc}")
            store.write_diagnostics(exc)
            return 1
        except Exception as exc:
            logger.exception(f"Unexpected error in {config.kind}")
            store.write_diagnostics(LabError(str(exc), stage=config.kind, cause=type(exc).__name__))
            return 1
    return 0


def _agree(name: str, a: float, b: float, tol: float, pair: str) -> None:
    if abs(a - b) > tol:
        raise OracleDisagreement(f"{name}: {a!r} vs {b!r} exceeds {tol}", stage="fixtures", pair=pair)


def regen_fixtures(out_dir: Optional[str] = None, include_shooting: bool = True, seed: Optional[int] = None) -> List[Path]:
    """Recompute the regression values through their oracle pairs and write them with provenance."""
    out_dir = out_dir or str(Path(settings.OUTPUT_DIR) / 'fixtures')
    store = ArtifactStore(out_dir, {'fixtures': True, 'include_shooting': include_shooting}, seed)

    sphere = round_sphere()
    sphere_metric = make_randers(sphere, 1.0)
    equator = integrate_h_geodesic(sphere, GeodesicState(0.0, 0.0, 0.0, 0.0, 1.0), math.pi)
    _agree('round equator return', equator.theta[-1], math.pi, 1e-6, 'h_geodesic/closed_form')
    store.write_fixture('round_sphere.json', {
        'equator_return_time': math.pi,
        'curvature': float(np.max(np.abs(sphere.curvature(np.linspace(0.0, 1.5, 50))))),
        'wind': sphere_metric.eta,
    }, 'trivial')

    surface = build_surface(0.49, 4.25)
    target, integral = curvature_integral_identity(surface)
    _agree('curvature identity', target, integral, 1e-5, 'profile/curvature_integral')
    store.write_fixture('profile_049_425.json', {
        'L': surface.L, 's_star': comparison_return_time(0.49, 4.25), 'identity': integral,
    }, 'derived:curvature_integral_identity')

    values = {}
    for r in (1.0, 2.0, 3.0):
        metric = make_randers(surface, r)
        sampled = reversibility(metric)
        _agree(f'reversibility r={r}', sampled, metric.analytic_reversibility, 1e-6, 'randers/analytic')
        values[str(r)] = sampled
    store.write_fixture('reversibility.json', values, 'paper')

    metric = make_randers(surface, 2.0)
    rng = np.random.default_rng(store.seed)
    deviations = []
    for phi in rng.uniform(0.1, 1.2, 3):
        v0 = unit_vector_at_angle(metric, (0.0, 0.0), float(phi))
        deviations.append(trajectory_deviation(integrate_finsler_geodesic(metric, v0, 3.0), spray_oracle(metric, v0, 3.0)))
        _agree(f'geodesic at phi={phi:.4f}', deviations[-1], 0.0, 1e-6, 'commuting_flows/spray')
    store.write_fixture('geodesic_oracle.json', {'max_deviation': max(deviations)}, 'derived:spray_oracle')

    counterexample = make_randers(surface, 1.0)
    orbit = equator_orbit(counterexample, 2)
    record = cz_index(counterexample, orbit, 'equator2')
    expected = 2.0 * surface.R / (1.0 + counterexample.wind_at_equator)
    _agree('equator rotation', record.I[0], expected, 1e-6, 'rotation_interval/uniform_rotation')
    store.write_fixture('cz_equator2.json', {**record.model_dump(), 'R': surface.R, 'K_max': 4.25, 'r': 1.0},
                        'derived:uniform_rotation')

    p0 = hopf_fiber(np.array([1.0, 0.0, 0.0, 0.0]))
    p1 = hopf_fiber(np.array([0.0, 0.0, 1.0, 0.0]))
    link = gauss_link(p0, p1).value
    agreement = gauss_link_agreement(pairs=10, seed=store.seed)
    if not agreement['agree']:
        raise OracleDisagreement("winding_link and gauss_link disagree", stage="fixtures", pair='gauss_link/winding_link',
                                 mismatches=agreement['mismatches'])
    store.write_fixture('linking.json', {
        'hopf_fibers': link, 'sl_P0': self_linking(p0), 'sl_gamma_R1': self_linking(gamma_R(1.0)),
    }, 'derived:winding_link')

    if include_shooting:
        for r, delta in ((1.0, 0.24), (2.0, 0.43)):
            report = verify_theorem_ii(r, delta)
            store.write_fixture(f'shoot_r{r:g}.json', {
                'R': report.R, 'K_max': report.K_max, 'r': r,
                'phi_star': report.phi_star, 'T_star': report.T_star, 'L': report.limits['closed_form_T_phi0'] / 2.0,
                'self_intersections': len(report.self_intersections),
            }, 'derived:return_map_sweep')
    logger.info(f"Regenerated {len(store.written)} fixture files in {out_dir}")
    return store.written


FIXTURE_REFERENCE = Path(__file__).resolve().parent.parent / 'fixtures' / 'regression.json'


def check_fixtures(out_dir: str, reference: Optional[str] = None) -> List[str]:
    """Compare regenerated fixtures with the committed reference; returns one line per mismatch.

    Reference entries hold ``values`` matched within ``tolerance`` and
    ``ranges`` of [lo, hi] for quantities with no closed form (null is open).
    """
    expected = read_json(reference or FIXTURE_REFERENCE)
    mismatches = []
    for name, entry in expected.items():
        path = Path(out_dir) / name
        if not path.exists():
            mismatches.append(f"{name}: missing")
            continue
        document = read_json(path)
        if document.get('provenance') != entry['provenance']:
            mismatches.append(f"{name}: provenance {document.get('provenance')!r} != {entry['provenance']!r}")
        values = document.get('values', {})
        tol = entry.get('tolerance', 0.0)
        for key, want in entry.get('values', {}).items():
            got = values.get(key)
            if got is None or not np.allclose(got, want, rtol=0.0, atol=tol):
                mismatches.append(f"{name}: {key}={got!r}, expected {want!r} within {tol}")
        for key, (lo, hi) in entry.get('ranges', {}).items():
            got = values.get(key)
            if got is None or (lo is not None and got < lo) or (hi is not None and got > hi):
                mismatches.append(f"{name}: {key}={got!r} outside [{lo}, {hi}]")
    logger.info(f"Fixture check against {len(expected)} reference files: {len(mismatches)} mismatches")
    return mismatches
