import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from src.config import settings
from src.data_processor import ArtifactStore
from src.errors import ConfigurationError, LabError, OracleDisagreement
from src.experiments import ExperimentConfig, check_fixtures, regen_fixtures, run

# Setup logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', default=settings.OUTPUT_DIR, help='Output directory (or report path for hopf scan)')
    common.add_argument('--seed', type=int, default=settings.DEFAULT_SEED, help='Seed for randomized sweeps')
    common.add_argument('--tol', type=float, default=None, help='Integrator rtol/atol override')

    parser = argparse.ArgumentParser(prog='finsler-lab', description='Pinched Finsler spheres and perturbed Hopf flows')
    sub = parser.add_subparsers(dest='command', required=True)

    surface = sub.add_parser('surface', parents=[common], help='Build a pinched surface of revolution')
    surface.add_argument('--R', type=float, default=0.49)
    surface.add_argument('--K-max', dest='K_max', type=float, default=4.25)
    surface.add_argument('--smoothing', type=float, default=None)

    geodesic = sub.add_parser('geodesic', parents=[common], help='Integrate one Randers geodesic')
    geodesic.add_argument('--R', type=float, default=0.49)
    geodesic.add_argument('--K-max', dest='K_max', type=float, default=4.25)
    geodesic.add_argument('--r', type=float, default=1.0)
    geodesic.add_argument('--phi', type=float, default=0.5)
    geodesic.add_argument('--T', type=float, default=3.0)
    geodesic.add_argument('--oracle', action='store_true', help='Cross-check against the spray')

    shoot = sub.add_parser('shoot', parents=[common], help='Find the figure-eight closed geodesic')
    shoot.add_argument('--r', type=float, required=True)
    shoot.add_argument('--delta', type=float, required=True)

    cz = sub.add_parser('cz', parents=[common], help='Conley-Zehnder index of an equator orbit')
    cz.add_argument('--metric', type=Path, default=None, help='Fixture JSON with R, K_max and r')
    cz.add_argument('--R', type=float, default=0.49)
    cz.add_argument('--K-max', dest='K_max', type=float, default=4.25)
    cz.add_argument('--r', type=float, default=1.0)
    cz.add_argument('--orbit', choices=['equator1', 'equator2'], default='equator2')

    knots = sub.add_parser('knots', parents=[common], help='Linking and self-linking checks')
    knots.add_argument('--n-samples', dest='n_samples', type=int, default=1024)
    knots_sub = knots.add_subparsers(dest='knots_command')
    link = knots_sub.add_parser('link', parents=[common], help='Linking number of two knot CSV files')
    link.add_argument('A')
    link.add_argument('B')

    hopf = sub.add_parser('hopf', parents=[common], help='Perturbed Hopf flows')
    hopf_sub = hopf.add_subparsers(dest='hopf_command', required=True)
    scan = hopf_sub.add_parser('scan', parents=[common], help='Prime period dichotomy scan')
    scan.add_argument('--f', default='harmonic:0.01', help='const:<c> | harmonic:<eps>[:<degree>]')
    scan.add_argument('--cap', type=float, default=20.0)
    scan.add_argument('--seeds', type=int, default=8)

    fixtures = sub.add_parser('fixtures', parents=[common], help='Regenerate regression fixtures')
    fixtures.add_argument('--check', action='store_true', help='Compare against fixtures/regression.json')

    return parser


def _metric_fixture(path: Path) -> dict:
    """R, K_max and r from a fixture written by ``fixtures`` (or a bare dict)."""
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            document = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"Cannot read metric fixture {path}: {exc}", stage="cli") from exc
    values = document.get('values', document)
    missing = [k for k in ('R', 'K_max', 'r') if k not in values]
    if missing:
        raise ConfigurationError(f"Metric fixture {path} lacks {', '.join(missing)}", stage="cli", missing=missing)
    return {k: values[k] for k in ('R', 'K_max', 'r')}



def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    out_dir = str(args.out)
    if args.command in ('surface', 'geodesic', 'shoot', 'cz'):
        skip = {'command', 'out', 'seed', 'tol', 'metric'}
        params = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
        if args.command == 'cz' and args.metric is not None:
            params.update(_metric_fixture(args.metric))
    elif args.command == 'knots':
        params = {'n_samples': args.n_samples}
        if args.knots_command == 'link':
            params['link'] = (args.A, args.B)
    else:
        params = {'f': args.f, 'cap': args.cap, 'seeds': args.seeds}
        if out_dir.endswith('.json'):
            params['report_name'] = Path(out_dir).name
            out_dir = str(Path(out_dir).parent)
    return ExperimentConfig(kind=args.command, params=params, out_dir=out_dir, seed=args.seed, tol=args.tol)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == 'fixtures':
        try:
            paths = regen_fixtures(str(args.out), seed=args.seed)
        except LabError as exc:
            logger.error(f"Fixture regeneration failed: {exc} ({exc.details})")
            return 1
        logger.info(f"{len(paths)} fixtures written")
        if args.check:
            mismatches = check_fixtures(str(args.out))
            if mismatches:
                for line in mismatches:
                    logger.error(f"Fixture mismatch: {line}")
                ArtifactStore(str(args.out), seed=args.seed).write_diagnostics(OracleDisagreement(
                    "Regenerated fixtures differ from the reference", stage="fixtures", mismatches=mismatches))
                return 1
        return 0

    try:
        config = config_from_args(args)
    except (ValidationError, ConfigurationError) as exc:
        logger.error(f"Invalid configuration: {exc}")
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
