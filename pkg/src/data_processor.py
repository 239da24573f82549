import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from .config import settings
from .errors import ContractViolation, LabError

logger = logging.getLogger(__name__)

PROVENANCE_KINDS = ('paper', 'trivial')


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=_to_builtin)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, 'model_dump'):
        return value.model_dump()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def public_metadata(metadata: Dict[str, Any]) -> Dict[str, Any]:
    """Drop private keys (leading underscore) such as cached solver objects."""
    return {k: v for k, v in metadata.items() if not k.startswith('_')}


def check_provenance(value: str) -> str:
    if value in PROVENANCE_KINDS or (value.startswith('derived:') and len(value) > len('derived:')):
        return value
    raise ContractViolation(f"Unknown provenance {value!r}", stage="fixtures")


class ArtifactStore:
    """Writes experiment outputs under one directory, stamped with config hash and seed."""

    def __init__(self, out_dir: Union[str, Path, None] = None, config: Optional[Dict[str, Any]] = None,
                 seed: Optional[int] = None):
        self.out_dir = Path(out_dir or settings.OUTPUT_DIR)
        self.config = config or {}
        self.seed = settings.DEFAULT_SEED if seed is None else seed
        self.config_hash = config_hash(self.config)
        self.written = []

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def stamp(self) -> Dict[str, Any]:
        return {'config_hash': self.config_hash, 'seed': self.seed}

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self._path(name)
        document = {**self.stamp(), **payload}
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(document, handle, indent=2, sort_keys=True, default=_to_builtin)
            handle.write('\n')
        self.written.append(path)
        logger.info(f"Wrote {path}")
        return path

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        """CSV with full float precision; the stamp goes into a leading comment line."""
        path = self._path(name)
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            handle.write(f"# config_hash={self.config_hash} seed={self.seed}\n")
            frame.to_csv(handle, index=False, float_format='%.17g')
        self.written.append(path)
        logger.info(f"Wrote {path} ({len(frame)} rows)")
        return path

    def write_diagnostics(self, error: LabError, name: str = 'diagnostics.json') -> Path:
        return self.write_json(name, {'status': 'failed', 'error': error.to_dict()})

    def write_fixture(self, name: str, values: Dict[str, Any], provenance: str) -> Path:
        return self.write_json(name, {'provenance': check_provenance(provenance), 'values': values})

    def write_figure(self, name: str, figure) -> Path:
        """Plotly JSON with the stamp under layout.meta."""
        figure.update_layout(meta=self.stamp())
        path = self._path(name)
        path.write_text(figure.to_json(), encoding='utf-8')
        self.written.append(path)
        return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def read_knot_csv(path: Union[str, Path]) -> np.ndarray:
    """Vertices of a knot in the 3-sphere from a CSV with columns x1..x4."""
    frame = read_table(path)
    columns = ['x1', 'x2', 'x3', 'x4']
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ContractViolation(f"Knot file {path} lacks columns {missing}", stage="read_knot")
    points = frame[columns].to_numpy(dtype=float)
    if np.allclose(points[0], points[-1]):
        points = points[:-1]
    return points


def knot_frame(points: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(points[:, :4], columns=['x1', 'x2', 'x3', 'x4'])


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)
