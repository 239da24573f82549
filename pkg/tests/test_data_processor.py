import json

import numpy as np
import pandas as pd
import plotly.graph_objects as go
import pytest

from src.data_processor import (
    ArtifactStore,
    check_provenance,
    config_hash,
    knot_frame,
    public_metadata,
    read_json,
    read_knot_csv,
    read_table,
)
from src.errors import ContractViolation, IntegrationError


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path, {'kind': 'surface', 'params': {'R': 0.49}}, seed=7)


def test_config_hash_ignores_key_order():
    a = config_hash({'kind': 'cz', 'params': {'r': 1.0, 'R': 0.49}})
    b = config_hash({'params': {'R': 0.49, 'r': 1.0}, 'kind': 'cz'})
    assert a == b
    assert a != config_hash({'kind': 'cz', 'params': {'r': 2.0, 'R': 0.49}})


def test_config_hash_accepts_numpy_values():
    assert config_hash({'x': np.float64(0.5)}) == config_hash({'x': 0.5})


def test_write_json_is_stamped(store):
    path = store.write_json('surface.json', {'L': np.float64(0.77), 'values': np.arange(3)})
    document = read_json(path)
    assert document['config_hash'] == store.config_hash
    assert document['seed'] == 7
    assert document['L'] == 0.77
    assert document['values'] == [0, 1, 2]
    assert store.written == [path]


def test_write_table_keeps_full_precision(store):
    frame = pd.DataFrame({'s': [np.pi, 1.0 / 3.0], 'rho': [np.e, 1e-17]})
    path = store.write_table('profile.csv', frame)
    assert path.read_text().startswith(f"# config_hash={store.config_hash} seed=7")
    back = read_table(path)
    assert back['s'].tolist() == frame['s'].tolist()
    assert back['rho'].tolist() == frame['rho'].tolist()


def test_diagnostics(store):
    error = IntegrationError("step size collapsed", stage="geodesic", t=1.5)
    document = read_json(store.write_diagnostics(error))
    assert document['status'] == 'failed'
    assert document['error']['error'] == 'IntegrationError'
    assert document['error']['stage'] == 'geodesic'
    assert document['error']['details'] == {'t': 1.5}


@pytest.mark.parametrize("provenance", ['paper', 'trivial', 'derived:spray_oracle'])
def test_known_provenance(provenance):
    assert check_provenance(provenance) == provenance


@pytest.mark.parametrize("provenance", ['guess', 'derived:', ''])
def test_unknown_provenance(provenance):
    with pytest.raises(ContractViolation):
        check_provenance(provenance)


def test_write_fixture(store):
    document = read_json(store.write_fixture('cz.json', {'cz': 1}, 'derived:uniform_rotation'))
    assert document['provenance'] == 'derived:uniform_rotation'
    assert document['values'] == {'cz': 1}


def test_public_metadata_drops_private_keys():
    assert public_metadata({'kind': 'finsler-geodesic', '_sol': object()}) == {'kind': 'finsler-geodesic'}


def test_knot_csv(store):
    t = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    points = np.column_stack([np.cos(t), np.sin(t), np.zeros(8), np.zeros(8)])
    closed = np.vstack([points, points[:1]])
    path = store.write_table('knot.csv', knot_frame(closed))
    np.testing.assert_array_equal(read_knot_csv(path), points)


def test_knot_csv_requires_columns(tmp_path):
    path = tmp_path / 'bad.csv'
    pd.DataFrame({'x': [1.0], 'y': [0.0]}).to_csv(path, index=False)
    with pytest.raises(ContractViolation):
        read_knot_csv(path)


def test_figure_written_as_json(store):
    path = store.write_figure('figure.json', go.Figure(go.Scatter(x=[0, 1], y=[1, 0])))
    assert json.loads(path.read_text())['data'][0]['type'] == 'scatter'


def test_figure_is_stamped(store):
    path = store.write_figure('figure.json', go.Figure(go.Scatter(x=[0, 1], y=[1, 0])))
    meta = json.loads(path.read_text())['layout']['meta']
    assert meta == {'config_hash': store.config_hash, 'seed': 7}
