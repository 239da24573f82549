import numpy as np
import pandas as pd
import pytest

from src.visualization import LabVisualization


@pytest.fixture
def viz():
    return LabVisualization()


def test_profile_chart(viz):
    s = np.linspace(0.0, 1.5, 20)
    frame = pd.DataFrame({'s': s, 'rho': np.cos(s), 'rhodot': -np.sin(s), 'K': np.ones_like(s)})
    fig = viz.create_profile_chart(frame, 1.0, 1.0)
    assert [trace.name for trace in fig.data] == ['rho(s)', 'R cos s', 'K(s)']
    assert 'R=1.0' in fig.layout.title.text


def test_return_map_chart_with_limits(viz):
    sweep = pd.DataFrame({'phi': [0.1, 0.5, 1.0], 'T_phi': [3.1, 3.0, 2.9], 'theta_adv': [6.4, 6.0, 3.3]})
    limits = {'closed_form_theta_adv_at_0': 6.41, 'closed_form_theta_adv_at_phi0': np.pi}
    fig = viz.create_return_map_chart(sweep, limits)
    assert len(fig.data) == 2
    assert list(fig.data[1].y) == [6.41, np.pi]


def test_return_map_chart_without_data(viz):
    fig = viz.create_return_map_chart(pd.DataFrame(columns=['phi', 'T_phi', 'theta_adv']))
    assert len(fig.data) == 0
    assert fig.layout.annotations[0].text == 'No returns computed.'


def test_geodesic_chart(viz):
    t = np.linspace(0.0, 2.0 * np.pi, 50)
    frame = pd.DataFrame({'x': np.cos(t), 'y': np.sin(t), 'z': np.zeros_like(t)})
    fig = viz.create_geodesic_chart(frame, title='equator')
    assert fig.data[0].type == 'scatter3d'
    assert fig.layout.title.text == 'equator'


def test_period_histogram(viz):
    edges = np.linspace(0.0, 20.0, 41)
    counts = np.zeros(40, dtype=int)
    counts[6] = 9
    fig = viz.create_period_histogram(counts.tolist(), edges.tolist(), 0.05)
    assert sum(fig.data[0].y) == 9
    assert fig.layout.shapes[0].x0 == pytest.approx(np.pi - 0.05)


def test_empty_inputs_give_placeholders(viz):
    fig = viz.create_period_histogram([0, 0, 0], [0.0, 1.0, 2.0, 3.0], 0.05)
    assert len(fig.data) == 0
    assert fig.layout.annotations[0].text == 'No closed orbits below the cap.'
    assert fig.layout.xaxis.visible is False

    fig = viz.create_geodesic_chart(pd.DataFrame(columns=['x', 'y', 'z']), title='equator')
    assert fig.layout.title.text == 'equator'
    assert fig.layout.annotations[0].text == 'Empty trajectory.'
