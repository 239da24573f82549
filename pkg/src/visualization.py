from typing import Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots


class LabVisualization:
    """Plot-ready figures for the experiment artifacts; nothing is rendered here."""

    def create_profile_chart(self, profile: pd.DataFrame, R: float, K_max: float) -> go.Figure:
        """Meridian profile rho(s) against the comparison R cos s, with curvature below."""
        fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08)
        fig.add_trace(go.Scatter(x=profile['s'], y=profile['rho'], name='rho(s)', line=dict(color='red', width=2)),
                      row=1, col=1)
        fig.add_trace(go.Scatter(
            x=profile['s'],
            y=R * np.cos(profile['s']),
            name='R cos s',
            line=dict(color='blue', width=1, dash='dash'),
        ), row=1, col=1)
        fig.add_trace(go.Scatter(x=profile['s'], y=profile['K'], name='K(s)', line=dict(color='green', width=2)),
                      row=2, col=1)
        fig.add_hline(y=K_max, line=dict(color='gray', dash='dot'), row=2, col=1)
        fig.update_layout(
            title=f'Pinched profile (R={R}, K_max={K_max})',
            xaxis2_title='s',
            hovermode='x unified',
            showlegend=True,
        )
        return fig

    def create_return_map_chart(self, sweep: pd.DataFrame, limits: Optional[dict] = None) -> go.Figure:
        """theta_adv(phi) against 2 pi, with the closed-form endpoint limits when given."""
        if sweep.empty:
            return self.create_placeholder_chart('Equator return map', 'No returns computed.')
        fig = go.Figure()
        fig.add_trace(go.Scatter(
            x=sweep['phi'],
            y=sweep['theta_adv'],
            name='theta_adv',
            mode='lines+markers',
            line=dict(color='red', width=2),
        ))
        fig.add_hline(y=2 * np.pi, line=dict(color='black', dash='dash'), annotation_text='2 pi')
        if limits:
            fig.add_trace(go.Scatter(
                x=[sweep['phi'].min(), sweep['phi'].max()],
                y=[limits['closed_form_theta_adv_at_0'], limits['closed_form_theta_adv_at_phi0']],
                name='limits',
                mode='markers',
                marker=dict(color='blue', size=10, symbol='x'),
            ))
        fig.update_layout(title='Equator return map', xaxis_title='phi', yaxis_title='theta advance')
        return fig

    def create_geodesic_chart(self, trajectory: pd.DataFrame, title: str = 'Closed geodesic') -> go.Figure:
        if trajectory.empty:
            return self.create_placeholder_chart(title, 'Empty trajectory.')
        fig = go.Figure()
        fig.add_trace(go.Scatter3d(
            x=trajectory['x'],
            y=trajectory['y'],
            z=trajectory['z'],
            mode='lines',
            line=dict(color='red', width=4),
            name='geodesic',
        ))
        fig.update_layout(title=title, scene=dict(aspectmode='data'))
        return fig

    def create_period_histogram(self, counts: Sequence[int], edges: Sequence[float], eps_tilde: float) -> go.Figure:
        if sum(counts) == 0:
            return self.create_placeholder_chart('Detected prime periods', 'No closed orbits below the cap.')
        edges = np.asarray(edges)
        fig = go.Figure()
        fig.add_trace(go.Bar(
            x=0.5 * (edges[1:] + edges[:-1]),
            y=list(counts),
            width=np.diff(edges),
            name='prime periods',
            marker_color='steelblue',
        ))
        fig.add_vrect(x0=np.pi - eps_tilde, x1=np.pi + eps_tilde, fillcolor='green', opacity=0.2, line_width=0)
        fig.update_layout(title='Detected prime periods', xaxis_title='period', yaxis_title='count',
                          showlegend=False)
        return fig

    def create_placeholder_chart(self, title: str, reason: str) -> go.Figure:
        """Axis-free figure carrying only ``reason``, for runs that produced nothing to plot."""
        fig = go.Figure()
        fig.add_annotation(text=reason, xref="paper", yref="paper", x=0.5, y=0.5, showarrow=False,
                           font=dict(size=14, color='gray'))
        fig.update_layout(title=title, showlegend=False, xaxis=dict(visible=False), yaxis=dict(visible=False))
        return fig

