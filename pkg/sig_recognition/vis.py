from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd
import plotly.graph_objects as go
from numpy.typing import NDArray
from plotly.subplots import make_subplots

from .sampler import GridMap

DEFAULT_COLORS = ["red", "blue", "green", "orange", "purple", "brown", "black"]


def plot_trajectories(
    trajs: Sequence[Tuple[NDArray, str]],
    grid_map: Optional[GridMap] = None,
    colors: Union[List[str], str, None] = None,
):
    """Draw 2-D trajectories coloured by goal, over the blocked cells of `grid_map`."""
    goals = list(dict.fromkeys(goal for _, goal in trajs))
    if colors is None:
        colors = DEFAULT_COLORS
    if isinstance(colors, str):
        colors = [colors]
    colors = [colors[i % len(colors)] for i in range(len(goals))]

    figure = go.Figure()
    if grid_map is not None:
        figure.add_trace(
            go.Heatmap(
                z=(~grid_map.traversable).astype(int),
                colorscale=[[0, "white"], [1, "grey"]],
                showscale=False,
                hoverinfo="skip",
            )
        )

    shown = set()
    for points, goal in trajs:
        color = colors[goals.index(goal)]
        figure.add_trace(
            go.Scatter(
                x=points[:, 0],
                y=points[:, 1],
                mode="lines+markers",
                name=str(goal),
                legendgroup=str(goal),
                showlegend=goal not in shown,
                marker={"color": color, "size": 4},
            )
        )
        shown.add(goal)

    figure.update_yaxes(scaleanchor="x", scaleratio=1, autorange="reversed")
    figure.update_layout(xaxis_showgrid=False, yaxis_showgrid=False)
    return figure


def plot_grid_search(table: pd.DataFrame, value: str = "ppv"):
    """One merge x prune heatmap of `value` per K."""
    ks = sorted(table["n_trajectories"].unique())
    main_figure = make_subplots(
        rows=1,
        cols=len(ks),
        shared_yaxes=True,
        subplot_titles=[f"K = {k}" for k in ks],
    )
    zmin, zmax = table[value].min(), table[value].max()
    for i, k in enumerate(ks):
        pivot = table[table["n_trajectories"] == k].pivot_table(
            index="eps_prune", columns="eps_merge", values=value, aggfunc="mean"
        )
        main_figure.add_trace(
            go.Heatmap(
                z=pivot.values,
                x=pivot.columns.tolist(),
                y=pivot.index.tolist(),
                zmin=zmin,
                zmax=zmax,
                colorscale="Viridis",
                showscale=i == len(ks) - 1,
            ),
            row=1,
            col=i + 1,
        )
        main_figure.update_xaxes(title_text="merge threshold", row=1, col=i + 1)

    main_figure.update_yaxes(title_text="prune threshold", row=1, col=1)
    main_figure.update_layout(height=400, width=350 * len(ks))
    return main_figure
