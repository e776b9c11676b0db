"""Raster figures (PNG) of maps and relation errors.

Figures are built on the Agg canvas directly, without pyplot, so rendering
needs no display and leaves no global figure state behind.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.collections import LineCollection
from matplotlib.figure import Figure

from .evaluation import ErrorSummary, MapStyle, TrajectoryEstimate
from .graph import SlamGraphs

_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=fig.dpi, metadata=_PNG_META)
    return path


def render_map_png(graphs: SlamGraphs, estimate: TrajectoryEstimate | None, path,
                   ground_truth: TrajectoryEstimate | None = None, style: MapStyle | None = None,
                   title: str | None = None) -> Path:
    """PNG counterpart of :func:`somaslam.evaluation.render_map`."""
    s = style or MapStyle()
    fig = Figure(figsize=(7, 7), dpi=100)
    ax = fig.add_subplot(1, 1, 1)
    lg = graphs.landmark_graph
    ll_ids = lg.ll_landmark_ids()
    plain = [lg.landmarks[i].endpoints for i in sorted(lg.landmarks) if i not in ll_ids]
    mw = [lg.landmarks[i].endpoints for i in sorted(lg.landmarks) if i in ll_ids]
    if plain:
        ax.add_collection(LineCollection(plain, colors=s.landmark_color, linewidths=s.landmark_width,
                                         label="landmark"))
    if mw:
        ax.add_collection(LineCollection(mw, colors=s.ll_color, linewidths=s.landmark_width,
                                         label="landmark (LL edge)"))
    if ground_truth is not None and len(ground_truth):
        g = np.array([[p.x, p.y] for p in ground_truth.poses])
        ax.plot(g[:, 0], g[:, 1], "--", color=s.truth_color, lw=s.trajectory_width, label="ground truth")
    if estimate is not None and len(estimate):
        e = np.array([[p.x, p.y] for p in estimate.poses])
        ax.plot(e[:, 0], e[:, 1], color=s.trajectory_color, lw=s.trajectory_width, label="estimate")
    pg = graphs.pose_graph
    loops = [((pg.poses[e.from_id].x, pg.poses[e.from_id].y), (pg.poses[e.to_id].x, pg.poses[e.to_id].y))
             for e in pg.loop_edges() if e.from_id in pg.poses and e.to_id in pg.poses]
    if loops:
        ax.add_collection(LineCollection(loops, colors=s.loop_color, linewidths=s.trajectory_width,
                                         label="loop closure"))
    ax.autoscale_view()
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_relation_errors(summary: ErrorSummary, path, title: str | None = None) -> Path:
    """Histograms of translational and rotational relation errors."""
    fig = Figure(figsize=(9, 3.5), dpi=100)
    ax_t, ax_r = fig.subplots(1, 2)
    t = summary.translational if summary.translational is not None else np.zeros(0)
    r = summary.rotational if summary.rotational is not None else np.zeros(0)
    ax_t.hist(t, bins=30, color="#1f77b4")
    ax_t.axvline(summary.translational_mean, color="k", ls="--", lw=1)
    ax_t.set_xlabel("translational error [m]")
    ax_t.set_ylabel("relations")
    ax_r.hist(r, bins=30, color="#ff7f0e")
    ax_r.axvline(summary.rotational_mean, color="k", ls="--", lw=1)
    ax_r.set_xlabel("rotational error [deg]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
