"""Trajectory error metrics, trajectory export and SVG map rendering.

Errors are measured on relations, i.e. relative poses between pairs of
timestamps, so a trajectory shifted or rotated as a whole scores the same as
the original. Every relation contributes the SE(2) difference between its
ground-truth and estimated relative pose.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose2, se2_between, wrap_angle
from .datasetio import GroundTruthRelation, fmt
from .errors import EvaluationError, ParseError
from .graph import SlamGraphs


@dataclass
class TrajectoryEstimate:
    timestamps: list[float] = field(default_factory=list)
    poses: list[Pose2] = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = [float(t) for t in self.timestamps]
        self.poses = list(self.poses)
        if len(self.timestamps) != len(self.poses):
            raise EvaluationError("one timestamp per pose is required")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise EvaluationError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    @classmethod
    def from_graph(cls, graph) -> "TrajectoryEstimate":
        ids = sorted(graph.poses)
        return cls([graph.timestamps[i] for i in ids], [graph.poses[i] for i in ids])

    def nearest(self, t: float, tolerance: float) -> int | None:
        """Index of the pose closest in time to ``t``, if within ``tolerance``."""
        ts = self.timestamps
        k = bisect_left(ts, t)
        best = None
        for i in (k - 1, k):
            if 0 <= i < len(ts) and abs(ts[i] - t) <= tolerance:
                if best is None or abs(ts[i] - t) < abs(ts[best] - t):
                    best = i
        return best

    def transformed(self, g: Pose2) -> "TrajectoryEstimate":
        return TrajectoryEstimate(self.timestamps, [g @ p for p in self.poses])


@dataclass
class ErrorSummary:
    translational_mean: float
    translational_std: float
    rotational_mean: float  # degrees
    rotational_std: float  # degrees
    relation_count: int
    skipped: int = 0
    translational: np.ndarray = field(default=None, repr=False, compare=False)
    rotational: np.ndarray = field(default=None, repr=False, compare=False)

    def record(self) -> str:
        """Single-line ``key=value`` form."""
        return " ".join(f"{k}={v}" for k, v in self._items())

    def text(self) -> str:
        items = self._items()
        width = max(len(k) for k, _ in items)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in items)

    def _items(self):
        return [
            ("translational_mean_m", f"{self.translational_mean:.6f}"),
            ("translational_std_m", f"{self.translational_std:.6f}"),
            ("rotational_mean_deg", f"{self.rotational_mean:.6f}"),
            ("rotational_std_deg", f"{self.rotational_std:.6f}"),
            ("relation_count", str(self.relation_count)),
            ("skipped", str(self.skipped)),
        ]


def relation_error(truth: Pose2, estimate: Pose2) -> tuple[float, float]:
    """Translation (m) and absolute rotation (deg) of ``truth^-1 (+) estimate``."""
    d = se2_between(truth, estimate)
    return math.hypot(d.x, d.y), abs(math.degrees(wrap_angle(d.theta)))


def relation_errors(estimate: TrajectoryEstimate, relations, tolerance: float = 0.1) -> ErrorSummary:
    """Mean and population std of relation errors over all matchable relations."""
    trans, rot, skipped = [], [], 0
    for rel in relations:
        i = estimate.nearest(rel.t1, tolerance)
        j = estimate.nearest(rel.t2, tolerance)
        if i is None or j is None:
            skipped += 1
            continue
        est_rel = se2_between(estimate.poses[i], estimate.poses[j])
        t, r = relation_error(rel.relative_pose, est_rel)
        trans.append(t)
        rot.append(r)
    if not trans:
        raise EvaluationError(f"no relation could be matched to the trajectory ({skipped} skipped)")
    t, r = np.array(trans), np.array(rot)
    return ErrorSummary(float(t.mean()), float(t.std()), float(r.mean()), float(r.std()), len(t), skipped, t, r)


def relations_from_trajectory(estimate: TrajectoryEstimate, pairs) -> list[GroundTruthRelation]:
    """Relations between index pairs of a (ground-truth) trajectory."""
    out = []
    for i, j in pairs:
        out.append(GroundTruthRelation(estimate.timestamps[i], estimate.timestamps[j],
                                       se2_between(estimate.poses[i], estimate.poses[j])))
    return out


# --------------------------------------------------------------------------
# trajectory files
# --------------------------------------------------------------------------


def export_trajectory(estimate: TrajectoryEstimate, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for t, p in estimate:
            fh.write(f"{fmt(t)} {fmt(p.x)} {fmt(p.y)} {fmt(p.theta)}\n")
    return path


def parse_trajectory(path) -> TrajectoryEstimate:
    path = Path(path)
    ts, poses = [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            toks = raw.split()
            if not toks or toks[0].startswith("#"):
                continue
            if len(toks) != 4:
                raise ParseError(f"expected 4 columns 't x y theta', found {len(toks)}", path, lineno)
            try:
                t, x, y, th = (float(v) for v in toks)
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            ts.append(t)
            poses.append(Pose2(x, y, th))
    try:
        return TrajectoryEstimate(ts, poses)
    except EvaluationError as exc:
        raise ParseError(exc.args[0], path) from None


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------


@dataclass
class MapStyle:
    width: int = 800
    margin: int = 20
    background: str = "#ffffff"
    landmark_color: str = "#444444"
    ll_color: str = "#d62728"
    trajectory_color: str = "#1f77b4"
    truth_color: str = "#2ca02c"
    loop_color: str = "#ff7f0e"
    landmark_width: float = 2.0
    trajectory_width: float = 1.0


def _collect_extent(graphs: SlamGraphs, estimate, ground_truth) -> np.ndarray | None:
    pts = []
    for lm in graphs.landmark_graph.landmarks.values():
        pts.extend(lm.endpoints)
    for traj in (estimate, ground_truth):
        if traj is not None:
            pts.extend((p.x, p.y) for p in traj.poses)
    if not pts:
        return None
    a = np.asarray(pts, dtype=float)
    return np.array([a.min(axis=0), a.max(axis=0)])


def render_map(graphs: SlamGraphs, estimate: TrajectoryEstimate | None, path, style: MapStyle | None = None,
               ground_truth: TrajectoryEstimate | None = None) -> Path:
    """Write an SVG of landmarks, trajectory, loop edges and optional ground truth.

    Landmarks involved in a landmark-landmark edge get the ``ll`` class and
    colour. Output depends only on the inputs.
    """
    s = style or MapStyle()
    ext = _collect_extent(graphs, estimate, ground_truth)
    inner = s.width - 2 * s.margin
    if ext is None:
        scale, lo, height = 1.0, np.zeros(2), s.width
    else:
        lo, hi = ext
        span = np.maximum(hi - lo, 1e-9)
        scale = inner / float(max(span))
        height = int(math.ceil(span[1] * scale)) + 2 * s.margin

    def xy(x, y):
        return f"{s.margin + (x - lo[0]) * scale:.3f}", f"{height - s.margin - (y - lo[1]) * scale:.3f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{s.width}" height="{height}" '
        f'viewBox="0 0 {s.width} {height}">',
        f'<rect class="canvas" x="0" y="0" width="{s.width}" height="{height}" fill="{s.background}"/>',
    ]
    lg = graphs.landmark_graph
    ll_ids = lg.ll_landmark_ids()
    for lid in sorted(lg.landmarks):
        (ax, ay), (bx, by) = lg.landmarks[lid].endpoints
        x1, y1 = xy(ax, ay)
        x2, y2 = xy(bx, by)
        ll = lid in ll_ids
        out.append(f'<line class="landmark{" ll" if ll else ""}" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
                   f'stroke="{s.ll_color if ll else s.landmark_color}" stroke-width="{s.landmark_width}"/>')
    if ground_truth is not None and len(ground_truth):
        pts = " ".join(",".join(xy(p.x, p.y)) for p in ground_truth.poses)
        out.append(f'<polyline class="ground-truth" points="{pts}" fill="none" stroke="{s.truth_color}" '
                   f'stroke-width="{s.trajectory_width}" stroke-dasharray="4 2"/>')
    if estimate is not None and len(estimate):
        pts = " ".join(",".join(xy(p.x, p.y)) for p in estimate.poses)
        out.append(f'<polyline class="trajectory" points="{pts}" fill="none" stroke="{s.trajectory_color}" '
                   f'stroke-width="{s.trajectory_width}"/>')
    pg = graphs.pose_graph
    for e in pg.loop_edges():
        a, b = pg.poses.get(e.from_id), pg.poses.get(e.to_id)
        if a is None or b is None:
            continue
        (x1, y1), (x2, y2) = xy(a.x, a.y), xy(b.x, b.y)
        out.append(f'<path class="loop" d="M {x1} {y1} L {x2} {y2}" stroke="{s.loop_color}" '
                   f'stroke-width="{s.trajectory_width}" fill="none"/>')
    out.append("</svg>")
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
    return path
