"""Front-end: multiscans, line segments and pose-landmark constraints.

Sparse scans are pooled over a few consecutive poses into a *multiscan*
expressed in the frame of its first (anchor) pose. Points are kept ordered
per beam, so every beam contributes one time-ordered trace; each trace is
cut into straight runs with split-and-merge and fitted by total least
squares. Segments are then matched against the existing landmarks and turned
into pose-landmark edges.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LineLandmark,
    LinePolar,
    Pose2,
    PoseLandmarkEdge,
    line_angle_difference,
    line_from_frame,
    make_landmark,
    se2_between,
)
from .datasetio import SparseScan
from .errors import InvalidArgumentError
from .graph import Graph


@dataclass
class FrontendParams:
    window: int = 10
    min_points: int = 40
    stride: int = 0  # poses dropped after each multiscan; 0 means window // 2
    dense_points: int = 30  # scans with this many valid points on average are split per scan
    split_distance: float = 0.05
    merge_angle: float = 0.05
    merge_distance: float = 0.05
    min_segment_points: int = 6
    min_segment_length: float = 0.3
    max_gap: float = 0.6
    gate_theta: float = 0.15
    gate_rho: float = 0.3
    min_overlap: float = 0.0
    sigma_rho: float = 0.05
    sigma_alpha: float = 0.02

    def information(self) -> np.ndarray:
        return np.diag([1.0 / self.sigma_rho**2, 1.0 / self.sigma_alpha**2])

    def effective_stride(self) -> int:
        return self.stride if self.stride > 0 else max(1, self.window // 2)


@dataclass
class Multiscan:
    anchor_pose_id: int
    points: np.ndarray
    source_pose_ids: tuple[int, ...]
    traces: np.ndarray = None  # beam index per point; points of one trace are in time order
    origins: np.ndarray = None  # sensor position (anchor frame) each point was seen from
    scan_index: np.ndarray = None  # position of the source scan within source_pose_ids

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.traces is None:
            self.traces = np.zeros(len(self.points), dtype=int)
        if self.origins is None:
            self.origins = np.zeros_like(self.points)
        if self.scan_index is None:
            self.scan_index = np.zeros(len(self.points), dtype=int)


@dataclass(frozen=True)
class LineSegment:
    line: LinePolar
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    inlier_count: int
    residual_rms: float
    points: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def length(self) -> float:
        (ax, ay), (bx, by) = self.endpoints
        return math.hypot(bx - ax, by - ay)

    def endpoint_array(self) -> np.ndarray:
        return np.array(self.endpoints, dtype=float)


# --------------------------------------------------------------------------
# multiscans
# --------------------------------------------------------------------------


def accumulate_multiscan(poses, scans, window: int, pose_ids=None) -> Multiscan:
    """Pool the last ``window`` scans into the frame of the oldest pose used.

    ``poses`` are the pose estimates at which ``scans`` were taken.
    """
    if window < 1 or not scans:
        raise InvalidArgumentError("multiscan needs a window of at least one scan", module="frontend")
    if len(poses) != len(scans):
        raise InvalidArgumentError("one pose per scan is required", module="frontend")
    pose_ids = list(range(len(scans))) if pose_ids is None else list(pose_ids)
    poses, scans, pose_ids = list(poses)[-window:], list(scans)[-window:], pose_ids[-window:]
    anchor = poses[0]
    pts, traces, origins, index = [], [], [], []
    for k, (pose, scan) in enumerate(zip(poses, scans)):
        rel = se2_between(anchor, pose)
        local = scan.points(valid_only=False)
        ok = np.asarray(scan.valid, dtype=bool)
        pts.append(rel.transform_points(local[ok]))
        traces.append(np.flatnonzero(ok))
        origins.append(np.tile([rel.x, rel.y], (int(ok.sum()), 1)))
        index.append(np.full(int(ok.sum()), k))
    points = np.concatenate(pts)
    trace = np.concatenate(traces)
    order = np.argsort(trace, kind="stable")
    return Multiscan(pose_ids[0], points[order], tuple(pose_ids), trace[order], np.concatenate(origins)[order],
                     np.concatenate(index)[order])


# --------------------------------------------------------------------------
# segment extraction
# --------------------------------------------------------------------------


def fit_line(points: np.ndarray) -> tuple[LinePolar, float]:
    """Total-least-squares line through ``points`` and its RMS residual."""
    c = points.mean(axis=0)
    d = points - c
    cov = d.T @ d
    w, v = np.linalg.eigh(cov)
    n = v[:, 0]
    theta = math.atan2(n[1], n[0])
    line = LinePolar(float(c @ n), theta)
    rms = float(np.sqrt(np.mean(line.signed_distance(points) ** 2)))
    return line, rms


def make_segment(points: np.ndarray) -> LineSegment:
    line, rms = fit_line(points)
    t = points @ line.direction
    ends = line.project(points[[int(np.argmin(t)), int(np.argmax(t))]])
    return LineSegment(line, ((ends[0, 0], ends[0, 1]), (ends[1, 0], ends[1, 1])), len(points), rms, points)


def _split(points: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Index ranges ``[i, j]`` (inclusive) of straight runs, in order."""
    out = []
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            out.append((i, j))
            continue
        a, b = points[i], points[j]
        ab = b - a
        norm = math.hypot(ab[0], ab[1])
        seg = points[i + 1 : j]
        if norm < 1e-12:
            dist = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            dist = np.abs(ab[0] * (seg[:, 1] - a[1]) - ab[1] * (seg[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > threshold:
            k += i + 1
            # push right first so runs come out in order
            stack.append((k, j))
            stack.append((i, k))
        else:
            out.append((i, j))
    return out


def _trim(run: np.ndarray, floor: float = 0.01) -> np.ndarray:
    """Drop run endpoints lying off the line through the interior points.

    Split points are shared by neighbouring runs, so near a corner a run often
    ends on a point of the other wall.
    """
    while len(run) > 4:
        line, rms = fit_line(run[1:-1])
        r = np.abs(line.signed_distance(run[[0, -1]]))
        lim = 3.0 * rms + floor
        if r.max() <= lim:
            break
        run = run[1:] if r[0] >= r[1] else run[:-1]
    return run


def _runs(points: np.ndarray, max_gap: float) -> list[np.ndarray]:
    if len(points) == 0:
        return []
    gaps = np.hypot(*np.diff(points, axis=0).T) > max_gap
    cuts = np.flatnonzero(gaps) + 1
    return np.split(points, cuts)


def _unroll(points: np.ndarray) -> np.ndarray:
    """Start a closed (e.g. 360 degree) trace after its widest gap instead of mid-wall."""
    if len(points) < 3:
        return points
    gaps = np.hypot(*np.diff(points, axis=0).T)
    k = int(np.argmax(gaps))
    if np.hypot(*(points[0] - points[-1])) >= gaps[k]:
        return points
    return np.concatenate([points[k + 1:], points[: k + 1]])


def _collinear(a: LineSegment, b: LineSegment, params: FrontendParams) -> bool:
    if line_angle_difference(a.line.theta, b.line.theta) >= params.merge_angle:
        return False
    if np.abs(b.line.signed_distance(a.endpoint_array())).max() >= params.merge_distance:
        return False
    if np.abs(a.line.signed_distance(b.endpoint_array())).max() >= params.merge_distance:
        return False
    # adjacent or overlapping along the shared direction
    d = a.line.direction
    ta, tb = np.sort(a.endpoint_array() @ d), np.sort(b.endpoint_array() @ d)
    return max(ta[0], tb[0]) - min(ta[1], tb[1]) <= params.max_gap


def _merge(segments: list[LineSegment], params: FrontendParams) -> list[LineSegment]:
    segs = list(segments)
    merged = True
    while merged:
        merged = False
        for i in range(len(segs)):
            for j in range(i + 1, len(segs)):
                if _collinear(segs[i], segs[j], params):
                    cand = make_segment(np.concatenate([segs[i].points, segs[j].points]))
                    if np.abs(cand.line.signed_distance(cand.points)).max() <= 2.0 * params.split_distance:
                        segs[i] = cand
                        del segs[j]
                        merged = True
                        break
            if merged:
                break
    return segs


def extract_segments(multiscan, params: FrontendParams | None = None) -> list[LineSegment]:
    """Split-and-merge line extraction over each ordered trace of a multiscan.

    Sparse scans are traced per beam across poses; dense scans (see
    ``dense_points``) are traced per scan in bearing order. Accepts a
    :class:`Multiscan` or an ordered ``(N, 2)`` point array.
    """
    params = params or FrontendParams()
    if not isinstance(multiscan, Multiscan):
        multiscan = Multiscan(-1, np.asarray(multiscan, dtype=float), ())
    pts = multiscan.points
    n_scans = max(1, len(np.unique(multiscan.scan_index)))
    dense = len(pts) / n_scans >= params.dense_points
    if dense:
        key = multiscan.scan_index
        order = np.lexsort((multiscan.traces, key))
        pts, traces = pts[order], key[order]
    else:
        traces = multiscan.traces
    pieces = []
    for tr in np.unique(traces):
        trace = _unroll(pts[traces == tr]) if dense else pts[traces == tr]
        for run in _runs(trace, params.max_gap):
            for i, j in _split(run, params.split_distance):
                if j - i + 1 >= 2:
                    pieces.append(make_segment(_trim(run[i : j + 1])))
    segs = _merge(pieces, params)
    return [
        s for s in segs
        if s.inlier_count >= params.min_segment_points and s.length >= params.min_segment_length
    ]


# --------------------------------------------------------------------------
# association and landmark updates
# --------------------------------------------------------------------------


def segment_to_global(segment: LineSegment, pose: Pose2) -> tuple[LinePolar, np.ndarray]:
    return line_from_frame(pose, segment.line), pose.transform_points(segment.endpoint_array())


def association_distance(line: LinePolar, ends: np.ndarray, landmark: LineLandmark,
                         params: FrontendParams) -> float | None:
    """Normalised gate distance to ``landmark``, or ``None`` if a gate fails."""
    dtheta = line_angle_difference(line.theta, landmark.theta)
    if dtheta >= params.gate_theta:
        return None
    dist = abs(float(landmark.line.signed_distance(ends.mean(axis=0))[0]))
    if dist >= params.gate_rho:
        return None
    d = landmark.line.direction
    ts = np.sort(ends @ d)
    tl = np.sort(landmark.endpoint_array() @ d)
    if min(ts[1], tl[1]) - max(ts[0], tl[0]) <= params.min_overlap:
        return None
    return math.hypot(dtheta / params.gate_theta, dist / params.gate_rho)


def associate_segment(segment: LineSegment, landmarks, current_pose: Pose2,
                      params: FrontendParams | None = None) -> int | None:
    """Id of the best gating landmark for ``segment`` (given in ``current_pose``'s frame)."""
    params = params or FrontendParams()
    line, ends = segment_to_global(segment, current_pose)
    items = landmarks.values() if isinstance(landmarks, dict) else landmarks
    best = None
    for lm in items:
        score = association_distance(line, ends, lm, params)
        if score is not None and (best is None or (score, lm.id) < best):
            best = (score, lm.id)
    return None if best is None else best[1]


def upsert_landmark(segment: LineSegment, association: int | None, graph: Graph,
                    pose_id: int, params: FrontendParams | None = None) -> tuple[int, PoseLandmarkEdge]:
    """Create or extend a landmark and attach a pose-landmark edge from ``pose_id``."""
    params = params or FrontendParams()
    pose = graph.poses[pose_id]
    line, ends = segment_to_global(segment, pose)
    if association is None:
        lid = graph.next_landmark_id
        graph.next_landmark_id += 1
        graph.landmarks[lid] = make_landmark(lid, line, ends, support=1)
    else:
        lid = association
        lm = graph.landmarks[lid]
        d = lm.line.direction
        cand = np.concatenate([lm.line.project(lm.endpoint_array()), lm.line.project(ends)])
        t = cand @ d
        new_ends = cand[[int(np.argmin(t)), int(np.argmax(t))]]
        if t.min() >= (lm.endpoint_array() @ d).min() and t.max() <= (lm.endpoint_array() @ d).max():
            new_ends = lm.endpoint_array()
        graph.landmarks[lid] = make_landmark(lid, lm.line, new_ends, support=lm.support + 1)
    edge = PoseLandmarkEdge(pose_id, lid, segment.line, params.information())
    graph.pl_edges.append(edge)
    return lid, edge


class Frontend:
    """Stateful scan buffer emitting multiscans on a sliding window."""

    def __init__(self, params: FrontendParams | None = None):
        self.params = params or FrontendParams()
        self.buffer: deque[tuple[int, SparseScan]] = deque()
        self._points = 0

    def add_scan(self, pose_id: int, scan: SparseScan, graph: Graph) -> Multiscan | None:
        self.buffer.append((pose_id, scan))
        self._points += int(sum(scan.valid))
        p = self.params
        if len(self.buffer) < p.window and self._points < p.min_points:
            return None
        ids = [pid for pid, _ in self.buffer]
        ms = accumulate_multiscan([graph.poses[i] for i in ids], [s for _, s in self.buffer], len(ids), ids)
        for _ in range(min(p.effective_stride(), len(self.buffer))):
            _, s = self.buffer.popleft()
            self._points -= int(sum(s.valid))
        return ms

    def process(self, multiscan: Multiscan, graph: Graph) -> list[tuple[int, bool]]:
        """Extract, associate and insert; returns ``(landmark_id, was_associated)`` per segment."""
        out = []
        pose = graph.poses[multiscan.anchor_pose_id]
        for seg in extract_segments(multiscan, self.params):
            assoc = associate_segment(seg, graph.landmarks, pose, self.params)
            lid, _ = upsert_landmark(seg, assoc, graph, multiscan.anchor_pose_id, self.params)
            out.append((lid, assoc is not None))
        return out
