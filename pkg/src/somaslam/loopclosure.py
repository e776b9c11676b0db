"""Pose-graph back-end: odometry from the landmark graph and loop closing.

Loop candidates are found by correlative scan-to-map matching. Each run of
``segment_length`` poses is rasterized into its own occupancy grid, expressed
in the frame of the segment's first pose, so accumulated drift does not smear
the map. A later pose that comes back within the gating radius of a segment
is matched against that segment's grid; good matches become loop edges.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose2, PosePoseEdge, se2_between, se2_compose
from .errors import InvalidArgumentError
from .graph import Graph
from .optimizer import LMOptions, LMReport, lm_optimize

log = logging.getLogger(__name__)

# likelihoods are stored as integers so that candidate scores are exact sums
_LEVELS = 10000
# variance (m^2) given to match directions the scan cannot pin down
UNCONSTRAINED_VARIANCE = 1e6


@dataclass
class OccupancyGrid:
    """Log-odds grid; cell ``(i, j)`` covers ``origin + [i, i+1) x [j, j+1) * resolution``.

    ``origin`` is always a multiple of ``resolution``, so ``index_offset`` is
    the global cell index of ``cells[0, 0]``.
    """

    origin: np.ndarray
    resolution: float
    cells: np.ndarray
    clamp: float = 10.0

    def __post_init__(self):
        if not self.resolution > 0:
            raise InvalidArgumentError("grid resolution must be positive", module="loopclosure")
        self.origin = np.asarray(self.origin, dtype=float)
        self.cells = np.asarray(self.cells, dtype=float)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def index_offset(self) -> np.ndarray:
        return np.round(self.origin / self.resolution).astype(np.int64)

    def is_empty(self) -> bool:
        return self.cells.size == 0

    def cell_of(self, points) -> np.ndarray:
        """Indices into ``cells`` (may be out of range) for world points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.floor(pts / self.resolution).astype(np.int64) - self.index_offset

    def log_odds_at(self, points) -> np.ndarray:
        idx = self.cell_of(points)
        out = np.zeros(len(idx))
        nx, ny = self.shape
        ok = (idx[:, 0] >= 0) & (idx[:, 0] < nx) & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
        out[ok] = self.cells[idx[ok, 0], idx[ok, 1]]
        return out

    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.cells))


@dataclass
class GridParams:
    resolution: float = 0.05
    hit: float = 0.9
    miss: float = -0.4
    clamp: float = 10.0
    blur_radius: int = 2  # cells; likelihood is spread to neighbours with a Gaussian falloff
    blur_sigma: float = 0.05  # meters

    def validate(self) -> None:
        if not self.resolution > 0:
            raise InvalidArgumentError("grid resolution must be positive", module="loopclosure")
        if not self.hit > 0 or not self.miss <= 0 or not self.clamp > 0:
            raise InvalidArgumentError("need hit > 0, miss <= 0 and clamp > 0", module="loopclosure")
        if self.blur_radius < 0 or not self.blur_sigma > 0:
            raise InvalidArgumentError("blur radius must be >= 0 and sigma > 0", module="loopclosure")


def _ray_cells(start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Cells strictly before ``end`` on the DDA line from ``start`` to ``end``."""
    d = end - start
    n = int(np.abs(d).max())
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64)
    t = np.arange(n) / n
    return np.floor(start + 0.5 + t[:, None] * d).astype(np.int64)


def render_points(points, origins, resolution: float = 0.05, hit: float = 0.9,
                  miss: float = -0.4, clamp: float = 10.0) -> OccupancyGrid:
    """Rasterize beam endpoints ``points`` seen from sensor positions ``origins``."""
    if not resolution > 0:
        raise InvalidArgumentError("grid resolution must be positive", module="loopclosure")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    org = np.asarray(origins, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return OccupancyGrid(np.zeros(2), resolution, np.zeros((0, 0)), clamp)
    end = np.floor(pts / resolution).astype(np.int64)
    start = np.floor(org / resolution).astype(np.int64)
    lo = np.minimum(end.min(axis=0), start.min(axis=0))
    hi = np.maximum(end.max(axis=0), start.max(axis=0))
    cells = np.zeros(tuple(hi - lo + 1), dtype=float)
    free = [_ray_cells(s, e) for s, e in zip(start, end)]
    if free:
        f = np.concatenate(free) - lo
        np.add.at(cells, (f[:, 0], f[:, 1]), miss)
    e = end - lo
    np.add.at(cells, (e[:, 0], e[:, 1]), hit)
    np.clip(cells, -clamp, clamp, out=cells)
    return OccupancyGrid(lo * resolution, resolution, cells, clamp)


def render_grid(multiscans, poses, resolution: float = 0.05, reference: Pose2 | None = None,
                params: GridParams | None = None) -> OccupancyGrid:
    """Occupancy grid of ``multiscans`` placed at ``poses[anchor_pose_id]``.

    With ``reference`` the grid is expressed in that pose's frame instead of
    the world frame.
    """
    p = params or GridParams(resolution=resolution)
    pts, org = [], []
    for ms in multiscans:
        pose = poses[ms.anchor_pose_id]
        if reference is not None:
            pose = se2_between(reference, pose)
        pts.append(pose.transform_points(ms.points))
        org.append(pose.transform_points(ms.origins))
    if not pts:
        return OccupancyGrid(np.zeros(2), p.resolution, np.zeros((0, 0)), p.clamp)
    return render_points(np.concatenate(pts), np.concatenate(org), p.resolution, p.hit, p.miss, p.clamp)


def likelihood_field(grid: OccupancyGrid, blur_radius: int = 0, blur_sigma: float = 0.05) -> np.ndarray:
    """Occupancy probability of occupied cells, 0 for free and unknown.

    With a positive ``blur_radius`` each cell takes the max over its
    neighbourhood of the neighbour's value times a Gaussian distance falloff.
    """
    field_ = np.where(grid.cells > 0, grid.probabilities(), 0.0) if grid.cells.size else grid.cells.copy()
    if blur_radius <= 0 or field_.size == 0:
        return field_
    r = blur_radius
    padded = np.pad(field_, r)
    out = field_.copy()
    nx, ny = field_.shape
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if di == 0 and dj == 0:
                continue
            w = math.exp(-((di * di + dj * dj) * grid.resolution**2) / (2 * blur_sigma**2))
            shifted = padded[r + di : r + di + nx, r + dj : r + dj + ny]
            np.maximum(out, w * shifted, out=out)
    return out


def write_pgm(grid: OccupancyGrid, path) -> Path:
    """Dump the grid as a binary PGM plus ``<path>.txt`` with origin and resolution.

    White is free, black occupied, mid grey unknown. Row 0 of the image is the
    top (largest y).
    """
    path = Path(path)
    nx, ny = grid.shape
    if grid.cells.size:
        img = np.where(grid.cells == 0, 128, np.round(255 * (1 - grid.probabilities()))).astype(np.uint8)
        img = img.T[::-1]
    else:
        img = np.zeros((0, 0), dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode())
        fh.write(img.tobytes())
    with open(str(path) + ".txt", "w", newline="\n") as fh:
        fh.write(f"origin_x {grid.origin[0]!r}\norigin_y {grid.origin[1]!r}\nresolution {grid.resolution!r}\n")
    return path


# --------------------------------------------------------------------------
# correlative matching
# --------------------------------------------------------------------------


@dataclass
class SearchWindow:
    translation: float = 1.0
    rotation: float = 0.35
    translation_step: float = 0.05
    rotation_step: float = 0.01
    coarse_factor: int = 4

    def validate(self) -> None:
        if not (self.translation >= 0 and self.rotation >= 0):
            raise InvalidArgumentError("search window extents must be non-negative", module="loopclosure")
        if not (self.translation_step > 0 and self.rotation_step > 0):
            raise InvalidArgumentError("search window needs positive step sizes", module="loopclosure")
        if self.coarse_factor < 1:
            raise InvalidArgumentError("coarse factor must be at least 1", module="loopclosure")

    def counts(self) -> tuple[int, int]:
        """Half-widths (in steps) of the translation and rotation grids."""
        return (int(math.floor(self.translation / self.translation_step + 1e-9)),
                int(math.floor(self.rotation / self.rotation_step + 1e-9)))


@dataclass
class LoopCandidate:
    query_pose_id: int | None
    match_pose_id: int | None
    relative_pose: Pose2
    score: float
    covariance: np.ndarray | None = None  # translation spread in the grid frame, if estimated
    on_boundary: bool = False  # best pose lies on the edge of the search window


def _scan_points(scan) -> np.ndarray:
    if hasattr(scan, "valid") and hasattr(scan, "bearings"):
        pts = scan.points(valid_only=True)
    elif hasattr(scan, "points") and not callable(scan.points):
        pts = scan.points
    else:
        pts = scan
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return pts[np.all(np.isfinite(pts), axis=1)]


class _Matcher:
    """Integer likelihood lookup; cells outside the grid read as zero.

    The tables are padded by ``pad`` zero cells on every side and indices are
    clipped into the padded range, so clipped lookups always land on padding.
    """

    def __init__(self, grid: OccupancyGrid, lut: np.ndarray, window: SearchWindow):
        self.m = window.translation_step / grid.resolution  # cells per translation step
        f = window.coarse_factor
        # forward max over the cells any translation inside one coarse block can reach
        w = int(math.ceil((f - 1) * self.m - 1e-12)) + 1
        self.pad = w + 1
        q = np.pad(np.round(lut * _LEVELS).astype(np.int64), self.pad)
        self.q = q
        qmax = q.copy()
        for axis in (0, 1):
            acc = qmax.copy()
            for d in range(1, w):
                shifted = np.zeros_like(qmax)
                if axis == 0:
                    shifted[:-d] = qmax[d:]
                else:
                    shifted[:, :-d] = qmax[:, d:]
                np.maximum(acc, shifted, out=acc)
            qmax = acc
        self.qmax = qmax

    def cells(self, base: np.ndarray, shifts: np.ndarray, n: int) -> np.ndarray:
        idx = np.floor(base[:, None] + shifts[None, :] * self.m).astype(np.int64) + self.pad
        return np.clip(idx, 0, n - 1)

    def sums(self, table, bx, by, sx, sy) -> np.ndarray:
        cx = self.cells(bx, sx, table.shape[0])
        cy = self.cells(by, sy, table.shape[1])
        return table[cx[:, :, None], cy[:, None, :]].sum(axis=0)


def correlative_match(scan, grid: OccupancyGrid, prior: Pose2, window: SearchWindow | None = None,
                      blur_radius: int = 0, blur_sigma: float = 0.05, exhaustive: bool = False,
                      likelihood: np.ndarray | None = None) -> LoopCandidate:
    """Best pose of ``scan`` in ``grid`` within ``window`` around ``prior``.

    Every pose of the discretized window is scored by the mean likelihood at
    the beam endpoints. The default search scores coarse blocks of
    ``coarse_factor**2`` translations first with an upper bound and only
    refines blocks that can still beat (or tie) the best pose found, which
    returns the same pose as ``exhaustive=True``.
    """
    window = window or SearchWindow()
    window.validate()
    pts = _scan_points(scan)
    if len(pts) == 0:
        raise InvalidArgumentError("scan has no valid beams", module="loopclosure")
    if grid.is_empty():
        return LoopCandidate(None, None, prior, 0.0)
    lut = likelihood if likelihood is not None else likelihood_field(grid, blur_radius, blur_sigma)
    mt = _Matcher(grid, lut, window)
    nt, nr = window.counts()
    shifts = np.arange(-nt, nt + 1)
    rot_idx = np.arange(-nr, nr + 1)
    thetas = prior.theta + rot_idx * window.rotation_step
    res = grid.resolution
    off = grid.index_offset
    B = len(pts)
    # beam endpoints in cell units for every rotation, before translation
    bases = []
    for th in thetas:
        c, s = math.cos(th), math.sin(th)
        wx = c * pts[:, 0] - s * pts[:, 1] + prior.x
        wy = s * pts[:, 0] + c * pts[:, 1] + prior.y
        bases.append((wx / res - off[0], wy / res - off[1]))

    def dist_key(r, i, j):
        return (shifts[i] ** 2 + shifts[j] ** 2 + rot_idx[r] ** 2, r, i, j)

    best_sum, best_key = -1, None
    if exhaustive or window.coarse_factor == 1:
        for r, (bx, by) in enumerate(bases):
            s = mt.sums(mt.q, bx, by, shifts, shifts)
            top = s.max()
            if top < best_sum:
                continue
            for i, j in zip(*np.nonzero(s == top)):
                key = dist_key(r, i, j)
                if top > best_sum or key < best_key:
                    best_sum, best_key = int(top), key
    else:
        f = window.coarse_factor
        starts = np.arange(0, len(shifts), f)
        bounds = np.stack([mt.sums(mt.qmax, bx, by, shifts[starts], shifts[starts]) for bx, by in bases])
        order = np.argsort(-bounds, axis=None, kind="stable")
        for flat in order:
            r, a, b = np.unravel_index(flat, bounds.shape)
            if bounds[r, a, b] < best_sum:
                break
            ii = np.arange(starts[a], min(starts[a] + f, len(shifts)))
            jj = np.arange(starts[b], min(starts[b] + f, len(shifts)))
            bx, by = bases[r]
            s = mt.sums(mt.q, bx, by, shifts[ii], shifts[jj])
            top = s.max()
            if top < best_sum:
                continue
            for i, j in zip(*np.nonzero(s == top)):
                key = dist_key(int(r), int(ii[i]), int(jj[j]))
                if top > best_sum or key < best_key:
                    best_sum, best_key = int(top), key
    r, i, j = best_key[1:]
    pose = Pose2(prior.x + shifts[i] * window.translation_step,
                 prior.y + shifts[j] * window.translation_step,
                 thetas[r])
    edge = abs(shifts[i]) == nt or abs(shifts[j]) == nt or (nr > 0 and abs(rot_idx[r]) == nr)
    return LoopCandidate(None, None, pose, best_sum / (B * _LEVELS), on_boundary=bool(edge))


def match_covariance(scan, grid: OccupancyGrid, prior: Pose2, pose: Pose2, window: SearchWindow | None = None,
                     ratio: float = 0.9, likelihood: np.ndarray | None = None) -> np.ndarray:
    """Spread (2x2, meters squared) of the near-best translations of a match.

    Translations of the window around ``prior`` at rotation ``pose.theta``
    whose score reaches ``ratio`` times the best one are treated as equally
    plausible; their second moment about ``pose``, plus the quantization
    variance of one step, is returned. Along a featureless corridor the
    spread is wide in the corridor direction only.
    """
    window = window or SearchWindow()
    pts = _scan_points(scan)
    step = window.translation_step
    base = np.eye(2) * step**2 / 12.0
    if len(pts) == 0 or grid.is_empty():
        return base
    lut = likelihood if likelihood is not None else likelihood_field(grid)
    mt = _Matcher(grid, lut, window)
    nt, _ = window.counts()
    shifts = np.arange(-nt, nt + 1)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    res, off = grid.resolution, grid.index_offset
    bx = (c * pts[:, 0] - s * pts[:, 1] + prior.x) / res - off[0]
    by = (s * pts[:, 0] + c * pts[:, 1] + prior.y) / res - off[1]
    sums = mt.sums(mt.q, bx, by, shifts, shifts)
    top = sums.max()
    if top <= 0:
        return base
    i, j = np.nonzero(sums >= ratio * top)
    d = np.stack([prior.x + shifts[i] * step - pose.x, prior.y + shifts[j] * step - pose.y], axis=1)
    cov = d.T @ d / len(d) + base
    # a spread reaching across half the window is cut off by the window, not by
    # the data: treat that direction as unconstrained
    w, v = np.linalg.eigh(cov)
    reach = np.abs(d @ v).max(axis=0)
    w = np.where(reach >= 0.5 * max(window.translation, step), UNCONSTRAINED_VARIANCE, w)
    return (v * w) @ v.T


# --------------------------------------------------------------------------
# dual-graph back-end
# --------------------------------------------------------------------------


def landmark_graph_to_pose_edges(landmark_graph: Graph, information=None) -> list[PosePoseEdge]:
    """Relative-pose edges between consecutive poses of the landmark graph."""
    info = np.diag([400.0, 400.0, 2500.0]) if information is None else np.asarray(information, dtype=float)
    ids = sorted(landmark_graph.poses)
    edges = []
    for a, b in zip(ids, ids[1:]):
        rel = se2_between(landmark_graph.poses[a], landmark_graph.poses[b])
        edges.append(PosePoseEdge(a, b, rel, info.copy(), kind="odometry"))
    return edges


@dataclass
class LoopParams:
    gating_radius: float = 5.0
    min_separation: int = 50
    score_threshold: float = 0.6
    segment_length: int = 50
    query_period: int = 10
    query_span: int = 20  # poses of recent multiscans pooled into one query
    window: SearchWindow = field(default_factory=SearchWindow)
    grid: GridParams = field(default_factory=GridParams)
    information: tuple[float, float, float] = (400.0, 400.0, 2500.0)
    # translations scoring at least this fraction of the best one count as
    # equally plausible when estimating a match's covariance
    covariance_ratio: float = 0.9

    def validate(self) -> None:
        if not 0 < self.covariance_ratio <= 1:
            raise InvalidArgumentError("covariance_ratio must lie in (0, 1]", module="loopclosure")
        if not self.gating_radius > 0:
            raise InvalidArgumentError("gating radius must be positive", module="loopclosure")
        if self.min_separation < 1 or self.segment_length < 1 or self.query_period < 1 or self.query_span < 1:
            raise InvalidArgumentError("separation, segment length and query period must be >= 1",
                                       module="loopclosure")
        if not 0 <= self.score_threshold <= 1:
            raise InvalidArgumentError("score threshold must lie in [0, 1]", module="loopclosure")
        self.window.validate()
        self.grid.validate()


@dataclass
class LocalGrid:
    """Occupancy grid of one trajectory segment, in the frame of ``reference_pose_id``."""

    reference_pose_id: int
    pose_ids: tuple[int, ...]
    grid: OccupancyGrid
    likelihood: np.ndarray = field(repr=False, default=None)

    @property
    def last_pose_id(self) -> int:
        return max(self.pose_ids)


def build_local_grid(multiscans, poses, params: LoopParams | None = None) -> LocalGrid | None:
    """Rasterize one segment's multiscans relative to its first anchor pose."""
    p = params or LoopParams()
    multiscans = list(multiscans)
    if not multiscans:
        return None
    ref_id = multiscans[0].anchor_pose_id
    grid = render_grid(multiscans, poses, reference=poses[ref_id], params=p.grid)
    ids = tuple(sorted({i for ms in multiscans for i in ms.source_pose_ids}))
    lut = likelihood_field(grid, p.grid.blur_radius, p.grid.blur_sigma)
    return LocalGrid(ref_id, ids, grid, lut)


@dataclass
class LoopQuery:
    """Points (in the frame of ``pose_id``) to be matched against older grids."""

    pose_id: int
    points: np.ndarray


def find_loop_candidate(pose_graph: Graph, grids, query: LoopQuery, params: LoopParams) -> LoopCandidate | None:
    """Best-scoring match of ``query`` over eligible grids, or None.

    Matches whose optimum sits on the window boundary are only returned when
    no eligible grid produced an interior optimum.
    """
    q = pose_graph.poses[query.pose_id]
    best = None
    for lg in grids:
        if query.pose_id - lg.last_pose_id < params.min_separation:
            continue
        ref = pose_graph.poses.get(lg.reference_pose_id)
        if ref is None or math.hypot(q.x - ref.x, q.y - ref.y) > params.gating_radius:
            continue
        if lg.grid.is_empty() or len(query.points) == 0:
            continue
        prior = se2_between(ref, q)
        cand = correlative_match(query.points, lg.grid, prior, params.window, likelihood=lg.likelihood)
        cand.query_pose_id, cand.match_pose_id = query.pose_id, lg.reference_pose_id
        cand.covariance = match_covariance(query.points, lg.grid, prior, cand.relative_pose, params.window,
                                           params.covariance_ratio, likelihood=lg.likelihood)
        if best is None or (best.on_boundary, -best.score) > (cand.on_boundary, -cand.score):
            best = cand
    return best


def loop_information(cand: LoopCandidate, information: np.ndarray) -> np.ndarray:
    """Edge information: configured values, weakened along poorly constrained directions.

    The translation error of a pose-pose edge lives in the frame of the
    measured pose, so the grid-frame covariance is rotated into it before
    being added to the configured covariance.
    """
    info = np.array(information, dtype=float)
    if cand.covariance is None:
        return info
    c, s = math.cos(cand.relative_pose.theta), math.sin(cand.relative_pose.theta)
    R = np.array([[c, -s], [s, c]])
    cov = R.T @ cand.covariance @ R + np.linalg.inv(info[:2, :2])
    info[:2, :2] = np.linalg.inv(cov)
    info[:2, :2] = 0.5 * (info[:2, :2] + info[:2, :2].T)
    return info


def detect_and_close_loops(pose_graph: Graph, grids, params: LoopParams | None = None, queries=(),
                           optimizer_options: LMOptions | None = None) -> int:
    """Add loop edges for ``queries`` that match an older local grid well enough.

    Returns the number of edges added; the pose graph is re-optimized when
    any edge was added.
    """
    p = params or LoopParams()
    added = 0
    info = np.diag(np.asarray(p.information, dtype=float))
    for query in queries:
        cand = find_loop_candidate(pose_graph, grids, query, p)
        if cand is None:
            continue
        if cand.score < p.score_threshold:
            log.info("loop miss: pose %d vs segment %d scored %.3f < %.3f",
                     query.pose_id, cand.match_pose_id, cand.score, p.score_threshold)
            continue
        if cand.on_boundary:
            # the true pose may lie outside the window; the optimum is not trustworthy
            log.info("loop rejected: pose %d vs segment %d optimum on the window boundary",
                     query.pose_id, cand.match_pose_id)
            continue
        # the matched pose is the query in the reference frame: ref^-1 (+) query
        pose_graph.pose_pose_edges.append(PosePoseEdge(cand.match_pose_id, cand.query_pose_id,
                                                       cand.relative_pose, loop_information(cand, info), kind="loop"))
        log.info("loop edge: %d -> %d score %.3f", cand.match_pose_id, cand.query_pose_id, cand.score)
        added += 1
    if added:
        lm_optimize(pose_graph, opts=optimizer_options)
    return added


class LoopCloser:
    """Collects multiscans into segments and closes loops as the run proceeds."""

    def __init__(self, params: LoopParams | None = None, optimizer_options: LMOptions | None = None):
        self.params = params or LoopParams()
        self.params.validate()
        self.optimizer_options = optimizer_options
        self.grids: list[LocalGrid] = []
        self._pending: list = []
        self._queries: list[LoopQuery] = []
        self._recent: list = []
        self.edges_added = 0
        self.reports: list[LMReport] = []

    def add_multiscan(self, multiscan, landmark_poses) -> None:
        """Queue ``multiscan``; seal a segment grid once it spans ``segment_length`` poses."""
        self._pending.append(multiscan)
        first = self._pending[0].anchor_pose_id
        if multiscan.source_pose_ids[-1] - first + 1 >= self.params.segment_length:
            self._seal(landmark_poses)
        self._recent.append(multiscan)
        newest = multiscan.anchor_pose_id
        while self._recent and newest - self._recent[0].anchor_pose_id >= self.params.query_span:
            self._recent.pop(0)
        anchor = landmark_poses[newest]
        pts = [se2_between(anchor, landmark_poses[ms.anchor_pose_id]).transform_points(ms.points)
               for ms in self._recent]
        self._queries.append(LoopQuery(newest, np.concatenate(pts)))

    def _seal(self, poses) -> None:
        lg = build_local_grid(self._pending, poses, self.params)
        if lg is not None:
            self.grids.append(lg)
        self._pending = []

    def due(self, pose_id: int) -> bool:
        return bool(self._queries) and pose_id % self.params.query_period == 0

    def close(self, pose_graph: Graph) -> int:
        n = detect_and_close_loops(pose_graph, self.grids, self.params, self._queries, self.optimizer_options)
        self._queries = []
        self.edges_added += n
        return n

    def finish(self, pose_graph: Graph, landmark_poses) -> int:
        if self._pending:
            self._seal(landmark_poses)
        return self.close(pose_graph)


def raycast_grid(grid: OccupancyGrid, pose: Pose2, bearings, max_range: float = 10.0,
                 step: float | None = None) -> np.ndarray:
    """Ranges from ``pose`` to the first occupied cell along each bearing.

    Beams that hit nothing within ``max_range`` return ``max_range``.
    """
    step = step or grid.resolution / 10.0
    b = np.asarray(bearings, dtype=float)
    r = np.arange(step, max_range, step)
    ang = pose.theta + b
    px = pose.x + np.cos(ang)[:, None] * r[None, :]
    py = pose.y + np.sin(ang)[:, None] * r[None, :]
    occ = (grid.log_odds_at(np.stack([px.ravel(), py.ravel()], axis=1)) > 0).reshape(px.shape)
    hit = occ.any(axis=1)
    first = occ.argmax(axis=1)
    return np.where(hit, r[first], max_range)
