"""Dataset readers and writers.

Supported inputs:

* CARMEN text logs (``FLASER``, ``ROBOTLASER1`` and ``ODOM`` messages).
* Ground-truth relations files: ``t1 t2 dx dy dz droll dpitch dyaw`` per row.
* A four-beam CSV with header ``t,x,y,theta,front,left,back,right``.

Beam subsampling turns dense laser scans into sparse ones.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose2
from .errors import InvalidArgumentError, ParseError, ValidationError

DEFAULT_FOV = math.pi
DEFAULT_START_ANGLE = -math.pi / 2
CARMEN_MAX_RANGE = 10.0
CSV_MAX_RANGE = 4.0

CSV_HEADER = ["t", "x", "y", "theta", "front", "left", "back", "right"]
# bearing of each CSV range column
CSV_BEARINGS = {"front": 0.0, "left": math.pi / 2, "back": math.pi, "right": -math.pi / 2}


@dataclass(frozen=True, slots=True)
class RawScan:
    """One dense laser scan as logged.

    ``odom_pose`` is the raw odometry column and ``laser_pose`` the laser
    column (scan-corrected in many logs). ``start_angle`` and ``fov`` are
    ``None`` when the message did not carry them (``FLASER``).
    ``robotlaser`` holds the ROBOTLASER1-only fields, verbatim, for round trips.
    """

    ranges: tuple[float, ...]
    odom_pose: Pose2
    timestamp: float
    max_range: float = CARMEN_MAX_RANGE
    laser_pose: Pose2 = field(default_factory=Pose2)
    message: str = "FLASER"
    start_angle: float | None = None
    fov: float | None = None
    host: str = "nohost"
    logger_timestamp: float | None = None
    robotlaser: tuple[str, ...] = ()
    remissions: tuple[str, ...] = ()

    def pose(self, source: str = "odom") -> Pose2:
        return self.laser_pose if source == "laser" else self.odom_pose


@dataclass(frozen=True, slots=True)
class OdometryEntry:
    pose: Pose2
    timestamp: float
    tv: float = 0.0
    rv: float = 0.0
    accel: float = 0.0
    host: str = "nohost"
    logger_timestamp: float | None = None


@dataclass(frozen=True, slots=True)
class SparseScan:
    """A few range beams; ``valid[i]`` is False for out-of-range readings."""

    bearings: tuple[float, ...]
    ranges: tuple[float, ...]
    valid: tuple[bool, ...]
    odom_pose: Pose2
    timestamp: float

    def __post_init__(self):
        n = len(self.bearings)
        if n < 1 or len(self.ranges) != n or len(self.valid) != n:
            raise InvalidArgumentError("sparse scan needs matching non-empty beam arrays", module="datasetio")
        if any(b2 <= b1 for b1, b2 in zip(self.bearings, self.bearings[1:])):
            raise InvalidArgumentError("sparse scan bearings must be strictly increasing", module="datasetio")

    @property
    def beams(self) -> list[tuple[float, float]]:
        return list(zip(self.bearings, self.ranges))

    def points(self, valid_only: bool = True) -> np.ndarray:
        """Beam endpoints in the sensor frame, shape ``(M, 2)``."""
        b = np.asarray(self.bearings)
        r = np.asarray(self.ranges)
        pts = np.column_stack([r * np.cos(b), r * np.sin(b)])
        return pts[np.asarray(self.valid)] if valid_only else pts


@dataclass(frozen=True, slots=True)
class GroundTruthRelation:
    t1: float
    t2: float
    relative_pose: Pose2


@dataclass
class CarmenLog:
    scans: list[RawScan] = field(default_factory=list)
    odometry: list[OdometryEntry] = field(default_factory=list)


# --------------------------------------------------------------------------
# CARMEN
# --------------------------------------------------------------------------


def _f(tok: str, path, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"malformed number {tok!r}", path, lineno) from None
    return v


def _i(tok: str, path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"malformed integer {tok!r}", path, lineno) from None


def _tail(toks: list[str], k: int, path, lineno: int):
    """Parse the trailing ``timestamp host logger_timestamp`` triple if present."""
    rest = toks[k:]
    if not rest:
        raise ParseError("missing timestamp", path, lineno)
    ts = _f(rest[0], path, lineno)
    host = rest[1] if len(rest) > 1 else "nohost"
    logger = _f(rest[2], path, lineno) if len(rest) > 2 else None
    return ts, host, logger


def parse_carmen_log(path, max_range: float = CARMEN_MAX_RANGE) -> CarmenLog:
    """Read a CARMEN log; unknown message types are skipped."""
    log = CarmenLog()
    path = Path(path)
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            toks = raw.split()
            if not toks:
                continue
            kind = toks[0]
            try:
                if kind in ("FLASER", "RLASER"):
                    log.scans.append(_parse_flaser(toks, path, lineno, max_range))
                elif kind == "ROBOTLASER1":
                    log.scans.append(_parse_robotlaser(toks, path, lineno))
                elif kind == "ODOM":
                    if len(toks) < 8:
                        raise ParseError("ODOM needs 6 fields and a timestamp", path, lineno)
                    v = [_f(t, path, lineno) for t in toks[1:7]]
                    ts, host, logger = _tail(toks, 7, path, lineno)
                    log.odometry.append(OdometryEntry(Pose2(*v[:3]), ts, v[3], v[4], v[5], host, logger))
            except IndexError:
                raise ParseError(f"truncated {kind} message", path, lineno) from None
    return log


def _parse_flaser(toks, path, lineno, max_range) -> RawScan:
    n = _i(toks[1], path, lineno)
    if n < 0 or len(toks) < 2 + n + 7:
        raise ParseError(f"{toks[0]} declares {n} readings but the line is too short", path, lineno)
    ranges = tuple(_f(t, path, lineno) for t in toks[2 : 2 + n])
    p = [_f(t, path, lineno) for t in toks[2 + n : 2 + n + 6]]
    ts, host, logger = _tail(toks, 2 + n + 6, path, lineno)
    return RawScan(
        ranges, Pose2(*p[3:]), ts, max_range,
        laser_pose=Pose2(*p[:3]), message=toks[0], host=host, logger_timestamp=logger,
    )


def _parse_robotlaser(toks, path, lineno) -> RawScan:
    # ROBOTLASER1 type start fov res maxrange accuracy remission_mode n [r] m [rem]
    #   lx ly lth rx ry rth tv rv fsd ssd turn_axis ts host logger_ts
    start = _f(toks[2], path, lineno)
    fov = _f(toks[3], path, lineno)
    max_range = _f(toks[5], path, lineno)
    n = _i(toks[8], path, lineno)
    ranges = tuple(_f(t, path, lineno) for t in toks[9 : 9 + n])
    m = _i(toks[9 + n], path, lineno)
    k = 10 + n + m
    p = [_f(t, path, lineno) for t in toks[k : k + 6]]
    if len(p) < 6 or len(toks) < k + 12:
        raise ParseError("ROBOTLASER1 message truncated", path, lineno)
    ts, host, logger = _tail(toks, k + 11, path, lineno)
    return RawScan(
        ranges, Pose2(*p[3:]), ts, max_range,
        laser_pose=Pose2(*p[:3]), message="ROBOTLASER1", start_angle=start, fov=fov,
        host=host, logger_timestamp=logger,
        robotlaser=(toks[1], toks[4], toks[6], toks[7], *toks[k + 6 : k + 11]),
        remissions=tuple(toks[10 + n : k]),
    )


def fmt(v: float) -> str:
    """Shortest round-trip float text; integral values drop the ``.0``."""
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def _pose_fields(p: Pose2) -> list[str]:
    return [fmt(p.x), fmt(p.y), fmt(p.theta)]


def format_scan(scan: RawScan) -> str:
    if scan.message == "ROBOTLASER1":
        laser_type, ang_res, accuracy, rem_mode, *trailer = scan.robotlaser
        toks = [
            "ROBOTLASER1", laser_type, fmt(scan.start_angle), fmt(scan.fov), ang_res,
            fmt(scan.max_range), accuracy, rem_mode, str(len(scan.ranges)),
            *[fmt(r) for r in scan.ranges], str(len(scan.remissions)), *scan.remissions,
            *_pose_fields(scan.laser_pose), *_pose_fields(scan.odom_pose), *trailer,
        ]
    else:
        toks = [scan.message, str(len(scan.ranges)), *[fmt(r) for r in scan.ranges]]
        toks += _pose_fields(scan.laser_pose) + _pose_fields(scan.odom_pose)
    toks += [fmt(scan.timestamp), scan.host]
    if scan.logger_timestamp is not None:
        toks.append(fmt(scan.logger_timestamp))
    return " ".join(toks)


def format_odometry(o: OdometryEntry) -> str:
    toks = ["ODOM", *_pose_fields(o.pose), fmt(o.tv), fmt(o.rv), fmt(o.accel), fmt(o.timestamp), o.host]
    if o.logger_timestamp is not None:
        toks.append(fmt(o.logger_timestamp))
    return " ".join(toks)


def write_carmen_log(path, scans, odometry=()) -> None:
    """Write scans and odometry interleaved by timestamp (stable)."""
    items = [(s.timestamp, 1, format_scan(s)) for s in scans]
    items += [(o.timestamp, 0, format_odometry(o)) for o in odometry]
    items.sort(key=lambda t: (t[0], t[1]))
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("# CARMEN Logfile\n")
        for _, _, line in items:
            fh.write(line + "\n")


# --------------------------------------------------------------------------
# subsampling
# --------------------------------------------------------------------------


def beam_bearings(n: int, fov: float = DEFAULT_FOV, start_angle: float = DEFAULT_START_ANGLE) -> np.ndarray:
    """Bearings of an ``n``-beam scan.

    Even counts follow the usual CARMEN layout of ``fov / n`` spacing (180
    beams over 180 degrees at 1 degree); odd counts include both ends of the
    field of view.
    """
    if n == 1:
        return np.array([start_angle])
    res = fov / n if n % 2 == 0 else fov / (n - 1)
    return start_angle + res * np.arange(n)


def subsample_indices(n: int, k: int) -> list[int]:
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"cannot sample {k} of {n} beams", module="datasetio")
    if k == 1:
        return [0]
    return [int(math.floor(i * (n - 1) / (k - 1) + 0.5)) for i in range(k)]


def subsample_beams(
    scan: RawScan,
    k: int,
    fov: float | None = None,
    start_angle: float | None = None,
    max_range: float | None = None,
) -> SparseScan:
    """Keep ``k`` evenly spread beams, both extremes included.

    Readings at or beyond the max range (or non-positive) are kept in place
    but flagged invalid.
    """
    n = len(scan.ranges)
    idx = subsample_indices(n, k)
    if fov is None:
        fov = scan.fov if scan.fov is not None else DEFAULT_FOV
    if start_angle is None:
        start_angle = scan.start_angle if scan.start_angle is not None else DEFAULT_START_ANGLE
    max_range = scan.max_range if max_range is None else max_range
    bearings = beam_bearings(n, fov, start_angle)
    ranges = tuple(float(scan.ranges[i]) for i in idx)
    valid = tuple(bool(0.0 < r < max_range) for r in ranges)
    return SparseScan(tuple(float(bearings[i]) for i in idx), ranges, valid, scan.odom_pose, scan.timestamp)


# --------------------------------------------------------------------------
# relations
# --------------------------------------------------------------------------


def parse_relations(path) -> list[GroundTruthRelation]:
    out = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            toks = raw.split()
            if not toks or toks[0].startswith("#"):
                continue
            if len(toks) != 8:
                raise ParseError(f"expected 8 columns, found {len(toks)}", path, lineno)
            v = [_f(t, path, lineno) for t in toks]
            if not v[0] < v[1]:
                raise ValidationError(f"relation requires t1 < t2 (got {toks[0]} {toks[1]})", path, lineno)
            out.append(GroundTruthRelation(v[0], v[1], Pose2(v[2], v[3], v[7])))
    return out


def write_relations(path, relations) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in relations:
            p = r.relative_pose
            fh.write(" ".join([fmt(r.t1), fmt(r.t2), fmt(p.x), fmt(p.y), "0", "0", "0", fmt(p.theta)]) + "\n")


# --------------------------------------------------------------------------
# four-beam CSV
# --------------------------------------------------------------------------


def parse_sparse_csv(path, max_range: float = CSV_MAX_RANGE) -> list[SparseScan]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"missing header {','.join(CSV_HEADER)}", path, 1)
        order = sorted(CSV_HEADER[4:], key=CSV_BEARINGS.__getitem__)
        cols = {name: CSV_HEADER.index(name) for name in order}
        scans = []
        last_t = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} fields, found {len(row)}", path, lineno)
            t, x, y, th = (_f(v, path, lineno) for v in row[:4])
            if t < last_t:
                raise ValidationError(f"timestamps not monotone (first offending row {lineno})", path, lineno)
            last_t = t
            ranges, valid = [], []
            for name in order:
                cell = row[cols[name]].strip()
                if cell == "":
                    ranges.append(math.nan)
                    valid.append(False)
                else:
                    r = _f(cell, path, lineno)
                    ranges.append(r)
                    valid.append(bool(0.0 < r < max_range))
            scans.append(
                SparseScan(
                    tuple(CSV_BEARINGS[n] for n in order), tuple(ranges), tuple(valid), Pose2(x, y, th), t
                )
            )
    return scans


def write_sparse_csv(path, scans) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in scans:
            by_bearing = {b: (r, v) for b, r, v in zip(s.bearings, s.ranges, s.valid)}
            row = [fmt(s.timestamp), fmt(s.odom_pose.x), fmt(s.odom_pose.y), fmt(s.odom_pose.theta)]
            for name in CSV_HEADER[4:]:
                r, v = by_bearing.get(CSV_BEARINGS[name], (math.nan, False))
                row.append("" if math.isnan(r) else fmt(r))
            w.writerow(row)
