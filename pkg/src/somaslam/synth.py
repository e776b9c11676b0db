"""Synthetic corridor worlds with simulated odometry and laser scans.

A world is a set of wall segments plus a waypoint path through it. The robot
drives the path in fixed steps (turning on the spot at corners), and each
pose yields a dense scan ray-cast against the walls. Noise is added to the
odometry increments and to the ranges, and ground-truth relations are taken
from the true poses, so the generator is its own oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose2, se2_between, se2_compose, wrap_angle
from .datasetio import GroundTruthRelation, RawScan, beam_bearings, write_carmen_log, write_relations
from .errors import ConfigError

WORLDS = ("rectangle", "l_corridor", "mixed")


@dataclass
class SynthConfig:
    world: str = "rectangle"
    width: float = 20.0
    height: float = 10.0
    corridor_width: float = 2.0
    door_spacing: float = 0.0  # 0 disables door gaps
    door_width: float = 0.8
    off_angle_deg: float = 10.0  # tilt of the odd wall in the mixed world
    step: float = 0.15
    turn_step: float = 0.15
    laps: float = 1.15
    beams: int = 180
    fov: float = math.pi
    max_range: float = 10.0
    sigma_xy: float = 0.01
    sigma_theta: float = 0.005
    sigma_range: float = 0.01
    dt: float = 0.2
    relation_stride: int = 10
    revisit_radius: float = 1.0
    revisit_separation: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.world not in WORLDS:
            raise ConfigError(f"unknown world {self.world!r}; expected one of {', '.join(WORLDS)}")
        positive = ("width", "height", "corridor_width", "step", "turn_step", "laps", "fov", "max_range", "dt",
                    "revisit_radius")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"synth.{name} must be positive")
        for name in ("door_spacing", "door_width", "sigma_xy", "sigma_theta", "sigma_range"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"synth.{name} must be non-negative")
        if self.beams < 1 or self.relation_stride < 1 or self.revisit_separation < 1:
            raise ConfigError("synth.beams, relation_stride and revisit_separation must be >= 1")
        half = self.corridor_width / 2
        if self.width <= 2 * half or self.height <= 2 * half:
            raise ConfigError("world must be larger than the corridor width")
        if not abs(self.off_angle_deg) < 45:
            raise ConfigError("synth.off_angle_deg must be below 45 degrees")
        if self.door_spacing and self.door_spacing <= self.door_width:
            raise ConfigError("synth.door_spacing must exceed door_width")


@dataclass
class World:
    walls: np.ndarray  # (W, 2, 2) segment endpoints
    waypoints: np.ndarray  # (K, 2) path the robot follows, closed paths repeat the start
    closed: bool
    tilted_wall: int | None = None  # index into ``walls`` of the off-angle wall, if any


@dataclass
class SynthDataset:
    world: World
    truth: list[Pose2]
    odometry: list[Pose2]
    timestamps: list[float]
    scans: list[RawScan]
    relations: list[GroundTruthRelation] = field(default_factory=list)


def _rect(x0, y0, x1, y1):
    return [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))]


def _with_doors(walls, spacing: float, width: float):
    if spacing <= 0:
        return walls
    out = []
    for a, b in walls:
        a, b = np.asarray(a, float), np.asarray(b, float)
        length = float(np.hypot(*(b - a)))
        u = (b - a) / length
        centers = np.arange(spacing, length - spacing / 2, spacing)
        t0 = 0.0
        for c in centers:
            out.append((tuple(a + t0 * u), tuple(a + (c - width / 2) * u)))
            t0 = c + width / 2
        out.append((tuple(a + t0 * u), tuple(b)))
    return out


def build_world(cfg: SynthConfig) -> World:
    cfg.validate()
    c = cfg.corridor_width / 2
    W, H = cfg.width, cfg.height
    tilted = None
    if cfg.world == "l_corridor":
        walls = [((-c, -c), (W + c, -c)), ((W + c, -c), (W + c, H + c)),
                 ((-c, c), (W - c, c)), ((W - c, c), (W - c, H + c)),
                 ((-c, -c), (-c, c)), ((W - c, H + c), (W + c, H + c))]
        walls = _with_doors(walls, cfg.door_spacing, cfg.door_width)
        way = np.array([[0, 0], [W, 0], [W, H], [W, 0], [0, 0]], dtype=float)
        return World(np.array(walls, dtype=float), way, closed=False)
    walls = _with_doors(_rect(-c, -c, W + c, H + c) + _rect(c, c, W - c, H - c), cfg.door_spacing, cfg.door_width)
    if cfg.world == "mixed":
        # replace the middle third of the outer bottom wall by a tilted piece, leaning outwards
        a = math.radians(cfg.off_angle_deg)
        x0, x1 = W / 3, 2 * W / 3
        kept = []
        for p, q in walls:
            if p[1] == -c and q[1] == -c:
                lo, hi = sorted((p[0], q[0]))
                if lo < x0:
                    kept.append(((lo, -c), (min(hi, x0), -c)))
                if hi > x1:
                    kept.append(((max(lo, x1), -c), (hi, -c)))
            else:
                kept.append((p, q))
        length = x1 - x0
        kept.append(((x0, -c), (x0 + length * math.cos(a), -c - length * math.sin(a))))
        walls = kept
        tilted = len(walls) - 1
    way = np.array([[0, 0], [W, 0], [W, H], [0, H], [0, 0]], dtype=float)
    return World(np.array(walls, dtype=float), way, closed=True, tilted_wall=tilted)


def drive_path(world: World, cfg: SynthConfig) -> list[Pose2]:
    """True poses along the waypoints: straight steps, turns on the spot at corners."""
    way = world.waypoints
    legs = list(zip(way[:-1], way[1:]))
    total = sum(float(np.hypot(*(b - a))) for a, b in legs)
    target = cfg.laps * total
    heading = math.atan2(*(way[1] - way[0])[::-1])
    poses = [Pose2(float(way[0, 0]), float(way[0, 1]), heading)]
    travelled, k = 0.0, 0
    while travelled < target - 1e-9:
        a, b = legs[k % len(legs)]
        d = b - a
        length = float(np.hypot(*d))
        want = math.atan2(d[1], d[0])
        # turn towards the leg direction
        while True:
            err = wrap_angle(want - poses[-1].theta)
            if abs(err) < 1e-12:
                break
            turn = max(-cfg.turn_step, min(cfg.turn_step, err))
            p = poses[-1]
            poses.append(Pose2(p.x, p.y, p.theta + turn))
        n = max(1, int(round(length / cfg.step)))
        for i in range(1, n + 1):
            if travelled >= target - 1e-9:
                break
            q = a + d * (i / n)
            poses.append(Pose2(float(q[0]), float(q[1]), want))
            travelled += length / n
        k += 1
    return poses


def raycast_walls(walls: np.ndarray, pose: Pose2, bearings, max_range: float) -> np.ndarray:
    """Distance to the nearest wall along each bearing, ``max_range`` if none."""
    ang = pose.theta + np.asarray(bearings, dtype=float)
    d = np.stack([np.cos(ang), np.sin(ang)], axis=1)  # (B, 2)
    p = walls[:, 0]  # (W, 2)
    e = walls[:, 1] - walls[:, 0]
    o = np.array([pose.x, pose.y])
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]  # (B, W)
    w = p[None] - o  # (1, W, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        s = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 0) & (s >= 0) & (s <= 1)
    t = np.where(ok, t, np.inf)
    r = t.min(axis=1)
    return np.where(r < max_range, r, max_range)


def simulate(cfg: SynthConfig) -> SynthDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    world = build_world(cfg)
    truth = drive_path(world, cfg)
    bearings = beam_bearings(cfg.beams, cfg.fov, -cfg.fov / 2)
    odom = [truth[0]]
    for a, b in zip(truth, truth[1:]):
        rel = se2_between(a, b)
        noisy = Pose2(rel.x + rng.normal(0, cfg.sigma_xy) if cfg.sigma_xy else rel.x,
                      rel.y + rng.normal(0, cfg.sigma_xy) if cfg.sigma_xy else rel.y,
                      rel.theta + rng.normal(0, cfg.sigma_theta) if cfg.sigma_theta else rel.theta)
        odom.append(se2_compose(odom[-1], noisy))
    stamps = [round(i * cfg.dt, 9) for i in range(len(truth))]
    scans = []
    for pose, o, t in zip(truth, odom, stamps):
        r = raycast_walls(world.walls, pose, bearings, cfg.max_range)
        if cfg.sigma_range:
            hit = r < cfg.max_range
            r = np.where(hit, np.clip(r + rng.normal(0, cfg.sigma_range, len(r)), 0.0, cfg.max_range), r)
        ranges = tuple(round(float(v), 4) for v in r)
        scans.append(RawScan(ranges, o, t, max_range=cfg.max_range, laser_pose=o, message="FLASER",
                             host="synth", logger_timestamp=t))
    relations = make_relations(truth, stamps, cfg)
    return SynthDataset(world, truth, odom, stamps, scans, relations)


def make_relations(truth, stamps, cfg: SynthConfig) -> list[GroundTruthRelation]:
    """Short-range pairs every ``relation_stride`` poses plus revisit pairs."""
    pairs = [(i, i + cfg.relation_stride) for i in range(0, len(truth) - cfg.relation_stride, cfg.relation_stride)]
    xy = np.array([[p.x, p.y] for p in truth])
    for i in range(0, len(truth), cfg.relation_stride):
        later = np.arange(i + cfg.revisit_separation, len(truth))
        if len(later) == 0:
            continue
        dist = np.hypot(*(xy[later] - xy[i]).T)
        close = later[dist < cfg.revisit_radius]
        if len(close):
            pairs.append((i, int(close[0])))
    pairs.sort()
    return [GroundTruthRelation(stamps[i], stamps[j], se2_between(truth[i], truth[j])) for i, j in pairs]


def write_dataset(ds: SynthDataset, prefix) -> dict[str, Path]:
    """Write ``<prefix>.log``, ``<prefix>.relations`` and ``<prefix>.truth``."""
    from .evaluation import TrajectoryEstimate, export_trajectory

    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {"log": prefix.with_name(prefix.name + ".log"),
             "relations": prefix.with_name(prefix.name + ".relations"),
             "truth": prefix.with_name(prefix.name + ".truth")}
    write_carmen_log(paths["log"], ds.scans)
    write_relations(paths["relations"], ds.relations)
    export_trajectory(TrajectoryEstimate(ds.timestamps, ds.truth), paths["truth"])
    return paths
