"""End-to-end SLAM run: parse, subsample, map, optimize, close loops, evaluate."""

from __future__ import annotations

import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, dump_config
from .core import Pose2, PosePoseEdge, se2_between, se2_compose
from .datasetio import (
    CARMEN_MAX_RANGE,
    CSV_MAX_RANGE,
    SparseScan,
    parse_carmen_log,
    parse_relations,
    parse_sparse_csv,
    subsample_beams,
)
from .errors import ParseError
from .evaluation import ErrorSummary, TrajectoryEstimate, export_trajectory, relation_errors, render_map
from .frontend import Frontend
from .graph import Graph, SlamGraphs
from .loopclosure import LoopCloser, landmark_graph_to_pose_edges
from .optimizer import LMOptions, LMReport, lm_optimize, optimize_and_prune
from .softmw import SoftManhattan

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    graphs: SlamGraphs
    estimate: TrajectoryEstimate
    landmark_estimate: TrajectoryEstimate
    summary: ErrorSummary | None = None
    loops: int = 0
    pruned: int = 0
    reports: dict[str, LMReport] = field(default_factory=dict)
    artifacts: dict[str, Path] = field(default_factory=dict)

    @property
    def ll_edge_count(self) -> int:
        return len(self.graphs.landmark_graph.ll_edges)


def load_scans(cfg: RunConfig) -> list[SparseScan]:
    """Read the dataset and reduce it to sparse scans."""
    d = cfg.dataset
    path = Path(d.path)
    if not path.is_file():
        raise ParseError(f"dataset not found: {path}", path)
    if d.format == "sparse_csv":
        return parse_sparse_csv(path, d.max_range or CSV_MAX_RANGE)
    log_ = parse_carmen_log(path, d.max_range or CARMEN_MAX_RANGE)
    if not log_.scans:
        raise ParseError("log contains no laser scans", path)
    out = []
    for raw in log_.scans:
        k = min(cfg.run.beams, len(raw.ranges))
        sp = subsample_beams(raw, k, fov=d.fov or None, start_angle=d.start_angle if raw.start_angle is None else None,
                             max_range=d.max_range or None)
        out.append(SparseScan(sp.bearings, sp.ranges, sp.valid, raw.pose(d.odometry_source), sp.timestamp))
    return out


def relations_path(cfg: RunConfig) -> Path | None:
    if cfg.dataset.relations:
        return Path(cfg.dataset.relations)
    p = Path(cfg.dataset.path)
    for cand in (p.with_name(p.name + ".relations"), p.with_suffix(".relations")):
        if cand.is_file():
            return cand
    return None


def _odometry_information(cfg: RunConfig) -> np.ndarray:
    r = cfg.run
    return np.diag([1 / r.odometry_sigma_xy**2, 1 / r.odometry_sigma_xy**2, 1 / r.odometry_sigma_theta**2])


def _sync_pose_graph(lg: Graph, pg: Graph, info: np.ndarray) -> None:
    """Refresh pose-graph odometry from the landmark graph, keeping loop edges."""
    loops = [e for e in pg.pose_pose_edges if e.kind == "loop"]
    pg.pose_pose_edges = landmark_graph_to_pose_edges(lg, info) + loops
    ids = sorted(lg.poses)
    for a, b in zip(ids, ids[1:]):
        if b not in pg.poses:
            pg.add_pose(b, se2_compose(pg.poses[a], se2_between(lg.poses[a], lg.poses[b])), lg.timestamps.get(b))


def run_slam(scans: list[SparseScan], cfg: RunConfig) -> RunResult:
    """Process ``scans`` in order and return both optimized graphs."""
    graphs = SlamGraphs()
    lg, pg = graphs.landmark_graph, graphs.pose_graph
    frontend = Frontend(cfg.frontend)
    softmw = SoftManhattan(cfg.softmw) if cfg.run.soft_mw else None
    local_opts = LMOptions(**{**cfg.optimizer.__dict__, "max_iterations": cfg.run.landmark_iterations})
    closer = LoopCloser(cfg.loopclosure, cfg.optimizer)
    odo_info = _odometry_information(cfg)
    pg_info = np.diag(np.asarray(cfg.loopclosure.information, dtype=float))

    prev_odom: Pose2 | None = None
    for i, scan in enumerate(scans):
        if prev_odom is None:
            lg.add_pose(i, Pose2(), scan.timestamp)
            pg.add_pose(i, Pose2(), scan.timestamp)
        else:
            u = se2_between(prev_odom, scan.odom_pose)
            lg.add_pose(i, se2_compose(lg.poses[i - 1], u), scan.timestamp)
            lg.pose_pose_edges.append(PosePoseEdge(i - 1, i, u, odo_info.copy(), kind="odometry"))
        prev_odom = scan.odom_pose

        ms = frontend.add_scan(i, scan, lg)
        if ms is not None:
            touched = frontend.process(ms, lg)
            if softmw is not None:
                for lid, associated in touched:
                    if associated:
                        softmw.update(lg, lid)
            if touched:
                lm_optimize(lg, opts=local_opts)
            closer.add_multiscan(ms, lg.poses)
        if closer.due(i):
            _sync_pose_graph(lg, pg, pg_info)
            closer.close(pg)

    # final landmark-graph solve with the consistency check, then the pose graph
    _, lg_report, pruned = optimize_and_prune(lg, cfg.optimizer, cfg.run.prune_quantile)
    _sync_pose_graph(lg, pg, pg_info)
    closer.finish(pg, lg.poses)
    _, pg_report = lm_optimize(pg, opts=cfg.optimizer)
    return RunResult(graphs, TrajectoryEstimate.from_graph(pg), TrajectoryEstimate.from_graph(lg),
                     loops=closer.edges_added, pruned=pruned,
                     reports={"landmark_graph": lg_report, "pose_graph": pg_report})


def manifest(cfg: RunConfig, result: RunResult, relations: Path | None) -> dict:
    import matplotlib
    import scipy

    lg, pg = result.graphs.landmark_graph, result.graphs.pose_graph
    return {
        # the output directory is left out so reruns elsewhere compare equal
        "config": [ln for ln in dump_config(cfg).splitlines() if not ln.startswith("out = ")],
        "versions": {"somaslam": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "matplotlib": matplotlib.__version__},
        "poses": len(pg.poses),
        "landmarks": len(lg.landmarks),
        "landmark_graph_edges": lg.edge_counts(),
        "pose_graph_edges": pg.edge_counts(),
        "ll_edge_count": result.ll_edge_count,
        "loop_edge_count": len(pg.loop_edges()),
        "pruned_edges": result.pruned,
        "relations": str(relations) if relations else None,
        "error_summary": None if result.summary is None else dict(
            (k, v) for k, v in (kv.split("=") for kv in result.summary.record().split())),
    }


def run(cfg: RunConfig) -> RunResult:
    """Full run writing every artifact into ``cfg.run.out``."""
    cfg.validate(need_dataset=True)
    scans = load_scans(cfg)
    result = run_slam(scans, cfg)
    rel_path = relations_path(cfg)
    est = result.estimate if cfg.run.estimate == "pose_graph" else result.landmark_estimate
    if rel_path is not None:
        result.summary = relation_errors(est, parse_relations(rel_path), cfg.run.match_tolerance)

    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    art = result.artifacts
    art["trajectory"] = export_trajectory(est, out / "trajectory.txt")
    art["map_svg"] = render_map(result.graphs, est, out / "map.svg")
    report = out / "optimization_report.txt"
    with report.open("w", encoding="utf-8", newline="\n") as fh:
        for name, rep in result.reports.items():
            fh.write(f"# {name}: iterations={rep.iterations} initial_chi2={rep.initial_chi2:.12g} "
                     f"final_chi2={rep.final_chi2:.12g}\n{rep.text()}\n")
    art["report"] = report
    if result.summary is not None:
        errors = out / "errors.txt"
        errors.write_text(result.summary.text() + "\n" + result.summary.record() + "\n", encoding="utf-8")
        art["errors"] = errors
    if cfg.run.render:
        from .plotting import plot_relation_errors, render_map_png

        art["map_png"] = render_map_png(result.graphs, est, out / "map.png")
        if result.summary is not None:
            art["errors_png"] = plot_relation_errors(result.summary, out / "relation_errors.png")
    man = out / "manifest.json"
    man.write_text(json.dumps(manifest(cfg, result, rel_path), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    art["manifest"] = man
    return result
