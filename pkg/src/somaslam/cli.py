"""Command line entry point: ``somaslam run | synth | eval``.

``run`` executes the whole pipeline on a dataset and writes its artifacts,
``synth`` generates a synthetic CARMEN log with ground-truth relations, and
``eval`` scores an existing trajectory file against a relations file.
Errors are printed with the tag of the module that raised them.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config, set_value
from .errors import SlamError

log = logging.getLogger("somaslam")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; SOMASLAM__SECTION__KEY variables override it")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somaslam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run SLAM on a dataset and write artifacts")
    p.add_argument("dataset", nargs="?", help="dataset path (overrides dataset.path)")
    _common(p)
    p.add_argument("--format", choices=("carmen", "sparse_csv"), help="dataset format")
    p.add_argument("--relations", help="ground-truth relations file")
    p.add_argument("--beams", type=int, help="beams kept per scan")
    p.add_argument("--no-soft-mw", action="store_true", help="disable landmark-landmark constraints")
    p.add_argument("--estimate", choices=("pose_graph", "landmark_graph"), help="which poses to evaluate")
    p.add_argument("--no-render", action="store_true", help="skip the PNG figures")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--world", help="rectangle, l_corridor or mixed")
    p.add_argument("--beams", type=int, help="beams per simulated scan")
    p.add_argument("--off-angle", type=float, help="tilt of the odd wall in the mixed world, degrees")
    p.add_argument("--noise", type=float, nargs=2, metavar=("SIGMA_XY", "SIGMA_THETA"),
                   help="odometry noise per step")
    p.add_argument("--name", help="file name prefix (default: <world>_seed<seed>)")

    p = sub.add_parser("eval", help="evaluate a trajectory file against relations")
    p.add_argument("trajectory", help="trajectory file with rows 't x y theta'")
    p.add_argument("relations", help="relations file")
    p.add_argument("--tolerance", type=float, default=0.1, help="timestamp matching tolerance [s]")
    p.add_argument("--plot", help="write an error histogram PNG here")
    return parser


def _load(args):
    cfg = load_config(args.config, validate=False)
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not (sep and dot):
            from .errors import ConfigError

            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        set_value(cfg, section.strip(), name.strip(), value)
    if args.seed is not None:
        cfg.run.seed = args.seed
        cfg.synth.seed = args.seed
    if args.out is not None:
        cfg.run.out = args.out
    return cfg


def cmd_run(args) -> int:
    from .pipeline import run

    cfg = _load(args)
    if args.dataset:
        cfg.dataset.path = args.dataset
    if args.format:
        cfg.dataset.format = args.format
    if args.relations:
        cfg.dataset.relations = args.relations
    if args.beams is not None:
        cfg.run.beams = args.beams
    if args.no_soft_mw:
        cfg.run.soft_mw = False
    if args.estimate:
        cfg.run.estimate = args.estimate
    if args.no_render:
        cfg.run.render = False
    cfg.validate(need_dataset=True)
    result = run(cfg)
    lg = result.graphs.landmark_graph
    print(f"poses={len(lg.poses)} landmarks={len(lg.landmarks)} ll_edges={result.ll_edge_count} "
          f"loop_edges={result.loops} pruned={result.pruned}")
    if result.summary is not None:
        print(result.summary.text())
        print(result.summary.record())
    else:
        print("no relations file found; error summary skipped")
    for name, path in sorted(result.artifacts.items()):
        log.info("wrote %s: %s", name, path)
    return 0


def cmd_synth(args) -> int:
    from .synth import simulate, write_dataset

    cfg = _load(args)
    s = cfg.synth
    if args.world:
        s.world = args.world
    if args.beams is not None:
        s.beams = args.beams
    if args.off_angle is not None:
        s.off_angle_deg = args.off_angle
    if args.noise:
        s.sigma_xy, s.sigma_theta = args.noise
    cfg.validate()
    ds = simulate(s)
    name = args.name or f"{s.world}_seed{s.seed}"
    paths = write_dataset(ds, Path(cfg.run.out) / name)
    end = ds.odometry[-1]
    truth = ds.truth[-1]
    drift = ((end.x - truth.x) ** 2 + (end.y - truth.y) ** 2) ** 0.5
    print(f"poses={len(ds.truth)} relations={len(ds.relations)} odometry_end_drift_m={drift:.6f}")
    for kind in ("log", "relations", "truth"):
        print(f"{kind}={paths[kind]}")
    return 0


def cmd_eval(args) -> int:
    from .datasetio import parse_relations
    from .evaluation import parse_trajectory, relation_errors

    est = parse_trajectory(args.trajectory)
    summary = relation_errors(est, parse_relations(args.relations), args.tolerance)
    print(summary.text())
    print(summary.record())
    if args.plot:
        from .plotting import plot_relation_errors

        plot_relation_errors(summary, args.plot)
    return 0


COMMANDS = {"run": cmd_run, "synth": cmd_synth, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SlamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: [io] {exc}", file=sys.stderr)
        return 1
