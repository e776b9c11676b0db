import copy
import math
import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import segment_landmark
from somaslam.core import LandmarkLandmarkEdge, Pose2, PosePoseEdge, se2_compose
from somaslam.datasetio import GroundTruthRelation
from somaslam.errors import EvaluationError, ParseError
from somaslam.evaluation import (
    ErrorSummary,
    TrajectoryEstimate,
    export_trajectory,
    parse_trajectory,
    relation_error,
    relation_errors,
    relations_from_trajectory,
    render_map,
)
from somaslam.graph import SlamGraphs
from somaslam.plotting import plot_relation_errors, render_map_png

finite = st.floats(-50, 50, allow_nan=False)


def _traj(n=10, seed=0):
    rng = np.random.default_rng(seed)
    poses = [Pose2()]
    for _ in range(n - 1):
        poses.append(se2_compose(poses[-1], Pose2(rng.uniform(0, 1), rng.normal(0, 0.1), rng.normal(0, 0.3))))
    return TrajectoryEstimate([0.1 * i for i in range(n)], poses)


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


# ---------------------------------------------------------------- relation errors


def test_identical_trajectory_scores_zero():
    tr = _traj()
    s = relation_errors(tr, relations_from_trajectory(tr, _pairs(len(tr))))
    assert s.translational_mean == 0.0 and s.rotational_mean == 0.0
    assert s.relation_count == 45 and s.skipped == 0


def test_translated_trajectory_scores_zero():
    tr = _traj()
    rels = relations_from_trajectory(tr, _pairs(len(tr)))
    moved = tr.transformed(Pose2(10.0, 10.0, 0.0))
    s = relation_errors(moved, rels)
    assert s.translational_mean < 1e-12 and s.rotational_mean < 1e-12


def test_single_relation_example():
    est = TrajectoryEstimate([0.0, 1.0], [Pose2(), Pose2(1.1, 0.0, 0.05)])
    s = relation_errors(est, [GroundTruthRelation(0.0, 1.0, Pose2(1.0, 0.0, 0.0))])
    assert s.translational_mean == pytest.approx(0.1)
    assert s.rotational_mean == pytest.approx(2.8648, abs=1e-4)
    assert s.translational_std == 0.0 and s.relation_count == 1
    assert relation_error(Pose2(1, 0, 0), Pose2(1.1, 0, 0.05)) == pytest.approx((0.1, math.degrees(0.05)))


def test_population_std():
    est = TrajectoryEstimate([0.0, 1.0, 2.0], [Pose2(), Pose2(1.1, 0, 0), Pose2(2.1, 0, 0)])
    rels = [GroundTruthRelation(0.0, 1.0, Pose2(1, 0, 0)), GroundTruthRelation(1.0, 2.0, Pose2(0.7, 0, 0))]
    s = relation_errors(est, rels)
    assert s.translational_mean == pytest.approx(0.2)
    assert s.translational_std == pytest.approx(0.1)  # population, not sample


def test_unmatched_relations():
    est = TrajectoryEstimate([0.0, 1.0], [Pose2(), Pose2(1, 0, 0)])
    far = GroundTruthRelation(5.0, 6.0, Pose2(1, 0, 0))
    with pytest.raises(EvaluationError, match="1 skipped"):
        relation_errors(est, [far])
    s = relation_errors(est, [far, GroundTruthRelation(0.05, 0.98, Pose2(1, 0, 0))], tolerance=0.1)
    assert s.skipped == 1 and s.relation_count == 1
    with pytest.raises(EvaluationError):
        relation_errors(est, [])


def test_nearest_timestamp():
    est = TrajectoryEstimate([0.0, 1.0, 2.0], [Pose2()] * 3)
    assert est.nearest(0.6, 0.5) == 1 and est.nearest(0.5, 0.5) == 0
    assert est.nearest(3.0, 0.5) is None and est.nearest(-0.2, 0.3) == 0
    with pytest.raises(EvaluationError):
        TrajectoryEstimate([1.0, 1.0], [Pose2()] * 2)


@given(finite, finite, st.floats(-math.pi, math.pi))
def test_rigid_transform_invariance(x, y, th):
    tr = _traj(6, seed=3)
    rels = relations_from_trajectory(_traj(6, seed=4), _pairs(6))
    a = relation_errors(tr, rels)
    b = relation_errors(tr.transformed(Pose2(x, y, th)), rels)
    assert b.translational_mean == pytest.approx(a.translational_mean, abs=1e-9)
    assert b.rotational_mean == pytest.approx(a.rotational_mean, abs=1e-9)


def test_summary_formats():
    s = ErrorSummary(0.1, 0.02, 1.5, 0.25, 7, 2)
    assert s.record() == ("translational_mean_m=0.100000 translational_std_m=0.020000 rotational_mean_deg=1.500000 "
                          "rotational_std_deg=0.250000 relation_count=7 skipped=2")
    assert s.text().splitlines()[0].split() == ["translational_mean_m", "0.100000"]


# ---------------------------------------------------------------- trajectory files


def test_export_examples(tmp_path):
    p = export_trajectory(TrajectoryEstimate(), tmp_path / "e.txt")
    assert p.read_bytes() == b""
    p = export_trajectory(TrajectoryEstimate([1.5], [Pose2()]), tmp_path / "one.txt")
    assert p.read_text() == "1.5 0 0 0\n"


def test_export_round_trip(tmp_path):
    tr = _traj(30, seed=8)
    back = parse_trajectory(export_trajectory(tr, tmp_path / "t.txt"))
    assert back.timestamps == tr.timestamps and back.poses == tr.poses


def test_parse_trajectory_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# comment\n0 0 0 0\n1 2 3\n")
    with pytest.raises(ParseError, match=r"bad.txt:3"):
        parse_trajectory(p)
    p.write_text("1 0 0 0\n0 0 0 0\n")
    with pytest.raises(ParseError, match="increasing"):
        parse_trajectory(p)


# ---------------------------------------------------------------- rendering


def _small_graphs():
    g = SlamGraphs()
    lg = g.landmark_graph
    lg.add_pose(0, Pose2(), 0.0)
    lg.add_pose(1, Pose2(1, 0, 0), 1.0)
    lg.landmarks[0] = segment_landmark(0, (0.0, 2.0), (1.0, 2.0))
    for pid, p in lg.poses.items():
        g.pose_graph.add_pose(pid, p, lg.timestamps[pid])
    return g


def test_svg_empty_graph(tmp_path):
    svg = render_map(SlamGraphs(), None, tmp_path / "e.svg").read_text()
    assert svg.count("<rect") == 1 and "<line" not in svg and "<polyline" not in svg


def test_svg_one_landmark_two_poses(tmp_path):
    g = _small_graphs()
    svg = render_map(g, TrajectoryEstimate.from_graph(g.pose_graph), tmp_path / "m.svg").read_text()
    assert len(re.findall(r"<line ", svg)) == 1 and len(re.findall(r"<polyline ", svg)) == 1
    assert 'class="landmark"' in svg


def test_svg_marks_ll_landmarks_and_loops(tmp_path):
    g = _small_graphs()
    lg = g.landmark_graph
    lg.landmarks[1] = segment_landmark(1, (2.0, 0.0), (2.0, 1.0))
    lg.ll_edges.append(LandmarkLandmarkEdge(0, 1, math.pi / 2, 1.0))
    g.pose_graph.pose_pose_edges.append(PosePoseEdge(0, 1, Pose2(1, 0, 0), np.eye(3), kind="loop"))
    svg = render_map(g, TrajectoryEstimate.from_graph(g.pose_graph), tmp_path / "m.svg").read_text()
    assert svg.count('class="landmark ll"') == 2 and svg.count('class="loop"') == 1


def test_svg_deterministic_and_pure(tmp_path):
    g = _small_graphs()
    est = TrajectoryEstimate.from_graph(g.pose_graph)
    snapshot = copy.deepcopy(g)
    a = render_map(g, est, tmp_path / "a.svg", ground_truth=est).read_bytes()
    b = render_map(g, est, tmp_path / "b.svg", ground_truth=est).read_bytes()
    assert a == b and b'class="ground-truth"' in a
    assert g.landmark_graph.landmarks == snapshot.landmark_graph.landmarks
    assert g.pose_graph.poses == snapshot.pose_graph.poses


def test_png_figures(tmp_path):
    g = _small_graphs()
    est = TrajectoryEstimate.from_graph(g.pose_graph)
    a = render_map_png(g, est, tmp_path / "a.png", ground_truth=est, title="map")
    b = render_map_png(g, est, tmp_path / "b.png", ground_truth=est, title="map")
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" and a.read_bytes() == b.read_bytes()
    s = relation_errors(est, relations_from_trajectory(est, [(0, 1)]))
    p = plot_relation_errors(s, tmp_path / "h.png", title="errors")
    assert p.stat().st_size > 1000
    assert render_map_png(SlamGraphs(), None, tmp_path / "e.png").is_file()
