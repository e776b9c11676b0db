import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.stats import chi2 as chi2_dist

from conftest import segment_landmark
from somaslam.core import (
    LandmarkLandmarkEdge,
    LinePolar,
    Pose2,
    PoseLandmarkEdge,
    PosePoseEdge,
    line_to_frame,
    make_landmark,
    se2_between,
    se2_compose,
)
from somaslam.errors import OptimizationError
from somaslam.graph import Graph
from somaslam.optimizer import (
    LMOptions,
    StateVector,
    consistency_prune,
    linearize,
    lm_optimize,
    optimize_and_prune,
    sparse_cholesky_solve,
    total_objective,
)


def _lm(id, rho, theta, length=2.0):
    line = LinePolar(rho, theta)
    c = line.rho * line.normal
    return make_landmark(id, line, np.array([c - line.direction * length / 2, c + line.direction * length / 2]), 5)


def _ll_graph(t1=0.0, t2=1.5, weight=5.0):
    g = Graph()
    g.landmarks = {0: _lm(0, 3.0, t1), 1: _lm(1, 3.0, t2)}
    g.ll_edges.append(LandmarkLandmarkEdge(0, 1, math.pi / 2, weight))
    return g


def _odometry_chain(n, rng, noise=0.0):
    truth = [Pose2()]
    for _ in range(n - 1):
        truth.append(se2_compose(truth[-1], Pose2(1.0, 0.0, rng.uniform(-0.4, 0.4))))
    g = Graph()
    for i, p in enumerate(truth):
        g.add_pose(i, Pose2(p.x + (rng.normal(0, noise) if i else 0), p.y + (rng.normal(0, noise) if i else 0),
                            p.theta + (rng.normal(0, noise) if i else 0)))
    for i in range(n - 1):
        g.pose_pose_edges.append(PosePoseEdge(i, i + 1, se2_between(truth[i], truth[i + 1]), np.diag([100, 100, 400.0])))
    return g, truth


def _random_graph(rng, n_poses=6, n_lm=4, noise=0.05):
    """Small landmark graph with odometry, pose-landmark and LL edges, all noisy."""
    g = Graph()
    p = Pose2()
    for i in range(n_poses):
        g.add_pose(i, p)
        p = se2_compose(p, Pose2(0.5, rng.normal(0, 0.1), rng.normal(0, 0.2)))
    for i in range(n_poses - 1):
        z = se2_between(g.poses[i], g.poses[i + 1])
        g.pose_pose_edges.append(PosePoseEdge(i, i + 1, Pose2(z.x + rng.normal(0, noise), z.y, z.theta + rng.normal(0, noise)),
                                              np.diag([50.0, 40.0, 90.0])))
    for j in range(n_lm):
        g.landmarks[j] = _lm(j, rng.uniform(2, 6), rng.uniform(-3, 3))
    for i in range(n_poses):
        for j in range(n_lm):
            m = line_to_frame(g.poses[i], g.landmarks[j].line)
            g.pl_edges.append(PoseLandmarkEdge(i, j, LinePolar(m.rho + rng.normal(0, noise), m.theta + rng.normal(0, noise)),
                                               np.diag([30.0, 60.0])))
    for j in range(1, n_lm):
        g.ll_edges.append(LandmarkLandmarkEdge(j - 1, j, math.pi / 2 * rng.integers(-2, 3), rng.uniform(1, 5)))
    # perturb the estimate
    for i in range(1, n_poses):
        q = g.poses[i]
        g.poses[i] = Pose2(q.x + rng.normal(0, 0.1), q.y + rng.normal(0, 0.1), q.theta + rng.normal(0, 0.05))
    for j in range(n_lm):
        lm = g.landmarks[j]
        g.landmarks[j] = lm.with_line(LinePolar(lm.rho + rng.normal(0, 0.1), lm.theta + rng.normal(0, 0.05)))
    return g


# ---------------------------------------------------------------- objective


def test_objective_examples():
    g, _ = _odometry_chain(4, np.random.default_rng(0))
    assert total_objective(g) == pytest.approx(0.0, abs=1e-20)
    g = _ll_graph(0.0, math.pi / 2 - 0.1)
    assert total_objective(g) == pytest.approx(0.05)
    g = Graph()
    g.add_pose(0, Pose2())
    g.landmarks[0] = _lm(0, 5.0, 0.0)
    g.pl_edges.append(PoseLandmarkEdge(0, 0, LinePolar(5.1, 0.0), np.diag([400.0, 2500.0])))
    assert total_objective(g) == pytest.approx(4.0)


def test_state_vector_layout():
    g = _random_graph(np.random.default_rng(1))
    s = StateVector.from_graph(g)
    assert s.dim == 3 * len(g.poses) + 2 * len(g.landmarks)
    assert s.landmark_offset(0) == 3 * len(g.poses)
    np.testing.assert_array_equal(s.with_vector(s.as_vector()).as_vector(), s.as_vector())


# ---------------------------------------------------------------- linearization


def test_linearize_zero_residual():
    g, _ = _odometry_chain(5, np.random.default_rng(0))
    sysm = linearize(g)
    np.testing.assert_allclose(sysm.b, 0.0, atol=1e-12)


def test_linearize_single_ll_edge():
    g = _ll_graph(weight=5.0)
    s = StateVector.from_graph(g)
    H = linearize(g, s).H.toarray()
    t1, t2 = s.landmark_offset(0) + 1, s.landmark_offset(1) + 1
    assert H[t1, t1] == H[t2, t2] == pytest.approx(5.0)
    assert H[t1, t2] == H[t2, t1] == pytest.approx(-5.0)
    H[[t1, t1, t2, t2], [t1, t2, t1, t2]] = 0.0
    assert not H.any()


def test_disconnected_landmark_block_zero():
    g = _ll_graph()
    g.landmarks[2] = _lm(2, 1.0, 1.0)
    s = StateVector.from_graph(g)
    sysm = linearize(g, s)
    o = s.landmark_offset(2)
    assert not sysm.H.toarray()[o : o + 2].any()
    assert o not in sysm.free and o + 1 not in sysm.free


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g = _random_graph(rng, n_poses=int(rng.integers(2, 8)), n_lm=int(rng.integers(1, 6)))
        s = StateVector.from_graph(g)
        sysm = linearize(g, s)
        x0 = s.as_vector()
        h = 1e-6
        for k in range(len(x0)):
            d = np.zeros(len(x0))
            d[k] = h
            fd = (total_objective(g, s.with_vector(x0 + d)) - total_objective(g, s.with_vector(x0 - d))) / (2 * h)
            assert 2 * sysm.b[k] == pytest.approx(fd, rel=1e-5, abs=1e-5)


def test_gauge_fixed_system_positive_definite():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = _random_graph(rng)
        sysm = linearize(g)
        Hf = sysm.H[sysm.free][:, sysm.free].toarray()
        assert 0 not in sysm.free
        np.testing.assert_allclose(Hf, Hf.T, atol=1e-9)
        for lam in (0.0, 1e-4, 1.0):
            assert np.linalg.eigvalsh(Hf + lam * np.diag(np.diag(Hf))).min() > 0


def test_sparse_cholesky_solve(rng):
    A = rng.normal(size=(30, 30))
    A = A @ A.T + 30 * np.eye(30)
    A[np.abs(A) < 2] = 0.0
    A = 0.5 * (A + A.T) + 30 * np.eye(30)
    rhs = rng.normal(size=30)
    np.testing.assert_allclose(sparse_cholesky_solve(sp.csr_matrix(A), rhs), np.linalg.solve(A, rhs), atol=1e-9)
    with pytest.raises(np.linalg.LinAlgError):
        sparse_cholesky_solve(sp.csr_matrix(-np.eye(3)), np.ones(3))


# ---------------------------------------------------------------- LM


def test_odometry_chain_converges():
    rng = np.random.default_rng(11)
    g, truth = _odometry_chain(30, rng, noise=0.05)
    _, rep = lm_optimize(g)
    assert rep.final_chi2 < 1e-10
    assert rep.iterations <= 10
    for i, p in enumerate(truth):
        assert g.poses[i].x == pytest.approx(p.x, abs=1e-5) and g.poses[i].y == pytest.approx(p.y, abs=1e-5)


def test_zero_residual_start_stops_at_once():
    g, _ = _odometry_chain(5, np.random.default_rng(0))
    before = total_objective(g)
    _, rep = lm_optimize(g)
    assert before < 1e-20
    assert rep.iterations == 1 and rep.final_chi2 <= rep.initial_chi2 == before


def test_ll_edge_snaps_free_landmark():
    g = _ll_graph(0.0, 1.50)
    g.add_pose(0, Pose2())
    g.pl_edges.append(PoseLandmarkEdge(0, 0, LinePolar(3.0, 0.0), np.diag([1e4, 1e4])))
    lm_optimize(g)
    assert g.landmarks[0].theta == pytest.approx(0.0, abs=1e-9)
    assert g.landmarks[1].theta - g.landmarks[0].theta == pytest.approx(math.pi / 2, abs=1e-9)


def test_accepted_steps_monotone_and_report():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = _random_graph(rng)
        _, rep = lm_optimize(g)
        hist = rep.chi2_history
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert rep.final_chi2 <= rep.initial_chi2
        assert rep.accepted + rep.rejected == len(rep.text().splitlines()) - ("converged=1" in rep.text())
        assert rep.final_chi2 == pytest.approx(total_objective(g))


def test_solution_is_stationary():
    g = _random_graph(np.random.default_rng(9))
    lm_optimize(g, opts=LMOptions(max_iterations=200, relative_tolerance=1e-14))
    sysm = linearize(g)
    assert np.abs(sysm.b[sysm.free]).max() < 1e-6


def test_small_instance_matches_brute_force():
    """Two poses and one landmark: LM agrees with a grid search polished by BFGS."""
    rng = np.random.default_rng(2)
    for _ in range(3):
        g = Graph()
        g.add_pose(0, Pose2())
        g.add_pose(1, Pose2(1.0, 0.2, 0.1))
        g.landmarks[0] = _lm(0, 3.0, 0.3)
        g.pose_pose_edges.append(PosePoseEdge(0, 1, Pose2(1.0 + rng.normal(0, 0.05), 0.0, 0.05), np.diag([10, 10, 20.0])))
        for pid in (0, 1):
            m = line_to_frame(g.poses[pid], g.landmarks[0].line)
            g.pl_edges.append(PoseLandmarkEdge(pid, 0, LinePolar(m.rho + rng.normal(0, 0.1), m.theta + rng.normal(0, 0.05)),
                                               np.diag([5.0, 8.0])))
        s0 = StateVector.from_graph(g)

        def f(v):
            x = s0.as_vector().copy()
            x[3:] = v
            return total_objective(g, s0.with_vector(x))

        lo = s0.as_vector()[3:]
        best = None
        for d in itertools.product(*[np.linspace(-0.3, 0.3, 4)] * 5):
            val = f(lo + np.array(d))
            if best is None or val < best[0]:
                best = (val, lo + np.array(d))
        polished = minimize(f, best[1], method="BFGS", options={"gtol": 1e-12})
        _, rep = lm_optimize(g, opts=LMOptions(max_iterations=200, relative_tolerance=1e-15))
        assert rep.final_chi2 == pytest.approx(polished.fun, abs=1e-6)


def test_cholesky_failure_is_reported(monkeypatch):
    import somaslam.optimizer as opt

    def broken(A, rhs):
        raise np.linalg.LinAlgError("not PD")

    monkeypatch.setattr(opt, "sparse_cholesky_solve", broken)
    g = _random_graph(np.random.default_rng(0))
    with pytest.raises(OptimizationError, match="iteration 1"):
        lm_optimize(g)


# ---------------------------------------------------------------- pruning


def test_prune_examples():
    g, _ = _odometry_chain(4, np.random.default_rng(0))
    assert consistency_prune(g) == 0

    g = _ll_graph(0.0, math.pi / 2 - 1.0, weight=50.0)  # squared weighted residual 50
    assert total_objective(g) == pytest.approx(50.0)
    assert consistency_prune(g) == 1
    assert not g.ll_edges[0].active and len(g.ll_edges) == 1
    assert total_objective(g) == 0.0


def test_prune_boundary_not_pruned(monkeypatch):
    import somaslam.optimizer as opt

    g = _ll_graph(0.0, math.pi / 2 - 0.5, weight=4.0)
    c = total_objective(g)
    monkeypatch.setattr(opt.chi2_dist, "ppf", lambda q, dof: c)
    assert consistency_prune(g) == 0
    monkeypatch.setattr(opt.chi2_dist, "ppf", lambda q, dof: math.nextafter(c, 0.0))
    assert consistency_prune(g) == 1


def test_pose_landmark_pruning_is_opt_in():
    g = Graph()
    g.add_pose(0, Pose2())
    g.landmarks[0] = _lm(0, 5.0, 0.0)
    g.pl_edges.append(PoseLandmarkEdge(0, 0, LinePolar(6.0, 0.0), np.diag([400.0, 2500.0])))
    assert consistency_prune(g) == 0
    assert consistency_prune(g, prune_pose_landmark=True) == 1


def test_optimize_and_prune_keeps_nodes():
    g = _random_graph(np.random.default_rng(4))
    g.ll_edges.append(LandmarkLandmarkEdge(0, 1, 0.0, 1e4))  # contradicts the data
    poses, lms = set(g.poses), set(g.landmarks)
    _, rep, pruned = optimize_and_prune(g)
    assert pruned >= 1
    assert set(g.poses) == poses and set(g.landmarks) == lms
    assert rep.final_chi2 == pytest.approx(total_objective(g))
