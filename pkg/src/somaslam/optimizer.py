"""Sparse Levenberg-Marquardt over pose / line-landmark graphs.

The objective is the plain sum of information-weighted squared residuals,
``sum(e^T Omega e)`` over pose-pose, pose-landmark and landmark-landmark
edges. Linear systems are solved with a banded Cholesky factorisation after
a reverse Cuthill-McKee reordering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.stats import chi2 as chi2_dist

from .core import (
    LinePolar,
    Pose2,
    batch_canonicalize,
    batch_landmark_landmark,
    batch_pose_landmark,
    batch_pose_pose,
    wrap_angles,
)
from .errors import OptimizationError
from .graph import Graph

log = logging.getLogger(__name__)


@dataclass
class StateVector:
    """Pose blocks ``(x, y, theta)`` followed by landmark blocks ``(rho, theta)``."""

    pose_ids: list[int]
    landmark_ids: list[int]
    poses: np.ndarray
    lines: np.ndarray

    def __post_init__(self):
        self.pose_index = {pid: i for i, pid in enumerate(self.pose_ids)}
        self.landmark_index = {lid: i for i, lid in enumerate(self.landmark_ids)}

    @classmethod
    def from_graph(cls, graph: Graph) -> "StateVector":
        pids = sorted(graph.poses)
        lids = sorted(graph.landmarks)
        poses = np.array([[graph.poses[i].x, graph.poses[i].y, graph.poses[i].theta] for i in pids], float)
        lines = np.array([[graph.landmarks[i].rho, graph.landmarks[i].theta] for i in lids], float)
        return cls(pids, lids, poses.reshape(-1, 3), lines.reshape(-1, 2))

    @property
    def dim(self) -> int:
        return 3 * len(self.pose_ids) + 2 * len(self.landmark_ids)

    def pose_offset(self, pose_id: int) -> int:
        return 3 * self.pose_index[pose_id]

    def landmark_offset(self, landmark_id: int) -> int:
        return 3 * len(self.pose_ids) + 2 * self.landmark_index[landmark_id]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.poses.ravel(), self.lines.ravel()])

    def with_vector(self, v: np.ndarray) -> "StateVector":
        """State from a raw vector; angles wrapped, lines canonicalized."""
        n = 3 * len(self.pose_ids)
        poses = v[:n].reshape(-1, 3).copy()
        poses[:, 2] = wrap_angles(poses[:, 2])
        lines = v[n:].reshape(-1, 2)
        lines = batch_canonicalize(lines) if len(lines) else lines.copy()
        return StateVector(self.pose_ids, self.landmark_ids, poses, lines)

    def retract(self, delta: np.ndarray) -> "StateVector":
        return self.with_vector(self.as_vector() + delta)

    def apply_to(self, graph: Graph) -> None:
        """Write the estimate back into ``graph`` (landmark endpoints follow their lines)."""
        for i, pid in enumerate(self.pose_ids):
            graph.poses[pid] = Pose2(*self.poses[i])
        for i, lid in enumerate(self.landmark_ids):
            graph.landmarks[lid] = graph.landmarks[lid].with_line(LinePolar(*self.lines[i]))


@dataclass
class LinearSystem:
    H: sp.csr_matrix
    b: np.ndarray
    chi2: float
    free: np.ndarray  # indices of variables that take part in the solve


@dataclass
class LMOptions:
    max_iterations: int = 50
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 2.0
    relative_tolerance: float = 1e-6
    step_tolerance: float = 1e-10
    max_lambda: float = 1e12
    min_lambda: float = 1e-12
    max_tries: int = 10


@dataclass
class LMReport:
    iterations: int = 0
    initial_chi2: float = 0.0
    final_chi2: float = 0.0
    accepted: int = 0
    rejected: int = 0
    lines: list[str] = field(default_factory=list)
    chi2_history: list[float] = field(default_factory=list)

    def text(self) -> str:
        return "\n".join(self.lines)


# --------------------------------------------------------------------------
# edge packing
# --------------------------------------------------------------------------


class _Packed:
    """Active edges of a graph as index/measurement arrays for one state layout."""

    def __init__(self, graph: Graph, state: StateVector):
        pidx, lidx = state.pose_index, state.landmark_index
        npose = 3 * len(state.pose_ids)

        pp = [e for e in graph.pose_pose_edges if e.active]
        self.pp_i = np.array([pidx[e.from_id] for e in pp], dtype=int)
        self.pp_j = np.array([pidx[e.to_id] for e in pp], dtype=int)
        self.pp_z = np.array([[e.measurement.x, e.measurement.y, e.measurement.theta] for e in pp], float).reshape(-1, 3)
        self.pp_info = np.array([e.information for e in pp], float).reshape(-1, 3, 3)
        self.pp_cols = np.concatenate(
            [3 * self.pp_i[:, None] + np.arange(3), 3 * self.pp_j[:, None] + np.arange(3)], axis=1
        ) if pp else np.zeros((0, 6), int)

        pl = [e for e in graph.pl_edges if e.active]
        self.pl_p = np.array([pidx[e.pose_id] for e in pl], dtype=int)
        self.pl_l = np.array([lidx[e.landmark_id] for e in pl], dtype=int)
        self.pl_z = np.array([[e.measurement.rho, e.measurement.theta] for e in pl], float).reshape(-1, 2)
        self.pl_info = np.array([e.information for e in pl], float).reshape(-1, 2, 2)
        self.pl_cols = np.concatenate(
            [3 * self.pl_p[:, None] + np.arange(3), npose + 2 * self.pl_l[:, None] + np.arange(2)], axis=1
        ) if pl else np.zeros((0, 5), int)

        ll = [e for e in graph.ll_edges if e.active]
        self.ll_1 = np.array([lidx[e.landmark1_id] for e in ll], dtype=int)
        self.ll_2 = np.array([lidx[e.landmark2_id] for e in ll], dtype=int)
        self.ll_delta = np.array([e.delta_theta_ideal for e in ll], float)
        self.ll_w = np.array([e.weight for e in ll], float)
        self.ll_cols = np.column_stack([npose + 2 * self.ll_1 + 1, npose + 2 * self.ll_2 + 1]) if ll else np.zeros((0, 2), int)

    def residuals(self, state: StateVector):
        e_pp = batch_pose_pose(state.poses[self.pp_i], state.poses[self.pp_j], self.pp_z)[0] if len(self.pp_i) else np.zeros((0, 3))
        e_pl = batch_pose_landmark(state.poses[self.pl_p], state.lines[self.pl_l], self.pl_z)[0] if len(self.pl_p) else np.zeros((0, 2))
        e_ll = batch_landmark_landmark(state.lines[self.ll_1, 1], state.lines[self.ll_2, 1], self.ll_delta) if len(self.ll_1) else np.zeros(0)
        return e_pp, e_pl, e_ll

    def chi2_terms(self, state: StateVector):
        e_pp, e_pl, e_ll = self.residuals(state)
        c_pp = np.einsum("ei,eij,ej->e", e_pp, self.pp_info, e_pp)
        c_pl = np.einsum("ei,eij,ej->e", e_pl, self.pl_info, e_pl)
        c_ll = self.ll_w * e_ll**2
        return c_pp, c_pl, c_ll

    def chi2(self, state: StateVector) -> float:
        return float(sum(t.sum() for t in self.chi2_terms(state)))


def total_objective(graph: Graph, state: StateVector | None = None) -> float:
    """Weighted squared error of every active edge at ``state`` (default: the graph's estimate)."""
    state = StateVector.from_graph(graph) if state is None else state
    return _Packed(graph, state).chi2(state)


def _assemble(cols_list, jac_list, info_list, err_list, dim):
    rows, cs, data = [], [], []
    b = np.zeros(dim)
    for cols, J, info, e in zip(cols_list, jac_list, info_list, err_list):
        if len(cols) == 0:
            continue
        JtO = np.einsum("eki,ekl->eil", J, info)
        He = np.einsum("eil,elj->eij", JtO, J)
        be = np.einsum("eil,el->ei", JtO, e)
        k = cols.shape[1]
        rows.append(np.repeat(cols, k, axis=1).ravel())
        cs.append(np.tile(cols, (1, k)).ravel())
        data.append(He.ravel())
        np.add.at(b, cols.ravel(), be.ravel())
    if rows:
        H = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cs))), shape=(dim, dim)).tocsr()
    else:
        H = sp.csr_matrix((dim, dim))
    return H, b


def _linearize(graph: Graph, state: StateVector, packed: _Packed) -> LinearSystem:
    dim = state.dim
    cols, jacs, infos, errs = [], [], [], []
    if len(packed.pp_i):
        e, A, B = batch_pose_pose(state.poses[packed.pp_i], state.poses[packed.pp_j], packed.pp_z)
        cols.append(packed.pp_cols)
        jacs.append(np.concatenate([A, B], axis=2))
        infos.append(packed.pp_info)
        errs.append(e)
    if len(packed.pl_p):
        e, Jp, Jl = batch_pose_landmark(state.poses[packed.pl_p], state.lines[packed.pl_l], packed.pl_z)
        cols.append(packed.pl_cols)
        jacs.append(np.concatenate([Jp, Jl], axis=2))
        infos.append(packed.pl_info)
        errs.append(e)
    if len(packed.ll_1):
        e = batch_landmark_landmark(state.lines[packed.ll_1, 1], state.lines[packed.ll_2, 1], packed.ll_delta)
        n = len(e)
        J = np.zeros((n, 1, 2))
        J[:, 0, 0], J[:, 0, 1] = 1.0, -1.0
        cols.append(packed.ll_cols)
        jacs.append(J)
        infos.append(packed.ll_w.reshape(-1, 1, 1))
        errs.append(e.reshape(-1, 1))
    H, b = _assemble(cols, jacs, infos, errs, dim)
    chi2 = float(sum(np.einsum("ei,eij,ej->", e, o, e) for e, o in zip(errs, infos)))

    fixed = np.zeros(dim, dtype=bool)
    for pid in graph.gauge():
        if pid in state.pose_index:
            off = state.pose_offset(pid)
            fixed[off : off + 3] = True
    fixed |= H.diagonal() <= 0.0
    return LinearSystem(H, b, chi2, np.flatnonzero(~fixed))


def linearize(graph: Graph, state: StateVector | None = None) -> LinearSystem:
    """Gauss-Newton system ``H = sum J^T O J``, ``b = sum J^T O e`` at ``state``.

    ``b`` is the gradient of the objective up to a factor of two. The gauge
    pose and variables without any information are excluded from ``free``.
    """
    state = StateVector.from_graph(graph) if state is None else state
    return _linearize(graph, state, _Packed(graph, state))


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------


def sparse_cholesky_solve(A: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` for symmetric positive definite sparse ``A``.

    Raises ``numpy.linalg.LinAlgError`` when ``A`` is not positive definite.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    perm = reverse_cuthill_mckee(A, symmetric_mode=True)
    Ap = A[perm][:, perm].tocoo()
    low = Ap.row >= Ap.col
    r, c, v = Ap.row[low], Ap.col[low], Ap.data[low]
    bw = int((r - c).max()) if len(r) else 0
    ab = np.zeros((bw + 1, n))
    np.add.at(ab, (r - c, c), v)
    cb = scipy.linalg.cholesky_banded(ab, lower=True, check_finite=False)
    x = scipy.linalg.cho_solve_banded((cb, True), rhs[perm], check_finite=False)
    out = np.empty(n)
    out[perm] = x
    return out


def _damped(H: sp.csr_matrix, free: np.ndarray, lam: float) -> sp.csr_matrix:
    Hf = H[free][:, free]
    d = Hf.diagonal()
    return (Hf + sp.diags(lam * d)).tocsr()


def lm_optimize(graph: Graph, state: StateVector | None = None, opts: LMOptions | None = None,
                write_back: bool = True) -> tuple[StateVector, LMReport]:
    """Levenberg-Marquardt with Marquardt (``lambda * diag(H)``) damping."""
    opts = opts or LMOptions()
    state = StateVector.from_graph(graph) if state is None else state
    packed = _Packed(graph, state)
    chi2 = packed.chi2(state)
    report = LMReport(initial_chi2=chi2, final_chi2=chi2, chi2_history=[chi2])
    lam = opts.initial_lambda

    for it in range(1, opts.max_iterations + 1):
        report.iterations = it
        system = _linearize(graph, state, packed)
        free = system.free
        if chi2 == 0.0 or len(free) == 0 or not np.any(system.b[free]):
            report.lines.append(f"iter={it} lambda={lam:.6g} chi2={chi2:.12g} accepted=0 converged=1")
            break
        accepted = False
        escalations = 0
        for _ in range(opts.max_tries):
            try:
                step = sparse_cholesky_solve(_damped(system.H, free, lam), -system.b[free])
            except np.linalg.LinAlgError:
                escalations += 1
                lam *= opts.lambda_up
                if escalations >= opts.max_tries or lam > opts.max_lambda:
                    raise OptimizationError(f"Cholesky factorisation failed at iteration {it} (lambda={lam:.3g})")
                continue
            delta = np.zeros(state.dim)
            delta[free] = step
            candidate = state.retract(delta)
            new_chi2 = packed.chi2(candidate)
            if new_chi2 < chi2:
                assert new_chi2 <= chi2
                report.lines.append(f"iter={it} lambda={lam:.6g} chi2={new_chi2:.12g} accepted=1")
                report.accepted += 1
                rel = (chi2 - new_chi2) / chi2
                if np.abs(step).max() < opts.step_tolerance:
                    rel = 0.0
                state, chi2 = candidate, new_chi2
                lam = max(lam / opts.lambda_down, opts.min_lambda)
                accepted = True
                break
            report.lines.append(f"iter={it} lambda={lam:.6g} chi2={new_chi2:.12g} accepted=0")
            report.rejected += 1
            lam *= opts.lambda_up
            if lam > opts.max_lambda:
                break
        report.chi2_history.append(chi2)
        if not accepted or rel < opts.relative_tolerance:
            break

    report.final_chi2 = chi2
    if write_back:
        state.apply_to(graph)
    return state, report


# --------------------------------------------------------------------------
# consistency pruning
# --------------------------------------------------------------------------


def consistency_prune(graph: Graph, state: StateVector | None = None, quantile: float = 0.95,
                      prune_pose_landmark: bool = False, prune_loops: bool = False) -> int:
    """Deactivate edges whose weighted squared residual exceeds the chi-square quantile.

    Landmark-landmark edges are always eligible; pose-landmark and loop edges
    only when enabled. Deactivated edges stay in the graph.
    """
    state = StateVector.from_graph(graph) if state is None else state
    packed = _Packed(graph, state)
    c_pp, c_pl, c_ll = packed.chi2_terms(state)
    pruned = 0
    ll = [e for e in graph.ll_edges if e.active]
    limit = chi2_dist.ppf(quantile, 1)
    for e, c in zip(ll, c_ll):
        if c > limit:
            e.active = False
            pruned += 1
    if prune_pose_landmark:
        limit = chi2_dist.ppf(quantile, 2)
        for e, c in zip([e for e in graph.pl_edges if e.active], c_pl):
            if c > limit:
                e.active = False
                pruned += 1
    if prune_loops:
        limit = chi2_dist.ppf(quantile, 3)
        for e, c in zip([e for e in graph.pose_pose_edges if e.active], c_pp):
            if e.kind == "loop" and c > limit:
                e.active = False
                pruned += 1
    if pruned:
        log.debug("consistency check deactivated %d edges", pruned)
    return pruned


def optimize_and_prune(graph: Graph, opts: LMOptions | None = None, quantile: float = 0.95,
                       prune_pose_landmark: bool = False, prune_loops: bool = False):
    """Optimize, prune inconsistent edges, and re-optimize once if anything was pruned."""
    state, report = lm_optimize(graph, opts=opts)
    pruned = consistency_prune(graph, state, quantile, prune_pose_landmark, prune_loops)
    if pruned:
        state, second = lm_optimize(graph, state, opts)
        report.lines += second.lines
        report.iterations += second.iterations
        report.accepted += second.accepted
        report.rejected += second.rejected
        report.final_chi2 = second.final_chi2
        report.chi2_history += second.chi2_history[1:]
    return state, report, pruned
