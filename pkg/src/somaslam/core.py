"""SE(2) geometry, polar line algebra and the graph error terms.

Conventions
-----------
* Angles live in ``(-pi, pi]``.
* A line ``(rho, theta)`` is the set ``{p : p . (cos theta, sin theta) = rho}``.
  Canonical lines keep ``rho >= 0``; when ``rho == 0`` the normal angle is
  restricted to ``(-pi/2, pi/2]``.
* Lines are undirected, so angular residuals involving lines are reduced
  to ``(-pi/2, pi/2]`` by adding multiples of ``pi``.

Scalar functions here operate on the value types; the ``batch_*`` functions
are the vectorised equivalents used by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidArgumentError

TAU = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


# --------------------------------------------------------------------------
# angles
# --------------------------------------------------------------------------


def wrap_angle(a: float) -> float:
    """Wrap ``a`` to ``(-pi, pi]``."""
    a = float(a)
    if not math.isfinite(a):
        raise InvalidArgumentError(f"cannot wrap non-finite angle {a!r}")
    r = a - TAU * round(a / TAU)
    if r <= -math.pi:
        r += TAU
    elif r > math.pi:
        r -= TAU
    return r


def wrap_angles(a) -> np.ndarray:
    """Vectorised :func:`wrap_angle` (no finiteness check)."""
    a = np.asarray(a, dtype=float)
    r = a - TAU * np.round(a / TAU)
    r = np.where(r <= -math.pi, r + TAU, r)
    return np.where(r > math.pi, r - TAU, r)


def wrap_half_turn(a: float) -> float:
    """Reduce an undirected-line angular residual to ``(-pi/2, pi/2]``."""
    r = wrap_angle(a)
    if r > HALF_PI:
        r -= math.pi
    elif r <= -HALF_PI:
        r += math.pi
    return r


def wrap_half_turns(a) -> np.ndarray:
    r = wrap_angles(a)
    r = np.where(r > HALF_PI, r - math.pi, r)
    return np.where(r <= -HALF_PI, r + math.pi, r)


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"non-finite value {v!r}")


# --------------------------------------------------------------------------
# SE(2)
# --------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Pose2:
    """Planar pose; ``theta`` is wrapped on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        _finite(self.x, self.y, self.theta)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def compose(self, other: "Pose2") -> "Pose2":
        return se2_compose(self, other)

    def inverse(self) -> "Pose2":
        return se2_inverse(self)

    def transform_points(self, points) -> np.ndarray:
        """Map ``(N, 2)`` points from this pose's frame into the parent frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.x
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.y
        return out

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return se2_compose(self, other)


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def se2_inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-c * a.x - s * a.y, s * a.x - c * a.y, -a.theta)


def se2_between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose ``a^-1 (+) b``; exactly the identity when ``a == b``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


# --------------------------------------------------------------------------
# lines
# --------------------------------------------------------------------------


def canonicalize_line(rho: float, theta: float) -> tuple[float, float]:
    rho = float(rho)
    theta = wrap_angle(theta)
    if rho < 0.0:
        rho, theta = -rho, wrap_angle(theta + math.pi)
    if rho == 0.0:
        rho = 0.0  # drop a negative zero
        if theta > HALF_PI or theta <= -HALF_PI:
            theta = wrap_angle(theta + math.pi)
    return rho, theta


@dataclass(frozen=True, slots=True)
class LinePolar:
    """Infinite line in normal form; always stored canonical."""

    rho: float
    theta: float

    def __post_init__(self):
        _finite(self.rho, self.theta)
        rho, theta = canonicalize_line(self.rho, self.theta)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", theta)

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @property
    def direction(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def signed_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return pts @ self.normal - self.rho

    def project(self, points) -> np.ndarray:
        """Orthogonal projection of ``(N, 2)`` points onto the line."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return pts - np.outer(self.signed_distance(pts), self.normal)

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.theta])


def line_to_frame(pose: Pose2, line: LinePolar) -> LinePolar:
    """Express a line given in the parent frame in the frame of ``pose``."""
    c, s = math.cos(line.theta), math.sin(line.theta)
    return LinePolar(line.rho - (pose.x * c + pose.y * s), line.theta - pose.theta)


def line_from_frame(pose: Pose2, line: LinePolar) -> LinePolar:
    """Inverse of :func:`line_to_frame`: local line -> parent frame."""
    return line_to_frame(se2_inverse(pose), line)


def line_angle_difference(a: float, b: float) -> float:
    """Smallest angle between two undirected line normals, in ``[0, pi/2]``."""
    return abs(wrap_half_turn(a - b))


# --------------------------------------------------------------------------
# graph elements
# --------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class LineLandmark:
    """A line feature in the global frame bounded by two endpoints."""

    id: int
    line: LinePolar
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    support: int = 0

    @property
    def length(self) -> float:
        (ax, ay), (bx, by) = self.endpoints
        return math.hypot(bx - ax, by - ay)

    @property
    def theta(self) -> float:
        return self.line.theta

    @property
    def rho(self) -> float:
        return self.line.rho

    def endpoint_array(self) -> np.ndarray:
        return np.array(self.endpoints, dtype=float)

    def with_line(self, line: LinePolar) -> "LineLandmark":
        """Move to a new line estimate, re-projecting the endpoints onto it."""
        ends = line.project(self.endpoint_array())
        return LineLandmark(self.id, line, _ends(ends), self.support)


def _ends(arr) -> tuple[tuple[float, float], tuple[float, float]]:
    a = np.asarray(arr, dtype=float)
    return ((float(a[0, 0]), float(a[0, 1])), (float(a[1, 0]), float(a[1, 1])))


def make_landmark(id: int, line: LinePolar, endpoints, support: int = 0) -> LineLandmark:
    return LineLandmark(id, line, _ends(line.project(endpoints)), support)


@dataclass(slots=True)
class PoseLandmarkEdge:
    pose_id: int
    landmark_id: int
    measurement: LinePolar
    information: np.ndarray = field(default_factory=lambda: np.eye(2))
    active: bool = True


@dataclass(slots=True)
class LandmarkLandmarkEdge:
    """Soft orientation constraint; ``landmark1_id`` is the older anchor."""

    landmark1_id: int
    landmark2_id: int
    delta_theta_ideal: float
    weight: float
    active: bool = True


@dataclass(slots=True)
class PosePoseEdge:
    """Relative-pose constraint; ``kind`` is ``"odometry"`` or ``"loop"``."""

    from_id: int
    to_id: int
    measurement: Pose2
    information: np.ndarray = field(default_factory=lambda: np.eye(3))
    kind: str = "odometry"
    active: bool = True


# --------------------------------------------------------------------------
# errors and Jacobians (scalar)
# --------------------------------------------------------------------------


def pose_landmark_error(pose: Pose2, landmark: LineLandmark | LinePolar, meas) -> np.ndarray:
    """Measured minus predicted line in the pose frame, ``(e_rho, e_alpha)``."""
    return pose_landmark_jacobians(pose, landmark, meas)[0]


def pose_landmark_jacobians(pose: Pose2, landmark, meas):
    """Return ``(e, J_pose (2x3), J_landmark (2x2))``.

    The prediction is taken in whichever of its two equivalent polar forms
    lies within a quarter turn of the measured angle.
    """
    line = landmark.line if isinstance(landmark, LineLandmark) else landmark
    m_rho, m_alpha = _meas_tuple(meas)
    c, s = math.cos(line.theta), math.sin(line.theta)
    rho_l = line.rho - (pose.x * c + pose.y * s)
    theta_l = line.theta - pose.theta
    d = wrap_angle(m_alpha - theta_l)
    sign = 1.0
    if d > HALF_PI or d <= -HALF_PI:
        sign = -1.0
        d = wrap_angle(d - math.pi)
    e = np.array([m_rho - sign * rho_l, d])
    j_pose = np.array([[sign * c, sign * s, 0.0], [0.0, 0.0, 1.0]])
    j_lm = np.array([[-sign, -sign * (pose.x * s - pose.y * c)], [0.0, -1.0]])
    return e, j_pose, j_lm


def _meas_tuple(meas) -> tuple[float, float]:
    if isinstance(meas, LinePolar):
        return meas.rho, meas.theta
    return float(meas[0]), float(meas[1])


def landmark_landmark_error(l1, l2, edge: LandmarkLandmarkEdge | float) -> float:
    """Ideal orientation of ``l2`` (anchored on ``l1``) minus its estimate."""
    delta = edge.delta_theta_ideal if isinstance(edge, LandmarkLandmarkEdge) else float(edge)
    return wrap_half_turn(delta + _theta(l1) - _theta(l2))


def _theta(l) -> float:
    if isinstance(l, (LineLandmark, LinePolar)):
        return l.theta
    return float(l)


def landmark_landmark_jacobians(l1, l2, edge):
    """Return ``(e, d e / d theta_1, d e / d theta_2)``; rho blocks are zero."""
    return landmark_landmark_error(l1, l2, edge), 1.0, -1.0


def pose_pose_error(xi: Pose2, xj: Pose2, z: Pose2) -> np.ndarray:
    return pose_pose_jacobians(xi, xj, z)[0]


def pose_pose_jacobians(xi: Pose2, xj: Pose2, z: Pose2):
    """Return ``(e, A, B)`` for ``e = [Rz^T (Ri^T (tj - ti) - tz), thj - thi - thz]``."""
    ci, si = math.cos(xi.theta), math.sin(xi.theta)
    cz, sz = math.cos(z.theta), math.sin(z.theta)
    rit = np.array([[ci, si], [-si, ci]])
    rzt = np.array([[cz, sz], [-sz, cz]])
    dt = np.array([xj.x - xi.x, xj.y - xi.y])
    tz = np.array([z.x, z.y])
    e = np.empty(3)
    e[:2] = rzt @ (rit @ dt - tz)
    e[2] = wrap_angle(xj.theta - xi.theta - z.theta)
    drit = np.array([[-si, ci], [-ci, -si]])
    a = np.zeros((3, 3))
    a[:2, :2] = -rzt @ rit
    a[:2, 2] = rzt @ drit @ dt
    a[2, 2] = -1.0
    b = np.zeros((3, 3))
    b[:2, :2] = rzt @ rit
    b[2, 2] = 1.0
    return e, a, b


def error_jacobians(edge, poses: dict, landmarks: dict):
    """Dispatch on edge type; returns the error and one Jacobian per state block.

    ``poses`` maps pose id -> :class:`Pose2`; ``landmarks`` maps landmark id ->
    :class:`LineLandmark`. The result is ``(e, {block_key: J})`` where block keys
    are ``("pose", id)`` or ``("landmark", id)``.
    """
    if isinstance(edge, PoseLandmarkEdge):
        e, jp, jl = pose_landmark_jacobians(
            poses[edge.pose_id], landmarks[edge.landmark_id], edge.measurement
        )
        return e, {("pose", edge.pose_id): jp, ("landmark", edge.landmark_id): jl}
    if isinstance(edge, LandmarkLandmarkEdge):
        e, d1, d2 = landmark_landmark_jacobians(
            landmarks[edge.landmark1_id], landmarks[edge.landmark2_id], edge
        )
        return np.array([e]), {
            ("landmark", edge.landmark1_id): np.array([[0.0, d1]]),
            ("landmark", edge.landmark2_id): np.array([[0.0, d2]]),
        }
    if isinstance(edge, PosePoseEdge):
        e, a, b = pose_pose_jacobians(poses[edge.from_id], poses[edge.to_id], edge.measurement)
        return e, {("pose", edge.from_id): a, ("pose", edge.to_id): b}
    raise InvalidArgumentError(f"unknown edge type {type(edge).__name__}")


# --------------------------------------------------------------------------
# batched versions used by the optimizer
# --------------------------------------------------------------------------


def batch_pose_landmark(poses: np.ndarray, lines: np.ndarray, meas: np.ndarray):
    """Vectorised :func:`pose_landmark_jacobians`.

    ``poses`` (E,3), ``lines`` (E,2), ``meas`` (E,2) -> ``e`` (E,2),
    ``J_pose`` (E,2,3), ``J_landmark`` (E,2,2).
    """
    x, y, phi = poses[:, 0], poses[:, 1], poses[:, 2]
    rho, theta = lines[:, 0], lines[:, 1]
    c, s = np.cos(theta), np.sin(theta)
    rho_l = rho - (x * c + y * s)
    d = wrap_angles(meas[:, 1] - (theta - phi))
    flip = (d > HALF_PI) | (d <= -HALF_PI)
    sign = np.where(flip, -1.0, 1.0)
    d = np.where(flip, wrap_angles(d - math.pi), d)
    n = len(poses)
    e = np.column_stack([meas[:, 0] - sign * rho_l, d])
    jp = np.zeros((n, 2, 3))
    jp[:, 0, 0] = sign * c
    jp[:, 0, 1] = sign * s
    jp[:, 1, 2] = 1.0
    jl = np.zeros((n, 2, 2))
    jl[:, 0, 0] = -sign
    jl[:, 0, 1] = -sign * (x * s - y * c)
    jl[:, 1, 1] = -1.0
    return e, jp, jl


def batch_landmark_landmark(theta1: np.ndarray, theta2: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return wrap_half_turns(delta + theta1 - theta2)


def batch_pose_pose(xi: np.ndarray, xj: np.ndarray, z: np.ndarray):
    """Vectorised :func:`pose_pose_jacobians`; returns ``e`` (E,3), ``A``, ``B`` (E,3,3)."""
    ci, si = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
    dx, dy = xj[:, 0] - xi[:, 0], xj[:, 1] - xi[:, 1]
    # Ri^T dt
    ux = ci * dx + si * dy
    uy = -si * dx + ci * dy
    vx, vy = ux - z[:, 0], uy - z[:, 1]
    n = len(xi)
    e = np.empty((n, 3))
    e[:, 0] = cz * vx + sz * vy
    e[:, 1] = -sz * vx + cz * vy
    e[:, 2] = wrap_angles(xj[:, 2] - xi[:, 2] - z[:, 2])
    # Rz^T Ri^T
    m00 = cz * ci - sz * si
    m01 = cz * si + sz * ci
    m10 = -sz * ci - cz * si
    m11 = -sz * si + cz * ci
    # d(Ri^T)/dth dt
    wx = -si * dx + ci * dy
    wy = -ci * dx - si * dy
    a = np.zeros((n, 3, 3))
    a[:, 0, 0], a[:, 0, 1] = -m00, -m01
    a[:, 1, 0], a[:, 1, 1] = -m10, -m11
    a[:, 0, 2] = cz * wx + sz * wy
    a[:, 1, 2] = -sz * wx + cz * wy
    a[:, 2, 2] = -1.0
    b = np.zeros((n, 3, 3))
    b[:, 0, 0], b[:, 0, 1] = m00, m01
    b[:, 1, 0], b[:, 1, 1] = m10, m11
    b[:, 2, 2] = 1.0
    return e, a, b


def batch_compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    return np.column_stack(
        [a[:, 0] + c * b[:, 0] - s * b[:, 1], a[:, 1] + s * b[:, 0] + c * b[:, 1], wrap_angles(a[:, 2] + b[:, 2])]
    )


def batch_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``a^-1 (+) b`` for ``(N, 3)`` arrays."""
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, wrap_angles(b[:, 2] - a[:, 2])])


def batch_canonicalize(lines: np.ndarray) -> np.ndarray:
    rho = lines[:, 0].astype(float).copy()
    theta = wrap_angles(lines[:, 1])
    neg = rho < 0
    rho[neg] = -rho[neg]
    theta[neg] = wrap_angles(theta[neg] + math.pi)
    zero = (rho == 0.0) & ((theta > HALF_PI) | (theta <= -HALF_PI))
    theta[zero] = wrap_angles(theta[zero] + math.pi)
    rho[rho == 0.0] = 0.0
    return np.column_stack([rho, theta])


def poses_to_array(poses: Iterable[Pose2]) -> np.ndarray:
    return np.array([[p.x, p.y, p.theta] for p in poses], dtype=float).reshape(-1, 3)
