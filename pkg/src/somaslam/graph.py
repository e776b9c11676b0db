"""Graph containers shared by the front-end, optimizer and back-end."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .core import (
    LandmarkLandmarkEdge,
    LineLandmark,
    Pose2,
    PoseLandmarkEdge,
    PosePoseEdge,
)


@dataclass
class Graph:
    """Poses, line landmarks and the edges between them.

    The landmark graph uses every field; the pose graph only holds poses and
    pose-pose edges. The smallest pose id is held fixed during optimization
    unless ``fixed_poses`` says otherwise.
    """

    poses: dict[int, Pose2] = field(default_factory=dict)
    landmarks: dict[int, LineLandmark] = field(default_factory=dict)
    pose_pose_edges: list[PosePoseEdge] = field(default_factory=list)
    pl_edges: list[PoseLandmarkEdge] = field(default_factory=list)
    ll_edges: list[LandmarkLandmarkEdge] = field(default_factory=list)
    timestamps: dict[int, float] = field(default_factory=dict)
    fixed_poses: set[int] | None = None
    next_landmark_id: int = 0

    def add_pose(self, pose_id: int, pose: Pose2, timestamp: float | None = None) -> None:
        self.poses[pose_id] = pose
        if timestamp is not None:
            self.timestamps[pose_id] = timestamp

    def gauge(self) -> set[int]:
        if self.fixed_poses is not None:
            return set(self.fixed_poses)
        return {min(self.poses)} if self.poses else set()

    def edges(self, active_only: bool = True):
        for e in (*self.pose_pose_edges, *self.pl_edges, *self.ll_edges):
            if e.active or not active_only:
                yield e

    def edge_counts(self) -> dict[str, int]:
        c = Counter()
        for e in self.pose_pose_edges:
            c[f"{e.kind}_edges" + ("" if e.active else "_inactive")] += 1
        for e in self.pl_edges:
            c["pose_landmark_edges" + ("" if e.active else "_inactive")] += 1
        for e in self.ll_edges:
            c["landmark_landmark_edges" + ("" if e.active else "_inactive")] += 1
        return dict(sorted(c.items()))

    def ll_landmark_ids(self) -> set[int]:
        ids = set()
        for e in self.ll_edges:
            if e.active:
                ids.update((e.landmark1_id, e.landmark2_id))
        return ids

    def loop_edges(self) -> list[PosePoseEdge]:
        return [e for e in self.pose_pose_edges if e.kind == "loop" and e.active]


@dataclass
class SlamGraphs:
    landmark_graph: Graph = field(default_factory=Graph)
    pose_graph: Graph = field(default_factory=Graph)
