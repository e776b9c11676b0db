"""Soft Manhattan-world landmark-landmark constraints.

After a segment has been associated with landmark ``l2``, every older
landmark ``l1`` is tested; a constraint is created when the pair is

1. near, in space (segments intersect or an endpoint lies within the
   proximity threshold of the other segment) and in creation order
   (``0 < id2 - id1 < n``),
2. made of significant landmarks (long enough, enough pose-landmark edges),
3. not yet saturated with constraints,

and their orientations differ by nearly a multiple of a quarter turn. The
constraint pulls ``l2``'s orientation towards ``l1``'s plus that multiple,
weighted by the combined landmark length (times ``weight_scale``).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import LandmarkLandmarkEdge, LineLandmark, landmark_landmark_error, wrap_angle
from .errors import InvalidArgumentError
from .graph import Graph

QUARTER_TURNS = (-2, -1, 0, 1, 2)


@dataclass
class SoftMwParams:
    epsilon: float = 0.12
    proximity_threshold: float = 1.0
    temporal_window: int = 30
    min_length: float = 1.0
    min_support: int = 3
    saturation_cap: int = 3
    # information per meter of combined landmark length; 1 keeps the weight at
    # len1 + len2, larger values put it on the scale of the other edge types
    weight_scale: float = 1.0

    def validate(self) -> None:
        for name in ("epsilon", "proximity_threshold", "temporal_window", "min_length", "min_support", "saturation_cap",
                     "weight_scale"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"softmw.{name} must be positive", module="softmw")
        if not self.epsilon < math.pi / 4:
            raise InvalidArgumentError("softmw.epsilon must be below pi/4", module="softmw")


class PairSaturationLedger(Counter):
    """Counts constraints created per unordered landmark pair."""

    @staticmethod
    def key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a <= b else (b, a)

    def count(self, a: int, b: int) -> int:
        return self[self.key(a, b)]

    def record(self, a: int, b: int) -> None:
        self[self.key(a, b)] += 1


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        raise InvalidArgumentError("zero-length segment", module="softmw")
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(a + t * ab - p)))


def segment_pair_distances(l1: LineLandmark, l2: LineLandmark) -> tuple[float, float, float, float]:
    """Each endpoint's distance to the other landmark's segment."""
    a1, b1 = l1.endpoints
    a2, b2 = l2.endpoints
    if l1.length == 0.0 or l2.length == 0.0:
        raise InvalidArgumentError("landmark segment has zero length", module="softmw")
    return (
        point_segment_distance(a1, a2, b2),
        point_segment_distance(b1, a2, b2),
        point_segment_distance(a2, a1, b1),
        point_segment_distance(b2, a1, b1),
    )


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def segments_intersect(l1: LineLandmark, l2: LineLandmark) -> bool:
    p1, p2 = l1.endpoints
    q1, q2 = l2.endpoints
    d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
    d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True
    # touching / collinear overlap cases show up as a zero distance
    return min(segment_pair_distances(l1, l2)) == 0.0


# --------------------------------------------------------------------------
# criteria
# --------------------------------------------------------------------------


def is_spatially_local(l1: LineLandmark, l2: LineLandmark, params: SoftMwParams) -> bool:
    return segments_intersect(l1, l2) or min(segment_pair_distances(l1, l2)) < params.proximity_threshold


def is_temporally_local(l1: LineLandmark, l2: LineLandmark, n: int) -> bool:
    return 0 < l2.id - l1.id < n


def is_significant(l: LineLandmark, params: SoftMwParams) -> bool:
    return l.length > params.min_length and l.support >= params.min_support


def ideal_delta_theta(theta1: float, theta2: float, epsilon: float) -> float | None:
    """Nearest multiple of a quarter turn to ``theta2 - theta1`` if within ``epsilon``."""
    d = wrap_angle(theta2 - theta1)
    best_k = min(QUARTER_TURNS, key=lambda k: (abs(d - k * math.pi / 2), abs(k)))
    if abs(d - best_k * math.pi / 2) < epsilon:
        return best_k * math.pi / 2
    return None


def try_create_ll_edge(l1: LineLandmark, l2: LineLandmark, ledger: PairSaturationLedger,
                       params: SoftMwParams) -> LandmarkLandmarkEdge | None:
    """Edge anchored on the older ``l1`` if every criterion holds; updates ``ledger``."""
    if not is_temporally_local(l1, l2, params.temporal_window):
        return None
    if not (is_significant(l1, params) and is_significant(l2, params)):
        return None
    if ledger.count(l1.id, l2.id) >= params.saturation_cap:
        return None
    if not is_spatially_local(l1, l2, params):
        return None
    delta = ideal_delta_theta(l1.theta, l2.theta, params.epsilon)
    if delta is None:
        return None
    ledger.record(l1.id, l2.id)
    return LandmarkLandmarkEdge(l1.id, l2.id, delta, params.weight_scale * (l1.length + l2.length))


class SoftManhattan:
    """Creates landmark-landmark edges for the landmark just touched by a segment."""

    def __init__(self, params: SoftMwParams | None = None):
        self.params = params or SoftMwParams()
        self.params.validate()
        self.ledger = PairSaturationLedger()

    def update(self, graph: Graph, landmark_id: int) -> list[LandmarkLandmarkEdge]:
        l2 = graph.landmarks[landmark_id]
        n = self.params.temporal_window
        created = []
        for lid in range(max(0, l2.id - n + 1), l2.id):
            l1 = graph.landmarks.get(lid)
            if l1 is None:
                continue
            edge = try_create_ll_edge(l1, l2, self.ledger, self.params)
            if edge is not None:
                graph.ll_edges.append(edge)
                created.append(edge)
        return created

    @staticmethod
    def residual(graph: Graph, edge: LandmarkLandmarkEdge) -> float:
        return landmark_landmark_error(graph.landmarks[edge.landmark1_id], graph.landmarks[edge.landmark2_id], edge)
