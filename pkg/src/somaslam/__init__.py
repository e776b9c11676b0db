"""Graph SLAM for sparse range sensing with soft Manhattan-world constraints."""

__version__ = "0.1.0"

from .core import LinePolar, LineLandmark, Pose2, se2_between, se2_compose, se2_inverse, wrap_angle
from .errors import SlamError
from .graph import Graph, SlamGraphs

__all__ = [
    "Graph",
    "LineLandmark",
    "LinePolar",
    "Pose2",
    "SlamError",
    "SlamGraphs",
    "se2_between",
    "se2_compose",
    "se2_inverse",
    "wrap_angle",
    "__version__",
]
