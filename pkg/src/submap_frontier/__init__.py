"""Incremental frontier detection for submap-based 2D graph SLAM."""

from .events import OptimizationDone, PoseGraphSolution, ScanInserted, SubmapFinished
from .frontier import (
    DetectorConfig,
    FrontierDetector,
    FrontierUpdate,
    LocalFrontier,
    detect_local_frontier,
    run_detector,
    run_detector_threaded,
    stabbing_query_test,
)
from .geometry import BoundingBox, Point2, RigidTransform2
from .grid import CellClass, Scan, Submap
from .oracle import assemble_global_map, compare, naive_global_frontier
from .spatial_index import BoundingBoxIndex

__all__ = [
    "BoundingBox",
    "BoundingBoxIndex",
    "CellClass",
    "DetectorConfig",
    "FrontierDetector",
    "FrontierUpdate",
    "LocalFrontier",
    "OptimizationDone",
    "Point2",
    "PoseGraphSolution",
    "RigidTransform2",
    "Scan",
    "ScanInserted",
    "Submap",
    "SubmapFinished",
    "assemble_global_map",
    "compare",
    "detect_local_frontier",
    "naive_global_frontier",
    "run_detector",
    "run_detector_threaded",
    "stabbing_query_test",
]
