"""Timing reports: per-event latency and the perimeter-versus-area scaling family."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .frontier import DetectorConfig, DetectorRun, FrontierDetector, run_detector
from .geometry import RigidTransform2
from .grid import CellClass, Submap, probability_to_storage
from .oracle import assemble_global_map, naive_global_frontier

LATENCY_FIELDS = (
    "mean_update_latency_ms",
    "std_update_latency_ms",
    "update_frequency_hz",
    "mean_optimization_latency_ms",
    "std_optimization_latency_ms",
    "submap_update_events",
    "skipped_submap_update_events",
    "processed_events",
    "pose_graph_optimization_events",
    "total_processing_time_s",
)


def _ms_stats(values: np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        return 0.0, 0.0
    return float(values.mean() * 1e3), float(values.std() * 1e3)


def latency_report(run: DetectorRun) -> dict:
    """Latency summary of one detector run; every field is always present."""
    scans = run.latencies("scan")
    opts = run.latencies("optimized")
    mean_scan, std_scan = _ms_stats(scans)
    mean_opt, std_opt = _ms_stats(opts)
    return {
        "mean_update_latency_ms": mean_scan,
        "std_update_latency_ms": std_scan,
        "update_frequency_hz": 1e3 / mean_scan if mean_scan > 0 else 0.0,
        "mean_optimization_latency_ms": mean_opt,
        "std_optimization_latency_ms": std_opt,
        "submap_update_events": run.scan_events,
        "skipped_submap_update_events": run.skipped,
        "processed_events": len(run.processed),
        "pose_graph_optimization_events": run.optimization_events,
        "total_processing_time_s": float(run.latencies().sum()) if run.processed else 0.0,
    }


def final_frontier_equal(a: FrontierDetector, b: FrontierDetector) -> bool:
    fa, fb = a.global_frontier(), b.global_frontier()
    return fa.keys() == fb.keys() and all(np.array_equal(fa[k], fb[k]) for k in fa)


def skip_comparison(events, config: DetectorConfig, skip: str = "forced") -> dict:
    events = list(events)
    plain, skipping = FrontierDetector(config), FrontierDetector(config)
    run_plain = run_detector(events, plain, skip="none")
    run_skip = run_detector(events, skipping, skip=skip)
    return {
        "policy": skip,
        "identical_final_frontier": final_frontier_equal(plain, skipping),
        "processed_events_without_skip": len(run_plain.processed),
        "processed_events_with_skip": len(run_skip.processed),
        "skipped_submap_update_events": run_skip.skipped,
    }


# -- scaling family -------------------------------------------------------------


@dataclass
class ScalingCase:
    side: float
    submaps: list[Submap]
    poses: dict[int, RigidTransform2]
    resolution: float


def door_room_submap(submap_id: int, side: float, resolution: float, door: float = 1.0) -> Submap:
    """A fully observed square room whose only opening is a fixed-width door.

    A short free patch beyond the door is also observed, so the local
    frontier wraps around that patch and its size does not depend on ``side``.
    """
    n = int(round(side / resolution))
    d = int(round(door / resolution))
    free = probability_to_storage(0.3)
    wall = probability_to_storage(0.7)
    grid = np.zeros((n + 2 + d, n + 2), dtype=np.uint16)
    grid[: n + 2, :] = wall
    grid[1: n + 1, 1: n + 1] = free
    mid = (n + 2) // 2
    lo, hi = mid - d // 2, mid - d // 2 + d
    grid[n + 1:, lo:hi] = free  # doorway and the patch outside it
    sm = Submap(submap_id, resolution, 1, RigidTransform2.identity())
    sm.storage = grid
    sm.offset = (0, 0)
    sm.inserted_scans = 1
    sm.finished = True
    return sm


def scaling_case(side: float, resolution: float = 0.05, n_submaps: int = 4, shift_cells: int = 3) -> ScalingCase:
    """Room submaps in pairs; the second pair sits ``shift_cells`` further out,
    so part of the first pair's frontier is covered and fails a stabbing test."""
    submaps = [door_room_submap(i, side, resolution) for i in range(n_submaps)]
    poses = {
        i: RigidTransform2(shift_cells * resolution if i >= n_submaps // 2 else 0.0, 0.0, 0.0)
        for i in range(n_submaps)
    }
    return ScalingCase(side, submaps, poses, resolution)


def _median_time(fn, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def measure_scaling_case(case: ScalingCase, repeats: int = 15) -> dict:
    detector = FrontierDetector(DetectorConfig.verification())
    for sm in case.submaps:
        detector.handle_submap_updates([sm], {sm.id: case.poses[sm.id]})
    detector.handle_optimization(case.poses)  # settle hints
    t_opt = _median_time(lambda: detector.handle_optimization(case.poses), repeats)
    stats = detector.last_stats
    submaps = {s.id: s for s in case.submaps}

    def oracle():
        naive_global_frontier(assemble_global_map(submaps, case.poses, case.resolution))

    t_oracle = _median_time(oracle, max(3, repeats // 3))
    grid = assemble_global_map(submaps, case.poses, case.resolution)
    free_cells = int((grid.classes == CellClass.FREE).sum())
    perimeter = sum(len(detector.local_frontier(i)) for i in detector.submap_ids)
    return {
        "side_m": case.side,
        "free_area_m2": free_cells * case.resolution ** 2,
        "local_frontier_points": perimeter,
        "failing_points": stats.failing_points,
        "optimization_median_s": t_opt,
        "oracle_median_s": t_oracle,
    }


def scaling_report(sides=(8.0, 16.0), resolution: float = 0.05, repeats: int = 15) -> dict:
    rows = [measure_scaling_case(scaling_case(s, resolution), repeats) for s in sides]
    first, last = rows[0], rows[-1]
    return {
        "cases": rows,
        "area_ratio": last["free_area_m2"] / first["free_area_m2"],
        "perimeter_ratio": last["local_frontier_points"] / max(1, first["local_frontier_points"]),
        "optimization_time_ratio": last["optimization_median_s"] / first["optimization_median_s"],
        "oracle_time_ratio": last["oracle_median_s"] / first["oracle_median_s"],
    }

