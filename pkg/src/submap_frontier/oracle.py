"""Naive reference: assemble the whole global map, then edge-detect it.

Deliberately simple and slow.  Used to check the incremental detector and as
the area-proportional baseline in benchmarks.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .events import OptimizationDone, ScanInserted
from .geometry import RigidTransform2, global_bounding_box
from .grid import (
    UNOBSERVED_STORAGE,
    CellClass,
    Submap,
    cell_centers,
    point_to_cell,
    storage_to_probability,
)

_MOORE = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]

# odds products this close to 1 are observed but neither free nor occupied
_LOG_ODDS_TIE = 1e-9


@dataclass
class GlobalGrid:
    """Merged cell classes on the global lattice.

    ``classes[a, b]`` is global cell ``(a + origin[0], b + origin[1])``.
    """

    classes: np.ndarray
    origin: tuple[int, int]
    resolution: float
    log_odds: np.ndarray = field(default=None, repr=False)

    @classmethod
    def empty(cls, resolution: float) -> GlobalGrid:
        return cls(np.zeros((0, 0), dtype=np.int8), (0, 0), resolution,
                   np.zeros((0, 0)))

    def class_at(self, points: np.ndarray) -> np.ndarray:
        """Class of the global cell nearest each point; off-grid is unobserved."""
        cells = point_to_cell(np.asarray(points, dtype=float).reshape(-1, 2), self.resolution)
        a = cells[:, 0] - self.origin[0]
        b = cells[:, 1] - self.origin[1]
        nx, ny = self.classes.shape
        inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
        out = np.full(len(cells), CellClass.UNOBSERVED, dtype=np.int8)
        out[inside] = self.classes[a[inside], b[inside]]
        return out

    def free_adjacent(self, points: np.ndarray) -> np.ndarray:
        cells = point_to_cell(np.asarray(points, dtype=float).reshape(-1, 2), self.resolution)
        out = np.zeros(len(cells), dtype=bool)
        nx, ny = self.classes.shape
        for dx, dy in _MOORE:
            a = cells[:, 0] + dx - self.origin[0]
            b = cells[:, 1] + dy - self.origin[1]
            inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
            hit = np.zeros(len(cells), dtype=bool)
            hit[inside] = self.classes[a[inside], b[inside]] == CellClass.FREE
            out |= hit
        return out


def assemble_global_map(
    submaps: Mapping[int, Submap],
    poses: Mapping[int, RigidTransform2],
    resolution: float | None = None,
) -> GlobalGrid:
    """Fuse all submaps onto a global lattice anchored at the origin.

    Each global cell center is looked up in every submap (nearest cell
    center).  Cells no submap has observed stay unobserved; the rest combine
    the observed probabilities by odds product and are thresholded at 0.5.
    """
    maps = [(i, s) for i, s in sorted(submaps.items()) if s.storage.size]
    if resolution is None:
        if not submaps:
            raise ValueError("resolution needed for an empty submap set")
        resolution = next(iter(submaps.values())).resolution
    if not maps:
        return GlobalGrid.empty(resolution)
    boxes = [global_bounding_box(s, poses[i]) for i, s in maps]
    lo = np.floor(np.array([min(b.min_x for b in boxes), min(b.min_y for b in boxes)]) / resolution)
    hi = np.floor(np.array([max(b.max_x for b in boxes), max(b.max_y for b in boxes)]) / resolution)
    origin = lo.astype(np.int64) - 1
    shape = tuple((hi.astype(np.int64) + 1) - origin + 1)
    log_odds = np.zeros(shape)
    observed = np.zeros(shape, dtype=bool)

    for (i, s), box in zip(maps, boxes):
        # only global cells inside this submap's box can see it
        c_lo = np.floor(np.array([box.min_x, box.min_y]) / resolution).astype(np.int64) - 1
        c_hi = np.floor(np.array([box.max_x, box.max_y]) / resolution).astype(np.int64) + 1
        gx = np.arange(c_lo[0], c_hi[0] + 1)
        gy = np.arange(c_lo[1], c_hi[1] + 1)
        grid_cells = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        centers = cell_centers(grid_cells, resolution)
        local = poses[i].inverse().apply(centers)
        values, inside = s.lookup(point_to_cell(local, s.resolution))
        seen = inside & (values != UNOBSERVED_STORAGE)
        if not seen.any():
            continue
        p = storage_to_probability(values[seen])
        a = grid_cells[seen, 0] - origin[0]
        b = grid_cells[seen, 1] - origin[1]
        log_odds[a, b] += np.log(p / (1.0 - p))
        observed[a, b] = True

    classes = np.full(shape, CellClass.UNOBSERVED, dtype=np.int8)
    classes[observed & (log_odds < -_LOG_ODDS_TIE)] = CellClass.FREE
    classes[observed & (log_odds >= -_LOG_ODDS_TIE)] = CellClass.OCCUPIED
    return GlobalGrid(classes, (int(origin[0]), int(origin[1])), resolution, log_odds)


def naive_global_frontier(grid: GlobalGrid) -> np.ndarray:
    """Centers of unobserved global cells with a free Moore neighbour."""
    if grid.classes.size == 0:
        return np.zeros((0, 2))
    padded = np.pad(grid.classes, 1, constant_values=CellClass.UNOBSERVED)
    nx, ny = grid.classes.shape
    free_near = np.zeros(grid.classes.shape, dtype=bool)
    for dx, dy in _MOORE:
        free_near |= padded[1 + dx:1 + dx + nx, 1 + dy:1 + dy + ny] == CellClass.FREE
    idx = np.argwhere((grid.classes == CellClass.UNOBSERVED) & free_near)
    return cell_centers(idx + np.asarray(grid.origin), grid.resolution)


@dataclass
class ComparisonReport:
    matched: int
    missing: np.ndarray
    hard_extras: np.ndarray
    merge_conflict_extras: np.ndarray
    detector_points: int
    oracle_points: int
    # unobserved, free-adjacent, but farther than the tolerance from the
    # cell center; only possible when submaps sit off the global lattice
    offset_extras: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def ok(self) -> bool:
        return len(self.missing) == 0 and len(self.hard_extras) == 0

    def counts(self) -> dict:
        return {
            "detector_points": self.detector_points,
            "oracle_points": self.oracle_points,
            "matched": self.matched,
            "missing": len(self.missing),
            "hard_extras": len(self.hard_extras),
            "merge_conflict_extras": len(self.merge_conflict_extras),
            "offset_extras": len(self.offset_extras),
        }

    def summary(self) -> str:
        c = self.counts()
        status = "OK" if self.ok else "FAIL"
        return (f"{status}: {c['matched']}/{c['oracle_points']} oracle points matched, "
                f"{c['missing']} missing, {c['hard_extras']} hard extras, "
                f"{c['merge_conflict_extras']} merge-conflict extras "
                f"({c['detector_points']} detector points)")


def compare(
    detector_frontier: np.ndarray,
    oracle_frontier: np.ndarray,
    grid: GlobalGrid,
    tolerance: float | None = None,
) -> ComparisonReport:
    """Match detector points to oracle cell centers within ``tolerance``.

    Oracle points are global cell centers, so each detector point can only
    match the center of the global cell containing it.  Unmatched detector
    points on unobserved global cells are the tolerated merge-conflict case;
    unmatched points on observed cells are hard extras.
    """
    r = grid.resolution
    tol = r / 2.0 if tolerance is None else tolerance
    det = np.asarray(detector_frontier, dtype=float).reshape(-1, 2)
    ora = np.asarray(oracle_frontier, dtype=float).reshape(-1, 2)

    ora_keys = {tuple(c) for c in point_to_cell(ora, r).tolist()}
    det_cells = point_to_cell(det, r)
    close = np.linalg.norm(det - cell_centers(det_cells, r), axis=1) <= tol
    det_keys = [tuple(c) for c in det_cells.tolist()]
    is_match = np.array([ok and k in ora_keys for ok, k in zip(close, det_keys)], dtype=bool)
    matched_keys = {k for k, m in zip(det_keys, is_match) if m}
    missing = np.array([p for p, k in zip(ora.tolist(), point_to_cell(ora, r).tolist())
                        if tuple(k) not in matched_keys]).reshape(-1, 2)

    extras = det[~is_match]
    unobserved = grid.class_at(extras) == CellClass.UNOBSERVED
    free_adj = grid.free_adjacent(extras)
    return ComparisonReport(
        matched=len(matched_keys),
        missing=missing,
        hard_extras=extras[~unobserved],
        merge_conflict_extras=extras[unobserved & ~free_adj],
        detector_points=len(det),
        oracle_points=len(ora),
        offset_extras=extras[unobserved & free_adj],
    )


def oracle_check(submaps, poses, detector_points, resolution=None) -> ComparisonReport:
    grid = assemble_global_map(submaps, poses, resolution)
    return compare(detector_points, naive_global_frontier(grid), grid)


class ReferenceState:
    """Latest snapshot of every submap and the current poses, straight from events.

    Kept apart from the detector so the oracle never reads detector state.
    """

    def __init__(self):
        self.submaps: dict[int, Submap] = {}
        self.poses: dict[int, RigidTransform2] = {}

    def apply(self, event) -> None:
        if isinstance(event, ScanInserted):
            for s in event.submaps:
                self.submaps[s.id] = s
            self.poses.update(event.poses)
        elif isinstance(event, OptimizationDone):
            self.poses.update(event.solution.poses)

    def check(self, detector_points: np.ndarray, resolution: float) -> ComparisonReport:
        return oracle_check(self.submaps, self.poses, detector_points, resolution)
