"""Incremental frontier detection over occupancy-grid submaps.

The detector keeps, per submap, a local frontier (unobserved cells next to
free cells in that submap alone) and a global frontier (the local frontier
projected by the current submap pose, minus points that land on observed
cells of any other submap).  Scan updates only touch the active submaps and
the finished submaps overlapping them; pose-graph optimizations re-project
and re-test the stored local frontiers without re-reading any grid.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from collections import deque
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .events import Event, MalformedEventError, OptimizationDone, ScanInserted, SubmapFinished
from .geometry import BoundingBox, Point2, RigidTransform2, global_bounding_box
from .grid import CellClass, Submap, cell_centers, classify_storage, point_to_cell
from .spatial_index import BoundingBoxIndex

log = logging.getLogger(__name__)

NO_HINT = -1

_MOORE = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


class MissingPoseError(KeyError):
    pass


@dataclass
class DetectorConfig:
    epsilon: float = 0.04
    smoothing: bool = False
    # number of preceding submaps to bake stabbing results against; 0 disables
    baking: int = 4

    @classmethod
    def verification(cls) -> DetectorConfig:
        return cls(epsilon=0.0, smoothing=False, baking=0)


@dataclass
class LocalFrontier:
    """Frontier cells of one submap, as lattice indices in its local frame."""

    owner: int
    cells: np.ndarray
    hints: np.ndarray

    @classmethod
    def empty(cls, owner: int) -> LocalFrontier:
        return cls(owner, np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.cells)

    def cell_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.cells.tolist()))

    def hint_map(self) -> dict[tuple[int, int], int]:
        return {
            tuple(c): int(h)
            for c, h in zip(self.cells.tolist(), self.hints.tolist())
            if h != NO_HINT
        }


class FrontierUpdate:
    """Replacement global frontier for one submap."""

    __slots__ = ("submap_id", "points")

    def __init__(self, submap_id: int, points: np.ndarray):
        pts = np.array(points, dtype=np.float64).reshape(-1, 2)
        pts.setflags(write=False)
        self.submap_id = int(submap_id)
        self.points = pts

    def __eq__(self, other):
        if not isinstance(other, FrontierUpdate):
            return NotImplemented
        return self.submap_id == other.submap_id and np.array_equal(self.points, other.points)

    def __repr__(self):
        return f"FrontierUpdate(submap_id={self.submap_id}, count={len(self.points)})"

    def to_record(self) -> dict:
        return {"submap": self.submap_id, "count": len(self.points), "points": self.points.tolist()}

    @classmethod
    def from_record(cls, record: dict) -> FrontierUpdate:
        pts = np.array(record["points"], dtype=np.float64).reshape(-1, 2)
        if len(pts) != record["count"]:
            raise ValueError(f"frontier record for submap {record['submap']} has wrong count")
        return cls(record["submap"], pts)


def _neighbour_counts(classes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Free and unobserved Moore-neighbour counts; outside cells are unobserved."""
    padded = np.pad(classes, 1, constant_values=CellClass.UNOBSERVED)
    free = padded == CellClass.FREE
    unobs = padded == CellClass.UNOBSERVED
    nx, ny = classes.shape
    n_free = np.zeros(classes.shape, dtype=np.int8)
    n_unobs = np.zeros(classes.shape, dtype=np.int8)
    for dx, dy in _MOORE:
        window = (slice(1 + dx, 1 + dx + nx), slice(1 + dy, 1 + dy + ny))
        n_free += free[window]
        n_unobs += unobs[window]
    return n_free, n_unobs


def local_frontier_mask(classes: np.ndarray, smoothing: bool = False) -> np.ndarray:
    classes = np.asarray(classes)
    if classes.size == 0:
        return np.zeros(classes.shape, dtype=bool)
    n_free, n_unobs = _neighbour_counts(classes)
    unobserved = classes == CellClass.UNOBSERVED
    if smoothing:
        return unobserved & (n_free >= 2) & (n_unobs >= 2)
    return unobserved & (n_free >= 1)


def is_local_frontier_cell(classes: np.ndarray, cell: tuple[int, int], smoothing: bool = False) -> bool:
    """Per-cell frontier predicate over array indices; reference for the vectorized mask."""
    k, l = cell
    nx, ny = classes.shape
    if classes[k, l] != CellClass.UNOBSERVED:
        return False
    n_free = n_unobs = 0
    for dk, dl in _MOORE:
        a, b = k + dk, l + dl
        c = classes[a, b] if 0 <= a < nx and 0 <= b < ny else CellClass.UNOBSERVED
        n_free += c == CellClass.FREE
        n_unobs += c == CellClass.UNOBSERVED
    if smoothing:
        return n_free >= 2 and n_unobs >= 2
    return n_free >= 1


def _stab_pass(
    points: np.ndarray,
    submap: Submap,
    classes: np.ndarray,
    pose: RigidTransform2,
) -> np.ndarray:
    """Vectorized stabbing test: True where the nearest cell is unobserved or off-grid."""
    if len(points) == 0 or classes.size == 0:
        return np.ones(len(points), dtype=bool)
    local = pose.inverse().apply(points)
    cells = point_to_cell(local, submap.resolution)
    a = cells[:, 0] - submap.offset[0]
    b = cells[:, 1] - submap.offset[1]
    nx, ny = classes.shape
    inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
    ok = np.ones(len(points), dtype=bool)
    ok[inside] = classes[a[inside], b[inside]] == CellClass.UNOBSERVED
    return ok


def stabbing_query_test(
    p_g,
    submap: Submap,
    pose: RigidTransform2,
    epsilon: float = 0.0,
    classes: np.ndarray | None = None,
):
    """Stabbing test of global point(s) against one submap under ``pose``.

    Accepts a :class:`Point2` (returns bool) or an ``(n, 2)`` array (returns a
    boolean array).  Points off the submap's grid pass.
    """
    if classes is None:
        classes = classify_storage(submap.storage, epsilon)
    if isinstance(p_g, Point2):
        return bool(_stab_pass(np.array([[p_g.x, p_g.y]]), submap, classes, pose)[0])
    return _stab_pass(np.asarray(p_g, dtype=float).reshape(-1, 2), submap, classes, pose)


def detect_local_frontier(
    submap: Submap,
    config: DetectorConfig | None = None,
    previous: Sequence[Submap] = (),
    classes: np.ndarray | None = None,
) -> LocalFrontier:
    """Dense edge detection on one submap.

    With ``previous`` given (sequential-submap baking), candidate cells that
    land on an observed cell of one of those submaps, placed by their local
    trajectory poses, are dropped for good.
    """
    config = config or DetectorConfig()
    if classes is None:
        classes = classify_storage(submap.storage, config.epsilon)
    mask = local_frontier_mask(classes, config.smoothing)
    idx = np.argwhere(mask)
    cells = idx + np.asarray(submap.offset, dtype=np.int64)
    if len(cells) and previous:
        centers = cell_centers(cells, submap.resolution)
        keep = np.ones(len(cells), dtype=bool)
        for prev in previous:
            rel = prev.local_pose.inverse() @ submap.local_pose
            prev_classes = classify_storage(prev.storage, config.epsilon)
            keep &= _stab_pass(rel.apply(centers), prev, prev_classes, RigidTransform2.identity())
        cells = cells[keep]
    return LocalFrontier(submap.id, cells, np.full(len(cells), NO_HINT, dtype=np.int64))


@dataclass
class _SubmapState:
    submap: Submap
    classes: np.ndarray
    pose: RigidTransform2
    bbox: BoundingBox | None
    finished: bool
    lf: LocalFrontier
    projected: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    valid: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    published: np.ndarray | None = None

    def global_points(self) -> np.ndarray:
        return self.projected[self.valid]


@dataclass
class CallStats:
    stab_tests: int = 0
    tests_on_failing: int = 0
    failing_points: int = 0
    candidate_points: int = 0


class FrontierDetector:
    """Owns all frontier state; feed it events in SLAM order."""

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()
        self._states: dict[int, _SubmapState] = {}
        self._active: set[int] = set()
        self._index = BoundingBoxIndex()
        self.total_stab_tests = 0
        self.last_stats = CallStats()

    # -- read access -----------------------------------------------------

    @property
    def submap_ids(self) -> list[int]:
        return sorted(self._states)

    @property
    def active_ids(self) -> list[int]:
        return sorted(self._active)

    @property
    def finished_ids(self) -> list[int]:
        return sorted(i for i, s in self._states.items() if s.finished)

    def submaps(self) -> dict[int, Submap]:
        return {i: s.submap for i, s in sorted(self._states.items())}

    def poses(self) -> dict[int, RigidTransform2]:
        return {i: s.pose for i, s in sorted(self._states.items())}

    def local_frontier(self, submap_id: int) -> LocalFrontier:
        return self._states[submap_id].lf

    def global_frontier(self) -> dict[int, np.ndarray]:
        return {i: s.global_points() for i, s in sorted(self._states.items())}

    def global_points(self) -> np.ndarray:
        parts = [s.global_points() for _, s in sorted(self._states.items())]
        return np.concatenate(parts) if parts else np.zeros((0, 2))

    @property
    def index(self) -> BoundingBoxIndex:
        return self._index

    # -- stabbing machinery ------------------------------------------------

    def _stab(self, points: np.ndarray, target: int, stats: CallStats) -> np.ndarray:
        st = self._states[target]
        stats.stab_tests += len(points)
        self.total_stab_tests += len(points)
        return _stab_pass(points, st.submap, st.classes, st.pose)

    def _test_points(
        self,
        points: np.ndarray,
        candidates: list[int],
        hints: np.ndarray,
        stats: CallStats,
        owner: int,
        use_hints: bool,
    ) -> np.ndarray:
        """Test points against every candidate; failures update ``hints`` in place."""
        n = len(points)
        passed = np.ones(n, dtype=bool)
        tests = np.zeros(n, dtype=np.int64)
        hint_tested = np.zeros(n, dtype=bool)
        if use_hints and n:
            for h in np.unique(hints[hints != NO_HINT]).tolist():
                if h == owner or h not in self._states:
                    continue
                sel = np.nonzero(hints == h)[0]
                ok = self._stab(points[sel], h, stats)
                tests[sel] += 1
                hint_tested[sel] = True
                passed[sel[~ok]] = False
        for c in candidates:
            sel = np.nonzero(passed & ~(hint_tested & (hints == c)))[0]
            if len(sel) == 0:
                continue
            ok = self._stab(points[sel], c, stats)
            tests[sel] += 1
            failed = sel[~ok]
            passed[failed] = False
            hints[failed] = c
        stats.candidate_points += n
        stats.failing_points += int((~passed).sum())
        stats.tests_on_failing += int(tests[~passed].sum())
        return passed

    # -- algorithm entry points -------------------------------------------

    def _register(self, submap: Submap, pose: RigidTransform2) -> _SubmapState:
        prev = self._states.get(submap.id)
        if prev is not None and prev.finished:
            raise MalformedEventError(f"update for already finished submap {submap.id}")
        classes = classify_storage(submap.storage, self.config.epsilon)
        bbox = global_bounding_box(submap, pose) if submap.storage.size else None
        lf = prev.lf if prev is not None else LocalFrontier.empty(submap.id)
        st = _SubmapState(submap, classes, pose, bbox, submap.finished, lf)
        if prev is not None:
            st.projected, st.valid, st.published = prev.projected, prev.valid, prev.published
        self._states[submap.id] = st
        return st

    def _baking_sources(self, submap_id: int) -> list[Submap]:
        if self.config.baking <= 0:
            return []
        earlier = [i for i in self._states if i < submap_id]
        return [self._states[i].submap for i in sorted(earlier)[-self.config.baking:]]

    def handle_submap_updates(
        self,
        active: Sequence[Submap],
        poses: Mapping[int, RigidTransform2],
    ) -> list[FrontierUpdate]:
        """Handle one round of updates to the active submaps.

        Assumes every stored global frontier point is valid on entry, which
        holds as long as optimizations go through :meth:`handle_optimization`.
        """
        stats = CallStats()
        for s in active:
            if s.id not in poses:
                raise MissingPoseError(f"no pose for active submap {s.id}")
        updated_ids = sorted(s.id for s in active)
        for s in active:
            self._register(s, poses[s.id])
            self._active.add(s.id)
        current_active = set(self._active)
        marked: set[int] = set()

        for si in updated_ids:
            st = self._states[si]
            intersecting = self._index.query_intersecting(st.bbox) if st.bbox else set()
            intersecting.discard(si)
            lf = detect_local_frontier(
                st.submap, self.config, self._baking_sources(si), classes=st.classes
            )
            st.lf = lf
            st.projected = st.pose.apply(cell_centers(lf.cells, st.submap.resolution))
            candidates = sorted(intersecting | (current_active - {si}))
            st.valid = self._test_points(st.projected, candidates, lf.hints, stats, si, False)

            # the new grid of si may cover frontier points of finished neighbours
            for sj in sorted(intersecting):
                stj = self._states[sj]
                idx = np.nonzero(stj.valid)[0]
                if len(idx) == 0:
                    continue
                ok = self._stab(stj.projected[idx], si, stats)
                failed = idx[~ok]
                if len(failed):
                    stj.valid[failed] = False
                    stj.lf.hints[failed] = si
                    marked.add(sj)

        for si in updated_ids:
            st = self._states[si]
            if st.finished:
                self._active.discard(si)
                if st.bbox is not None:
                    self._index.insert(si, st.bbox)

        self.last_stats = stats
        return self._publish(sorted(set(updated_ids) | marked))

    def handle_optimization(self, poses: Mapping[int, RigidTransform2]) -> list[FrontierUpdate]:
        """Recompute every global frontier for a new pose-graph solution."""
        missing = [i for i in self._states if i not in poses]
        if missing:
            raise MissingPoseError(f"solution lacks poses for submaps {missing}")
        stats = CallStats()
        for i, st in self._states.items():
            st.pose = poses[i]
            st.bbox = global_bounding_box(st.submap, st.pose) if st.submap.storage.size else None
        self._index.rebuild(
            (i, st.bbox) for i, st in sorted(self._states.items())
            if st.finished and st.bbox is not None
        )
        for si in sorted(self._states):
            st = self._states[si]
            intersecting = self._index.query_intersecting(st.bbox) if st.bbox else set()
            candidates = sorted((intersecting | self._active) - {si})
            st.projected = st.pose.apply(cell_centers(st.lf.cells, st.submap.resolution))
            st.valid = self._test_points(st.projected, candidates, st.lf.hints, stats, si, True)
        self.last_stats = stats
        return self._publish(sorted(self._states))

    def _publish(self, ids: Iterable[int]) -> list[FrontierUpdate]:
        updates = []
        for i in ids:
            st = self._states[i]
            pts = st.global_points()
            if st.published is not None and np.array_equal(st.published, pts):
                continue
            st.published = pts
            updates.append(FrontierUpdate(i, pts))
        return updates

    def process(self, event: Event) -> list[FrontierUpdate]:
        if isinstance(event, ScanInserted):
            return self.handle_submap_updates(event.submaps, event.poses)
        if isinstance(event, OptimizationDone):
            return self.handle_optimization(event.solution.poses)
        if isinstance(event, SubmapFinished):
            st = self._states.get(event.submap_id)
            if st is None or not st.finished:
                raise MalformedEventError(
                    f"finish event for submap {event.submap_id} without its final update")
            return []
        raise MalformedEventError(f"unknown event {event!r}")

    # -- debug checks ------------------------------------------------------

    def validity_violations(self) -> int:
        """Global frontier points failing a stabbing test against any other submap."""
        bad = 0
        for i, st in self._states.items():
            pts = st.global_points()
            if len(pts) == 0:
                continue
            ok = np.ones(len(pts), dtype=bool)
            for j, other in self._states.items():
                if j != i:
                    ok &= _stab_pass(pts, other.submap, other.classes, other.pose)
            bad += int((~ok).sum())
        return bad

    def literal_soundness_violations(self) -> int:
        """Points not 8-adjacent to a free cell in any submap (never expected)."""
        bad = 0
        for st in self._states.values():
            pts = st.global_points()
            if len(pts) == 0:
                continue
            adjacent = np.zeros(len(pts), dtype=bool)
            for other in self._states.values():
                if other.classes.size == 0:
                    continue
                local = other.pose.inverse().apply(pts)
                cells = point_to_cell(local, other.submap.resolution) - np.asarray(other.submap.offset)
                nx, ny = other.classes.shape
                for dx, dy in _MOORE:
                    a, b = cells[:, 0] + dx, cells[:, 1] + dy
                    inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
                    hit = np.zeros(len(pts), dtype=bool)
                    hit[inside] = other.classes[a[inside], b[inside]] == CellClass.FREE
                    adjacent |= hit
            bad += int((~adjacent).sum())
        return bad


# -- event loop ---------------------------------------------------------------

SKIP_POLICIES = ("none", "adaptive", "forced")


@dataclass
class ProcessedEvent:
    index: int
    kind: str
    updates: list[FrontierUpdate]
    latency: float


@dataclass
class DetectorRun:
    processed: list[ProcessedEvent] = field(default_factory=list)
    skipped: int = 0
    scan_events: int = 0
    optimization_events: int = 0

    def latencies(self, kind: str | None = None) -> np.ndarray:
        return np.array([p.latency for p in self.processed if kind is None or p.kind == kind])


def event_kind(event: Event) -> str:
    if isinstance(event, ScanInserted):
        return "scan"
    if isinstance(event, OptimizationDone):
        return "optimized"
    if isinstance(event, SubmapFinished):
        return "finished"
    raise MalformedEventError(f"unknown event {event!r}")


def _skippable(event: Event, newer_scan_pending: bool) -> bool:
    return isinstance(event, ScanInserted) and not event.has_final_update and newer_scan_pending


def run_detector(
    events: Iterable[Event],
    detector: FrontierDetector | None = None,
    skip: str = "none",
    on_event=None,
) -> DetectorRun:
    """Drive a detector over an event sequence.

    ``skip="forced"`` drops every non-final scan update that has any later
    scan update in the stream; ``"adaptive"`` only drops one when the next
    pending event is itself a scan update.  Final updates of finishing
    submaps are never dropped.  ``on_event(i, event, detector, updates)`` is
    called after every processed event.
    """
    if skip not in SKIP_POLICIES:
        raise ValueError(f"skip must be one of {SKIP_POLICIES}")
    detector = detector or FrontierDetector()
    events = list(events)
    later_scan = [False] * len(events)
    seen = False
    for i in range(len(events) - 1, -1, -1):
        later_scan[i] = seen
        seen = seen or isinstance(events[i], ScanInserted)
    run = DetectorRun()
    for i, event in enumerate(events):
        kind = event_kind(event)
        if kind == "scan":
            run.scan_events += 1
        elif kind == "optimized":
            run.optimization_events += 1
        if skip == "forced":
            pending = later_scan[i]
        elif skip == "adaptive":
            pending = i + 1 < len(events) and isinstance(events[i + 1], ScanInserted)
        else:
            pending = False
        if _skippable(event, pending):
            run.skipped += 1
            continue
        t0 = time.perf_counter()
        updates = detector.process(event)
        run.processed.append(ProcessedEvent(i, kind, updates, time.perf_counter() - t0))
        if on_event is not None:
            on_event(i, event, detector, updates)
    return run


_DONE = object()


def run_detector_threaded(
    producer: Iterable[Event],
    detector: FrontierDetector | None = None,
    skip: bool = True,
    on_event=None,
    on_produced=None,
) -> DetectorRun:
    """Run the producer on its own thread and the detector on this one.

    With ``skip`` on, a non-final scan update is dropped whenever a newer
    scan update is already waiting in the queue.  ``on_produced(i, event)``
    runs on the producer thread for every event, e.g. to log it.
    """
    detector = detector or FrontierDetector()
    q: queue.Queue = queue.Queue()
    failure: list[BaseException] = []

    def produce():
        try:
            for i, ev in enumerate(producer):
                if on_produced is not None:
                    on_produced(i, ev)
                q.put((i, ev))
        except BaseException as exc:  # surfaced on the consumer side
            failure.append(exc)
        finally:
            q.put(_DONE)

    worker = threading.Thread(target=produce, name="slam-producer", daemon=True)
    worker.start()
    run = DetectorRun()
    pending: deque = deque()
    done = False
    while pending or not done:
        if not pending:
            item = q.get()
            if item is _DONE:
                done = True
                continue
            pending.append(item)
        while not done:
            try:
                item = q.get_nowait()
            except queue.Empty:
                break
            if item is _DONE:
                done = True
            else:
                pending.append(item)
        i, event = pending.popleft()
        kind = event_kind(event)
        if kind == "scan":
            run.scan_events += 1
        elif kind == "optimized":
            run.optimization_events += 1
        newer = skip and any(isinstance(e, ScanInserted) for _, e in pending)
        if _skippable(event, newer):
            run.skipped += 1
            continue
        t0 = time.perf_counter()
        updates = detector.process(event)
        run.processed.append(ProcessedEvent(i, kind, updates, time.perf_counter() - t0))
        if on_event is not None:
            on_event(i, event, detector, updates)
    worker.join()
    if failure:
        raise failure[0]
    return run
