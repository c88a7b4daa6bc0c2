"""Occupancy-grid submaps with 16-bit probability storage.

Cells live on a lattice anchored at the submap's local origin: lattice cell
``(i, j)`` covers ``[i*r, (i+1)*r) x [j*r, (j+1)*r)`` and has its center at
``((i + 0.5) r, (j + 0.5) r)``.  The storage array only holds a window of the
lattice; ``storage[a, b]`` is lattice cell ``(a + offset[0], b + offset[1])``.
Growing the window shifts the offset, never a cell's local position.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform2

P_MIN = 0.1
P_MAX = 0.9
UNOBSERVED_STORAGE = 0
STORAGE_MAX = 65535
_STEPS = STORAGE_MAX - 1
HALF_QUANTUM = (P_MAX - P_MIN) / _STEPS / 2.0
STORAGE_HALF = 1 + round((0.5 - P_MIN) / (P_MAX - P_MIN) * _STEPS)  # 32768

DEFAULT_P_HIT = 0.55
DEFAULT_P_MISS = 0.49
DEFAULT_RESOLUTION = 0.05
DEFAULT_N_SCANS = 100

# storage value -> probability; entry 0 (unobserved) is reported as 0.5
_PROBABILITY_TABLE = P_MIN + (np.arange(STORAGE_MAX + 1) - 1) * ((P_MAX - P_MIN) / _STEPS)
_PROBABILITY_TABLE[0] = 0.5
_PROBABILITY_TABLE.setflags(write=False)


class CellClass(enum.IntEnum):
    UNOBSERVED = 0
    FREE = 1
    OCCUPIED = 2


class ImmutableSubmapError(RuntimeError):
    """Raised on any attempt to modify a finished submap."""


def clamp_probability(p):
    return np.clip(p, P_MIN, P_MAX)


def probability_to_storage(p):
    """Map probabilities (clamped to [0.1, 0.9]) onto 1..65535."""
    q = clamp_probability(np.asarray(p, dtype=float))
    s = 1 + np.rint((q - P_MIN) / (P_MAX - P_MIN) * _STEPS)
    s = s.astype(np.uint16)
    return int(s) if s.ndim == 0 else s


def storage_to_probability(s):
    """Inverse of :func:`probability_to_storage`; storage 0 reads as 0.5."""
    arr = _PROBABILITY_TABLE[np.asarray(s, dtype=np.int64)]
    return float(arr) if arr.ndim == 0 else arr


def classify_storage(storage, epsilon: float = 0.0) -> np.ndarray:
    """Vectorized thresholding of raw storage values into CellClass codes.

    Unobserved when storage is 0 or ``p`` lies in ``[0.5 - epsilon, 0.5]``,
    free below that interval, occupied above 0.5.
    """
    s = np.asarray(storage)
    p = _PROBABILITY_TABLE[s.astype(np.int64)]
    out = np.full(s.shape, CellClass.UNOBSERVED, dtype=np.int8)
    observed = s != UNOBSERVED_STORAGE
    out[observed & (p < 0.5 - epsilon)] = CellClass.FREE
    out[observed & (p > 0.5)] = CellClass.OCCUPIED
    return out


def classify(p: float | None, epsilon: float = 0.0) -> CellClass:
    """Classify a single probability; ``None`` stands for an unobserved cell."""
    if p is None:
        return CellClass.UNOBSERVED
    if p > 0.5:
        return CellClass.OCCUPIED
    if p < 0.5 - epsilon:
        return CellClass.FREE
    return CellClass.UNOBSERVED


def odds(p):
    return p / (1.0 - p)


def odds_to_probability(o):
    return o / (1.0 + o)


def _update_storage(storage: np.ndarray, observation_p: float, hit: bool) -> np.ndarray:
    p_old = _PROBABILITY_TABLE[storage.astype(np.int64)]
    p_new = odds_to_probability(odds(p_old) * odds(observation_p))
    out = probability_to_storage(p_new).astype(np.uint16, copy=False)
    # observed cells must not land back on the exact 0.5 value
    observed = storage != UNOBSERVED_STORAGE
    stuck = observed & (out == STORAGE_HALF)
    out[stuck] = STORAGE_HALF + 1 if hit else STORAGE_HALF - 1
    return out


def bayes_update(
    cell: int,
    hit: bool,
    p_hit: float = DEFAULT_P_HIT,
    p_miss: float = DEFAULT_P_MISS,
) -> int:
    """Apply one hit/miss observation to a storage value and return the new one."""
    p = p_hit if hit else p_miss
    return int(_update_storage(np.array([cell], dtype=np.uint16), p, hit)[0])


def point_to_cell(points: np.ndarray, resolution: float) -> np.ndarray:
    """Lattice index of the cell whose center is nearest to each point.

    Points equidistant to several centers resolve to the smaller index per
    axis, which is also the lexicographically smallest ``(i, j)``.
    """
    pts = np.asarray(points, dtype=float)
    return (np.ceil(pts / resolution) - 1).astype(np.int64)


def cell_centers(cells: np.ndarray, resolution: float) -> np.ndarray:
    return (np.asarray(cells, dtype=float) + 0.5) * resolution


@dataclass
class Traversal:
    """Flattened cell sequences for a batch of rays.

    Entries are grouped by ray and ordered along the ray.  ``corner`` marks
    the side cells added where a ray passes exactly through a lattice corner.
    """

    ray: np.ndarray
    cells: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    corner: np.ndarray
    last: np.ndarray  # per ray: index into the flat arrays of its final cell


_CORNER_TOL = 1e-12


def traverse_rays(origin, ends, resolution: float) -> Traversal:
    """Exact grid-line traversal of segments from ``origin`` to each end point.

    Every cell the closed segment passes through is reported (supercover):
    where a segment crosses a lattice corner exactly, all four cells around
    that corner are included.
    """
    o = np.asarray(origin, dtype=float).reshape(2)
    e = np.asarray(ends, dtype=float).reshape(-1, 2)
    n = len(e)
    if n == 0:
        empty_i = np.zeros(0, dtype=np.int64)
        return Traversal(empty_i, np.zeros((0, 2), np.int64), np.zeros(0), np.zeros(0),
                         np.zeros(0, bool), empty_i)
    d = e - o
    i0 = np.floor(o / resolution).astype(np.int64)
    i1 = np.floor(e / resolution).astype(np.int64)
    counts = np.abs(i1 - i0)  # grid lines crossed per axis, (n, 2)
    width = int(counts.max()) if counts.size else 0
    ts = []
    for axis in range(2):
        k = np.arange(1, width + 1)[None, :]
        step = np.sign(d[:, axis]).astype(np.int64)[:, None]
        # boundary coordinate of the k-th crossed line
        line = np.where(step > 0, i0[axis] + k, i0[axis] - k + 1)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = (line * resolution - o[axis]) / d[:, axis, None]
        t = np.where(k <= counts[:, axis, None], t, np.inf)
        ts.append(t)
    tx, ty = ts
    all_t = np.concatenate([np.zeros((n, 1)), tx, ty, np.ones((n, 1))], axis=1)
    all_t = np.where(np.isfinite(all_t), np.clip(all_t, 0.0, 1.0), np.inf)
    all_t.sort(axis=1)
    t_a = all_t[:, :-1]
    t_b = all_t[:, 1:]
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(t_b) & (t_b - t_a > _CORNER_TOL)
    # zero-length segments still occupy their single cell
    degenerate = ~valid.any(axis=1)
    valid[degenerate, 0] = True
    t_b = np.where(degenerate[:, None] & (np.arange(t_b.shape[1]) == 0), t_a, t_b)

    ray_idx = np.broadcast_to(np.arange(n)[:, None], t_a.shape)[valid]
    ta = t_a[valid]
    tb = t_b[valid]
    mid = o + d[ray_idx] * ((ta + tb) / 2.0)[:, None]
    cells = np.floor(mid / resolution).astype(np.int64)
    corner = np.zeros(len(ray_idx), dtype=bool)

    # end points lying exactly on a grid line belong to the cell above that
    # line; add those cells as zero-length touches so every ray starts in
    # the cell containing its origin and ends in the cell containing its end
    first_pos = np.full(n, len(ray_idx), dtype=np.int64)
    np.minimum.at(first_pos, ray_idx, np.arange(len(ray_idx)))
    last_pos = np.zeros(n, dtype=np.int64)
    np.maximum.at(last_pos, ray_idx, np.arange(len(ray_idx)))
    start_off = np.nonzero(np.any(cells[first_pos] != i0, axis=1))[0]
    end_off = np.nonzero(np.any(cells[last_pos] != i1, axis=1))[0]
    if len(start_off) or len(end_off):
        ray_idx = np.concatenate([ray_idx, start_off, end_off])
        cells = np.concatenate([cells, np.broadcast_to(i0, (len(start_off), 2)), i1[end_off]])
        ta = np.concatenate([ta, np.zeros(len(start_off)), np.ones(len(end_off))])
        tb = np.concatenate([tb, np.zeros(len(start_off)), np.ones(len(end_off))])
        corner = np.concatenate([corner, np.zeros(len(start_off) + len(end_off), dtype=bool)])

    # exact corner crossings: an x-line crossing whose y coordinate is on a y-line
    if width:
        t_c = np.where((tx > 0) & (tx < 1), tx, np.inf)
        r_i, kx = np.nonzero(np.isfinite(t_c))
        if len(r_i):
            tc = t_c[r_i, kx]
            pt = o + d[r_i] * tc[:, None]
            frac = pt[:, 1] / resolution
            on_corner = np.abs(frac - np.rint(frac)) <= 1e-9
            r_i, tc, pt = r_i[on_corner], tc[on_corner], pt[on_corner]
        if len(r_i):
            vx = np.rint(pt / resolution).astype(np.int64)
            offsets = np.array([[-1, -1], [-1, 0], [0, -1], [0, 0]])
            ec = (vx[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
            er = np.repeat(r_i, 4)
            et = np.repeat(tc, 4)
            ray_idx = np.concatenate([ray_idx, er])
            cells = np.concatenate([cells, ec])
            ta = np.concatenate([ta, et])
            tb = np.concatenate([tb, et])
            corner = np.concatenate([corner, np.ones(len(er), dtype=bool)])

    order = np.lexsort((corner, tb, ta, ray_idx))
    ray_idx, cells, ta, tb, corner = (
        ray_idx[order], cells[order], ta[order], tb[order], corner[order])

    # final (non-corner) cell of every ray
    non_corner = np.nonzero(~corner)[0]
    last_pos = np.zeros(n, dtype=np.int64)
    np.maximum.at(last_pos, ray_idx[non_corner], non_corner)
    return Traversal(ray_idx, cells, ta, tb, corner, last_pos)


@dataclass(frozen=True)
class Scan:
    """A range scan: sensor origin and hit points, both in the submap frame."""

    origin: tuple[float, float]
    hits: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        hits = np.asarray(self.hits, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(hits)) or not all(math.isfinite(v) for v in self.origin):
            raise ValueError("scan contains non-finite coordinates")
        object.__setattr__(self, "hits", hits)

    def transformed(self, t: RigidTransform2) -> Scan:
        origin = t.apply(np.asarray(self.origin, dtype=float))
        return Scan((float(origin[0]), float(origin[1])), t.apply(self.hits))


class Submap:
    """Growable occupancy grid in a fixed local frame."""

    def __init__(
        self,
        id: int,
        resolution: float = DEFAULT_RESOLUTION,
        n_scans: int = DEFAULT_N_SCANS,
        local_pose: RigidTransform2 | None = None,
        p_hit: float = DEFAULT_P_HIT,
        p_miss: float = DEFAULT_P_MISS,
    ):
        if not (p_hit > 0.5 > p_miss):
            raise ValueError("need p_hit > 0.5 > p_miss")
        self.id = id
        self.resolution = float(resolution)
        self.n_scans = int(n_scans)
        # pose of the local frame in the (unoptimized) local trajectory frame
        self.local_pose = local_pose or RigidTransform2.identity()
        self.p_hit = p_hit
        self.p_miss = p_miss
        self.storage = np.zeros((0, 0), dtype=np.uint16)
        self.offset = (0, 0)
        self.inserted_scans = 0
        self.finished = False

    def __repr__(self):
        state = "finished" if self.finished else "active"
        return (f"Submap(id={self.id}, shape={self.storage.shape}, offset={self.offset}, "
                f"scans={self.inserted_scans}/{self.n_scans}, {state})")

    @property
    def shape(self) -> tuple[int, int]:
        return self.storage.shape

    def local_extent(self) -> tuple[tuple[float, float], tuple[float, float]]:
        r = self.resolution
        (ox, oy), (nx, ny) = self.offset, self.storage.shape
        return (ox * r, oy * r), ((ox + nx) * r, (oy + ny) * r)

    def cell_lattice_indices(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.storage.shape
        return (np.arange(nx) + self.offset[0], np.arange(ny) + self.offset[1])

    def lookup(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Storage values for lattice cells; second array flags in-extent cells."""
        c = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        a = c[:, 0] - self.offset[0]
        b = c[:, 1] - self.offset[1]
        nx, ny = self.storage.shape
        inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
        values = np.zeros(len(c), dtype=np.uint16)
        values[inside] = self.storage[a[inside], b[inside]]
        return values, inside

    def probability(self, cell: tuple[int, int]) -> float | None:
        values, inside = self.lookup(np.array([cell]))
        if not inside[0] or values[0] == UNOBSERVED_STORAGE:
            return None
        return storage_to_probability(int(values[0]))

    def ensure_cells(self, lo: tuple[int, int], hi: tuple[int, int]) -> None:
        """Grow the window to cover lattice cells ``lo..hi`` inclusive.

        Each axis at least doubles toward the side that needs room.
        """
        nx, ny = self.storage.shape
        ox, oy = self.offset
        if nx == 0 or ny == 0:
            self.offset = (int(lo[0]), int(lo[1]))
            self.storage = np.zeros((int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1)),
                                    dtype=np.uint16)
            return
        new_lo = [ox, oy]
        new_hi = [ox + nx - 1, oy + ny - 1]
        size = (nx, ny)
        for ax in range(2):
            if lo[ax] < new_lo[ax]:
                new_lo[ax] = min(int(lo[ax]), new_lo[ax] - size[ax])
            if hi[ax] > new_hi[ax]:
                new_hi[ax] = max(int(hi[ax]), new_hi[ax] + size[ax])
        if (new_lo[0], new_lo[1]) == (ox, oy) and new_hi == [ox + nx - 1, oy + ny - 1]:
            return
        grown = np.zeros((new_hi[0] - new_lo[0] + 1, new_hi[1] - new_lo[1] + 1), dtype=np.uint16)
        a, b = ox - new_lo[0], oy - new_lo[1]
        grown[a:a + nx, b:b + ny] = self.storage
        self.storage = grown
        self.offset = (new_lo[0], new_lo[1])

    def insert_scan(self, scan: Scan) -> None:
        """Bayesian insertion: hit cells get a hit, cells on each ray a miss."""
        if self.finished:
            raise ImmutableSubmapError(f"submap {self.id} is finished")
        r = self.resolution
        if len(scan.hits):
            trav = traverse_rays(scan.origin, scan.hits, r)
            hit_cells = np.unique(trav.cells[trav.last], axis=0)
            is_last = np.zeros(len(trav.ray), dtype=bool)
            is_last[trav.last] = True
            miss_cells = np.unique(trav.cells[~is_last], axis=0)
            if len(miss_cells):
                # hit dominates miss within one scan
                hit_keys = set(map(tuple, hit_cells.tolist()))
                keep = [tuple(c) not in hit_keys for c in miss_cells.tolist()]
                miss_cells = miss_cells[np.array(keep, dtype=bool)]
            touched = np.concatenate([hit_cells, miss_cells])
            # one unobserved cell of margin keeps every frontier cell in the window
            self.ensure_cells(tuple(touched.min(axis=0) - 1), tuple(touched.max(axis=0) + 1))
            self._apply(hit_cells, self.p_hit, hit=True)
            self._apply(miss_cells, self.p_miss, hit=False)
        self.inserted_scans += 1
        if self.inserted_scans >= self.n_scans:
            self.finished = True

    def _apply(self, cells: np.ndarray, p: float, hit: bool) -> None:
        if len(cells) == 0:
            return
        a = cells[:, 0] - self.offset[0]
        b = cells[:, 1] - self.offset[1]
        self.storage[a, b] = _update_storage(self.storage[a, b], p, hit)

    def finish(self) -> None:
        self.finished = True

    def classify(self, epsilon: float = 0.0) -> np.ndarray:
        return classify_grid(self, epsilon)

    def snapshot(self) -> Submap:
        """Immutable copy for handing to consumers on other threads."""
        snap = Submap.__new__(Submap)
        snap.__dict__.update(self.__dict__)
        snap.storage = self.storage.copy()
        snap.storage.setflags(write=False)
        return snap

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "resolution": self.resolution,
            "n_scans": self.n_scans,
            "offset": list(self.offset),
            "shape": list(self.storage.shape),
            "inserted_scans": self.inserted_scans,
            "finished": self.finished,
            "local_pose": list(self.local_pose.as_tuple()),
            "p_hit": self.p_hit,
            "p_miss": self.p_miss,
        }

    def storage_bytes(self) -> bytes:
        return np.ascontiguousarray(self.storage, dtype="<u2").tobytes()

    @classmethod
    def from_record(cls, record: dict, payload: bytes) -> Submap:
        sm = cls(
            record["id"],
            record["resolution"],
            record["n_scans"],
            RigidTransform2(*record["local_pose"]),
            record.get("p_hit", DEFAULT_P_HIT),
            record.get("p_miss", DEFAULT_P_MISS),
        )
        shape = tuple(record["shape"])
        expected = shape[0] * shape[1] * 2
        if len(payload) != expected:
            raise ValueError(f"payload has {len(payload)} bytes, expected {expected}")
        sm.storage = np.frombuffer(payload, dtype="<u2").astype(np.uint16).reshape(shape)
        sm.storage.setflags(write=False)
        sm.offset = tuple(record["offset"])
        sm.inserted_scans = record["inserted_scans"]
        sm.finished = record["finished"]
        return sm


def classify_grid(submap: Submap, epsilon: float = 0.0) -> np.ndarray:
    return classify_storage(submap.storage, epsilon)
