"""R-tree over the global bounding boxes of finished submaps."""

from __future__ import annotations

import math
from collections.abc import Iterable

from .geometry import BoundingBox

Rect = tuple[float, float, float, float]


def _rect(box: BoundingBox) -> Rect:
    return (box.min_x, box.min_y, box.max_x, box.max_y)


def _overlaps(a: Rect, b: Rect) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def _merge(a: Rect, b: Rect) -> Rect:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _area(a: Rect) -> float:
    return (a[2] - a[0]) * (a[3] - a[1])


def _cover(rects: list[Rect]) -> Rect:
    return (
        min(r[0] for r in rects),
        min(r[1] for r in rects),
        max(r[2] for r in rects),
        max(r[3] for r in rects),
    )


class _Node:
    __slots__ = ("leaf", "rects", "items")

    def __init__(self, leaf: bool):
        self.leaf = leaf
        self.rects: list[Rect] = []
        self.items: list = []  # submap ids in leaves, child nodes otherwise


class DuplicateEntryError(KeyError):
    pass


class BoundingBoxIndex:
    """Dynamic R-tree with linear node splits and STR bulk loading.

    ``query_intersecting`` uses closed-interval overlap, so boxes that only
    touch the query box are reported.
    """

    def __init__(self, max_entries: int = 8):
        if max_entries < 4:
            raise ValueError("max_entries must be at least 4")
        self.max_entries = max_entries
        self.min_entries = max_entries // 2
        self._root = _Node(leaf=True)
        self._boxes: dict[int, BoundingBox] = {}
        self.nodes_visited = 0

    def __len__(self) -> int:
        return len(self._boxes)

    def __contains__(self, submap_id: int) -> bool:
        return submap_id in self._boxes

    def entries(self) -> dict[int, BoundingBox]:
        return dict(self._boxes)

    def box(self, submap_id: int) -> BoundingBox:
        return self._boxes[submap_id]

    def clear(self) -> None:
        self._root = _Node(leaf=True)
        self._boxes = {}

    def insert(self, submap_id: int, box: BoundingBox) -> None:
        if submap_id in self._boxes:
            raise DuplicateEntryError(f"submap {submap_id} already indexed")
        self._boxes[submap_id] = box
        split = self._insert(self._root, _rect(box), submap_id)
        if split is not None:
            old = self._root
            self._root = _Node(leaf=False)
            self._root.rects = [_cover(old.rects), _cover(split.rects)]
            self._root.items = [old, split]

    def _insert(self, node: _Node, rect: Rect, item) -> _Node | None:
        if node.leaf:
            node.rects.append(rect)
            node.items.append(item)
        else:
            best = min(
                range(len(node.items)),
                key=lambda i: (
                    _area(_merge(node.rects[i], rect)) - _area(node.rects[i]),
                    _area(node.rects[i]),
                ),
            )
            child = node.items[best]
            split = self._insert(child, rect, item)
            node.rects[best] = _cover(child.rects)
            if split is not None:
                node.rects.append(_cover(split.rects))
                node.items.append(split)
        if len(node.items) > self.max_entries:
            return self._split(node)
        return None

    def _split(self, node: _Node) -> _Node:
        """Linear split: seed with the pair farthest apart along the widest axis."""
        rects, items = node.rects, node.items
        best_sep, seeds = -math.inf, (0, 1)
        for axis in (0, 1):
            lo = max(range(len(rects)), key=lambda i: rects[i][axis])
            hi = min(range(len(rects)), key=lambda i: rects[i][axis + 2])
            width = max(r[axis + 2] for r in rects) - min(r[axis] for r in rects)
            sep = (rects[lo][axis] - rects[hi][axis + 2]) / (width or 1.0)
            if lo != hi and sep > best_sep:
                best_sep, seeds = sep, (hi, lo)
        a, b = seeds
        group_a, group_b = [a], [b]
        cover_a, cover_b = rects[a], rects[b]
        rest = [i for i in range(len(rects)) if i not in seeds]
        for n_left, i in zip(range(len(rest), 0, -1), rest):
            if len(group_a) + n_left == self.min_entries:
                group_a.append(i)
                cover_a = _merge(cover_a, rects[i])
                continue
            if len(group_b) + n_left == self.min_entries:
                group_b.append(i)
                cover_b = _merge(cover_b, rects[i])
                continue
            grow_a = _area(_merge(cover_a, rects[i])) - _area(cover_a)
            grow_b = _area(_merge(cover_b, rects[i])) - _area(cover_b)
            if (grow_a, len(group_a)) <= (grow_b, len(group_b)):
                group_a.append(i)
                cover_a = _merge(cover_a, rects[i])
            else:
                group_b.append(i)
                cover_b = _merge(cover_b, rects[i])
        sibling = _Node(node.leaf)
        sibling.rects = [rects[i] for i in group_b]
        sibling.items = [items[i] for i in group_b]
        node.rects = [rects[i] for i in group_a]
        node.items = [items[i] for i in group_a]
        return sibling

    def query_intersecting(self, box: BoundingBox) -> set[int]:
        q = _rect(box)
        found: set[int] = set()
        visited = 0
        stack = [self._root] if self._boxes else []
        while stack:
            node = stack.pop()
            visited += 1
            for rect, item in zip(node.rects, node.items):
                if _overlaps(rect, q):
                    if node.leaf:
                        found.add(item)
                    else:
                        stack.append(item)
        self.nodes_visited = visited
        return found

    def rebuild(self, entries: Iterable[tuple[int, BoundingBox]]) -> None:
        """Replace the contents using Sort-Tile-Recursive packing."""
        entries = list(entries)
        boxes: dict[int, BoundingBox] = {}
        for submap_id, box in entries:
            if submap_id in boxes:
                raise DuplicateEntryError(f"submap {submap_id} listed twice")
            boxes[submap_id] = box
        self._boxes = boxes
        level = [(_rect(b), i) for i, b in sorted(boxes.items())]
        leaf = True
        if not level:
            self._root = _Node(leaf=True)
            return
        while True:
            nodes = self._pack(level, leaf)
            if len(nodes) == 1:
                self._root = nodes[0]
                return
            level = [(_cover(n.rects), n) for n in nodes]
            leaf = False

    def _pack(self, level: list[tuple[Rect, object]], leaf: bool) -> list[_Node]:
        cap = self.max_entries
        n_nodes = math.ceil(len(level) / cap)
        n_slices = math.ceil(math.sqrt(n_nodes))
        per_slice = n_slices * cap

        def cx(e):
            return e[0][0] + e[0][2]

        def cy(e):
            return e[0][1] + e[0][3]

        ordered = sorted(level, key=cx)
        nodes = []
        for s in range(0, len(ordered), per_slice):
            column = sorted(ordered[s:s + per_slice], key=cy)
            for k in range(0, len(column), cap):
                node = _Node(leaf)
                chunk = column[k:k + cap]
                node.rects = [c[0] for c in chunk]
                node.items = [c[1] for c in chunk]
                nodes.append(node)
        return nodes
