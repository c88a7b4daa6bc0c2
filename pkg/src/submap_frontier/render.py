"""Static map images: grey unobserved, white free, black occupied, red frontier."""

from __future__ import annotations

import math
import os
from collections.abc import Mapping

import numpy as np
from PIL import Image

from .geometry import RigidTransform2, global_bounding_box
from .grid import CellClass, Submap, cell_centers, point_to_cell
from .oracle import assemble_global_map

COLORS = {
    CellClass.UNOBSERVED: (128, 128, 128),
    CellClass.FREE: (255, 255, 255),
    CellClass.OCCUPIED: (0, 0, 0),
}
FRONTIER_COLOR = (255, 0, 0)

_EDGE_TOL = 1e-9


def render_extent(submaps: Mapping[int, Submap], poses: Mapping[int, RigidTransform2],
                  resolution: float) -> tuple[np.ndarray, np.ndarray] | None:
    """Inclusive lattice cell range covering every submap's bounding box."""
    boxes = [global_bounding_box(s, poses[i]) for i, s in submaps.items() if s.storage.size]
    if not boxes:
        return None
    lo = np.array([min(b.min_x for b in boxes), min(b.min_y for b in boxes)]) / resolution
    hi = np.array([max(b.max_x for b in boxes), max(b.max_y for b in boxes)]) / resolution
    return (np.floor(lo + _EDGE_TOL).astype(np.int64),
            np.ceil(hi - _EDGE_TOL).astype(np.int64) - 1)


def raster(submaps: Mapping[int, Submap], poses: Mapping[int, RigidTransform2],
           frontier: np.ndarray, resolution: float) -> np.ndarray:
    """RGB array, one pixel per global cell, row 0 at the top (largest y)."""
    extent = render_extent(submaps, poses, resolution)
    if extent is None:
        return np.full((1, 1, 3), COLORS[CellClass.UNOBSERVED], dtype=np.uint8)
    lo, hi = extent
    gx = np.arange(lo[0], hi[0] + 1)
    gy = np.arange(lo[1], hi[1] + 1)
    cells = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    grid = assemble_global_map(submaps, poses, resolution)
    classes = grid.class_at(cell_centers(cells, resolution)).reshape(len(gx), len(gy))
    rgb = np.zeros((len(gx), len(gy), 3), dtype=np.uint8)
    for cls, color in COLORS.items():
        rgb[classes == cls] = color
    pts = np.asarray(frontier, dtype=float).reshape(-1, 2)
    if len(pts):
        fc = point_to_cell(pts, resolution) - lo
        inside = (fc[:, 0] >= 0) & (fc[:, 0] < len(gx)) & (fc[:, 1] >= 0) & (fc[:, 1] < len(gy))
        rgb[fc[inside, 0], fc[inside, 1]] = FRONTIER_COLOR
    # x runs right, y runs up
    return np.ascontiguousarray(np.flipud(rgb.transpose(1, 0, 2)))


def render_png(submaps, poses, frontier, resolution: float, path: str | os.PathLike,
               scale: int = 4) -> tuple[int, int]:
    """Write a PNG; returns its (width, height) in pixels."""
    if scale < 1:
        raise ValueError("scale must be at least 1")
    img = Image.fromarray(raster(submaps, poses, frontier, resolution), mode="RGB")
    img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    img.save(path, format="PNG")
    return img.size


def render_svg(submaps, poses, frontier, resolution: float, path: str | os.PathLike,
               scale: int = 4) -> tuple[int, int]:
    """Vector version: one rect per run of equal colour, one circle per frontier point."""
    rgb = raster(submaps, poses, np.zeros((0, 2)), resolution)
    h, w = rgb.shape[:2]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale}" height="{h * scale}" '
        f'viewBox="0 0 {w} {h}" shape-rendering="crispEdges">'
    ]
    for row in range(h):
        col = 0
        while col < w:
            end = col
            while end + 1 < w and np.array_equal(rgb[row, end + 1], rgb[row, col]):
                end += 1
            r, g, b = (int(v) for v in rgb[row, col])
            parts.append(f'<rect x="{col}" y="{row}" width="{end - col + 1}" height="1" '
                         f'fill="rgb({r},{g},{b})"/>')
            col = end + 1
    extent = render_extent(submaps, poses, resolution)
    pts = np.asarray(frontier, dtype=float).reshape(-1, 2)
    if extent is not None and len(pts):
        lo, hi = extent
        x = pts[:, 0] / resolution - lo[0]
        y = (hi[1] + 1) - pts[:, 1] / resolution
        for px, py in zip(x.tolist(), y.tolist()):
            if math.isfinite(px) and math.isfinite(py):
                parts.append(f'<circle cx="{px:.3f}" cy="{py:.3f}" r="0.35" fill="rgb(255,0,0)"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
    return w * scale, h * scale
