"""Z-buffer triangle rasterizer and PNCC rendering.

Rules, fixed for bit-exact reproducibility:

* one sample per pixel, at the pixel centre;
* a pixel centre lying exactly on an edge belongs to the triangle only if the
  edge is a top or left edge (after orienting the triangle);
* barycentrics are perspective-correct: screen-space weights are divided by
  the vertex depths and renormalised, the fragment depth is the harmonic
  interpolation of vertex depths;
* the smallest depth wins, equal depths go to the lower triangle index;
* triangles with a vertex closer than ``camera.near`` are dropped (no clipping),
  as are zero-area triangles; there is no backface culling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, canonical_camera, project_points, transform_points
from .errors import DataError
from .morphable import MorphableModel, reconstruct_vertices, select_keypoints

# Edge functions are evaluated in floating point, so a sliver can cover a pixel
# centre a hair outside its exact bounding box; scan one extra pixel all round.
_PAD = 1


@dataclass(frozen=True, eq=False)
class PnccImage:
    pixels: np.ndarray        # (H, W, 3) float64
    coverage: np.ndarray      # (H, W) bool
    depth: np.ndarray         # (H, W), +inf where uncovered
    triangle_ids: np.ndarray  # (H, W) int64, -1 where uncovered

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def tobytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a).tobytes()
                        for a in (self.pixels, self.coverage, self.depth, self.triangle_ids))


@dataclass(frozen=True)
class ScreenTriangles:
    """Projected, oriented and filtered triangles ready for scan conversion."""

    index: np.ndarray    # (T,) original triangle index, ascending
    x: np.ndarray        # (T, 3) screen x of the oriented vertices
    y: np.ndarray        # (T, 3)
    z: np.ndarray        # (T, 3) camera depth
    colors: np.ndarray   # (T, 3, 3)
    area: np.ndarray     # (T,) positive doubled area


def edge_function(xa, ya, xb, yb, px, py):
    """Twice the signed area of (a, b, p); positive on the interior side."""
    return (xb - xa) * (py - ya) - (yb - ya) * (px - xa)


def is_top_left(xa, ya, xb, yb):
    """Top edge (horizontal, interior below) or left edge (going up in y-down screen space)."""
    dy = yb - ya
    return ((dy == 0) & (xb > xa)) | (dy < 0)


def prepare_triangles(vertices, triangles, vertex_colors, camera: Camera) -> ScreenTriangles:
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    cols = np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3)
    if cols.shape[0] != verts.shape[0]:
        raise DataError(f"{cols.shape[0]} vertex colours for {verts.shape[0]} vertices")
    if tris.size and (tris.min() < 0 or tris.max() >= verts.shape[0]):
        raise DataError("triangle index out of range")
    uv, depth, _ = project_points(camera, verts)
    x = uv[tris, 0]
    y = uv[tris, 1]
    z = depth[tris]
    c = cols[tris]
    idx = np.arange(tris.shape[0])

    keep = np.all(z >= camera.near, axis=1) if tris.size else np.zeros(0, bool)
    x, y, z, c, idx = x[keep], y[keep], z[keep], c[keep], idx[keep]
    area = edge_function(x[:, 0], y[:, 0], x[:, 1], y[:, 1], x[:, 2], y[:, 2])
    flip = area < 0
    for arr in (x, y, z, c):
        arr[flip, 1], arr[flip, 2] = arr[flip, 2].copy(), arr[flip, 1].copy()
    area = np.abs(area)
    keep = area > 0
    return ScreenTriangles(idx[keep], x[keep], y[keep], z[keep], c[keep], area[keep])


def shade_fragments(tri: ScreenTriangles, k, px, py):
    """Coverage, depth and colour of triangle(s) ``k`` at pixel centres ``px, py``.

    ``k`` may be an int (then ``px, py`` are arrays of pixel centres) or an
    index array broadcastable against them. Shared by the fast rasterizer and
    the exhaustive oracle so both evaluate identical floating-point expressions.
    """
    x0, x1, x2 = tri.x[k, 0], tri.x[k, 1], tri.x[k, 2]
    y0, y1, y2 = tri.y[k, 0], tri.y[k, 1], tri.y[k, 2]
    e12 = edge_function(x1, y1, x2, y2, px, py)
    e20 = edge_function(x2, y2, x0, y0, px, py)
    e01 = edge_function(x0, y0, x1, y1, px, py)
    inside = (((e12 > 0) | ((e12 == 0) & is_top_left(x1, y1, x2, y2)))
              & ((e20 > 0) | ((e20 == 0) & is_top_left(x2, y2, x0, y0)))
              & ((e01 > 0) | ((e01 == 0) & is_top_left(x0, y0, x1, y1))))
    area = tri.area[k]
    w0 = e12 / area / tri.z[k, 0]
    w1 = e20 / area / tri.z[k, 1]
    w2 = e01 / area / tri.z[k, 2]
    with np.errstate(divide="ignore", invalid="ignore"):   # only outside pixels hit these
        depth = 1.0 / (w0 + w1 + w2)
        b0, b1, b2 = w0 * depth, w1 * depth, w2 * depth
        c = tri.colors[k]
        color = (b0[..., None] * c[..., 0, :] + b1[..., None] * c[..., 1, :]
                 + b2[..., None] * c[..., 2, :])
    return inside, depth, color


def rasterize(vertices, triangles, vertex_colors, camera: Camera) -> PnccImage:
    """Scan-convert a coloured mesh with a depth buffer at ``camera.image_size``."""
    w, h = camera.image_size
    pixels = np.zeros((h, w, 3))
    zbuf = np.full((h, w), np.inf)
    ids = np.full((h, w), -1, dtype=np.int64)
    tri = prepare_triangles(vertices, triangles, vertex_colors, camera)

    # pixel centre at col + 0.5 is covered when min_x <= col + 0.5 <= max_x
    col_lo = np.maximum(np.ceil(tri.x.min(axis=1) - 0.5) - _PAD, 0)
    col_hi = np.minimum(np.floor(tri.x.max(axis=1) - 0.5) + _PAD, w - 1)
    row_lo = np.maximum(np.ceil(tri.y.min(axis=1) - 0.5) - _PAD, 0)
    row_hi = np.minimum(np.floor(tri.y.max(axis=1) - 0.5) + _PAD, h - 1)
    visible = (col_lo <= col_hi) & (row_lo <= row_hi)

    for k in np.flatnonzero(visible):
        c0, c1 = int(col_lo[k]), int(col_hi[k]) + 1
        r0, r1 = int(row_lo[k]), int(row_hi[k]) + 1
        px = (np.arange(c0, c1) + 0.5)[None, :]
        py = (np.arange(r0, r1) + 0.5)[:, None]
        px, py = np.broadcast_arrays(px, py)
        inside, depth, color = shade_fragments(tri, k, px, py)
        win = inside & (depth < zbuf[r0:r1, c0:c1])
        if not win.any():
            continue
        zbuf[r0:r1, c0:c1][win] = depth[win]
        pixels[r0:r1, c0:c1][win] = color[win]
        ids[r0:r1, c0:c1][win] = tri.index[k]

    return PnccImage(pixels, ids >= 0, zbuf, ids)


def render_pncc(model: MorphableModel, identity, expression, resolution: int | tuple = 256) -> PnccImage:
    """PNCC of ``(identity, expression)`` at the fixed canonical pose.

    Takes no pose argument on purpose: the motion code only depends on the
    face geometry.
    """
    verts = reconstruct_vertices(model, identity, expression)
    return rasterize(verts, model.triangles, model.ncc_colors, canonical_camera(resolution))


def project_keypoints(model: MorphableModel, identity, expression, pose, camera: Camera,
                      set_name: str = "kp68") -> np.ndarray:
    """Pixel positions of the posed keypoints, shape (K, 2)."""
    verts = reconstruct_vertices(model, identity, expression)
    kp = transform_points(pose, select_keypoints(verts, set_name, model))
    uv, _, _ = project_points(camera, kp)
    return uv
