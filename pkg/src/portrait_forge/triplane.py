"""Tri-plane feature volumes and motion diff-planes.

Planes are held as one array of shape (3, R, R, C) in the order xy, xz, yz.
For plane "ab", the row index follows axis b and the column index axis a.
Grid node ``k`` sits at coordinate ``-extent + 2 * extent * k / (R - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeMismatch

PLANE_ORDER = ("xy", "xz", "yz")
_PLANE_AXES = ((0, 1), (0, 2), (1, 2))
DEFAULT_RESOLUTION = 256
DEFAULT_CHANNELS = 32
AGGREGATIONS = ("sum", "mean")


@dataclass(frozen=True, eq=False)
class TriPlane:
    planes: np.ndarray
    extent: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.planes)
        if p.dtype.kind != "f":
            p = p.astype(np.float32)
        if p.ndim != 4 or p.shape[0] != 3 or p.shape[1] != p.shape[2]:
            raise DataError(f"tri-plane array must be (3, R, R, C), got {p.shape}")
        if p.shape[1] < 2 or p.shape[3] < 1:
            raise DataError(f"tri-plane needs R >= 2 and C >= 1, got {p.shape}")
        if not self.extent > 0:
            raise DataError(f"extent must be positive, got {self.extent}")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "planes", p)
        object.__setattr__(self, "extent", float(self.extent))

    @classmethod
    def zeros(cls, resolution: int = DEFAULT_RESOLUTION, channels: int = DEFAULT_CHANNELS,
              extent: float = 1.0, dtype=np.float32) -> "TriPlane":
        return cls(np.zeros((3, resolution, resolution, channels), dtype=dtype), extent)

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def shape(self) -> tuple:
        return self.planes.shape

    def __neg__(self) -> "TriPlane":
        return TriPlane(-self.planes, self.extent)


# a diff-plane has exactly the tri-plane layout
DiffPlane = TriPlane


def _check_same(a: TriPlane, b: TriPlane, what: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


def apply_motion(cano: TriPlane, diff: TriPlane) -> TriPlane:
    """Element-wise ``cano + diff``; inputs are untouched.

    The sum is formed in float64. For float32 planes it is then exact, so
    ``apply_motion(apply_motion(P, D), -D)`` returns ``P`` bit for bit, and
    rounding it back to float32 gives the same value as a float32 addition.
    """
    _check_same(cano, diff, "apply_motion")
    return TriPlane(np.add(cano.planes, diff.planes, dtype=np.float64), cano.extent)


def diffplane_laplacian(d_prev: TriPlane, d_curr: TriPlane, d_next: TriPlane) -> float:
    """Mean squared second difference ``d_curr - (d_prev + d_next) / 2``."""
    _check_same(d_prev, d_curr, "diffplane_laplacian")
    _check_same(d_curr, d_next, "diffplane_laplacian")
    prev = d_prev.planes.astype(np.float64)
    curr = d_curr.planes.astype(np.float64)
    nxt = d_next.planes.astype(np.float64)
    r = curr - 0.5 * (prev + nxt)
    return float(np.mean(r * r))


def _grid_coords(coord: np.ndarray, extent: float, res: int):
    s = (coord / extent + 1.0) * (0.5 * (res - 1))
    s = np.clip(s, 0.0, res - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), res - 2)
    return i0, s - i0


def sample(triplane: TriPlane, points, aggregation: str = "sum", dtype=np.float64) -> np.ndarray:
    """Bilinear tri-plane lookup.

    ``points`` is (..., 3); returns (..., C) in ``dtype`` (the renderer passes
    float32 for speed). Points outside the cube are clamped to the plane
    borders.
    """
    if aggregation not in AGGREGATIONS:
        raise DataError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    pts = np.asarray(points, dtype=np.float64)
    lead = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    res, ch = triplane.resolution, triplane.channels
    flat = triplane.planes.reshape(3, res * res, ch)
    out = np.zeros((pts.shape[0], ch), dtype=dtype)
    for k, (a, b) in enumerate(_PLANE_AXES):
        ca, fa = _grid_coords(pts[:, a], triplane.extent, res)
        cb, fb = _grid_coords(pts[:, b], triplane.extent, res)
        fa = fa.astype(out.dtype)[:, None]
        fb = fb.astype(out.dtype)[:, None]
        base = cb * res + ca
        plane = flat[k]

        def gather(idx):
            return plane[idx].astype(out.dtype, copy=False)

        top = gather(base) * (1 - fa) + gather(base + 1) * fa
        bottom = gather(base + res) * (1 - fa) + gather(base + res + 1) * fa
        out += top * (1 - fb) + bottom * fb
    if aggregation == "mean":
        out /= 3
    return out.reshape(*lead, ch)
