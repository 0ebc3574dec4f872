"""KNN background inpainting.

Every foreground pixel takes the mean colour of its ``k`` nearest background
pixels, measured by Euclidean distance between pixel coordinates. Ties are
broken by row-major pixel index, lowest first, so the result is unique.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, ShapeMismatch

DEFAULT_K = 1
_EXTRA_CANDIDATES = 8


@dataclass(frozen=True, eq=False)
class SegmentedImage:
    image: np.ndarray       # (H, W, C)
    foreground: np.ndarray  # (H, W) bool, True = fill

    def __post_init__(self):
        img = np.asarray(self.image)
        fg = np.asarray(self.foreground, dtype=bool)
        if img.shape[:2] != fg.shape:
            raise ShapeMismatch(f"image {img.shape[:2]} and mask {fg.shape} differ")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "foreground", fg)


def _resolve(cand, d2, k):
    """Order candidate indices by (squared distance, index) and keep ``k``."""
    order = np.lexsort((cand, d2))
    return cand[order[:k]]


def knn_inpaint(seg: SegmentedImage, k: int = DEFAULT_K) -> np.ndarray:
    img, fg = seg.image, seg.foreground
    if int(k) != k or k < 1:
        raise DataError(f"k must be a positive integer, got {k}")
    out = img.copy()
    if not fg.any():
        return out
    h, w = fg.shape
    bg_flat = np.flatnonzero(~fg.ravel())          # ascending row-major indices
    if bg_flat.size == 0:
        raise DataError("cannot inpaint: the image has no background pixels")
    if k > bg_flat.size:
        raise DataError(f"k={k} exceeds the {bg_flat.size} available background pixels")
    bg_rc = np.stack(np.divmod(bg_flat, w), axis=1)
    fg_flat = np.flatnonzero(fg.ravel())
    fg_rc = np.stack(np.divmod(fg_flat, w), axis=1)

    tree = cKDTree(bg_rc)
    n_query = min(k + _EXTRA_CANDIDATES, bg_flat.size)
    _, nbr = tree.query(fg_rc, k=n_query)
    nbr = nbr.reshape(len(fg_flat), n_query)
    # exact integer squared distances; float distances only pick candidates
    diff = bg_rc[nbr] - fg_rc[:, None, :]
    d2 = np.sum(diff * diff, axis=2)
    d2_sorted = np.sort(d2, axis=1)
    # all ties of the k-th distance are inside the candidate set unless the
    # furthest candidate still has that distance
    complete = (d2_sorted[:, -1] > d2_sorted[:, k - 1]) | (n_query == bg_flat.size)

    # candidate indices ascend with row-major pixel index, so one integer key
    # orders by distance first and pixel index second
    key = d2 * np.int64(bg_flat.size) + nbr
    chosen = np.take_along_axis(nbr, np.argsort(key, axis=1, kind="stable")[:, :k], axis=1)
    for row in np.flatnonzero(~complete):
        radius = np.sqrt(d2_sorted[row, k - 1]) + 1e-6
        cand = np.array(sorted(tree.query_ball_point(fg_rc[row], radius)), dtype=np.int64)
        cd = bg_rc[cand] - fg_rc[row]
        chosen[row] = _resolve(cand, np.sum(cd * cd, axis=1), k)

    colors = img.reshape(h * w, -1)[bg_flat[chosen]]      # (F, k, C)
    fill = colors[:, 0]
    if k > 1:
        for j in range(1, k):
            fill = fill + colors[:, j]
        fill = fill / k
    out.reshape(h * w, -1)[fg_flat] = fill
    return out
