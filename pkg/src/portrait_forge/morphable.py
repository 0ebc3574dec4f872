"""Linear 3D morphable face model.

A face is ``mean + B_id @ identity + B_exp @ expression`` reshaped to N x 3.
Basis rows are vertex-major: row ``3*v + k`` is coordinate ``k`` of vertex ``v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DataError, DimensionError

D_ID = 80
D_EXP = 64


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean_vertices: np.ndarray            # (N, 3)
    identity_basis: np.ndarray           # (3N, D_id)
    expression_basis: np.ndarray         # (3N, D_exp)
    triangles: np.ndarray                # (F, 3) int
    ncc_colors: np.ndarray               # (N, 3) in [0, 1]
    keypoint_sets: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        mean = np.asarray(self.mean_vertices, dtype=np.float64)
        id_b = np.asarray(self.identity_basis, dtype=np.float64)
        exp_b = np.asarray(self.expression_basis, dtype=np.float64)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        ncc = np.asarray(self.ncc_colors, dtype=np.float64)
        kps = {str(k): np.asarray(v, dtype=np.int64).ravel() for k, v in self.keypoint_sets.items()}
        for name, arr in (("mean_vertices", mean), ("identity_basis", id_b),
                          ("expression_basis", exp_b), ("ncc_colors", ncc)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        tris.setflags(write=False)
        object.__setattr__(self, "triangles", tris)
        for v in kps.values():
            v.setflags(write=False)
        object.__setattr__(self, "keypoint_sets", kps)
        problems = self.validate()
        if problems:
            raise DataError("invalid MorphableModel: " + "; ".join(problems))

    @property
    def n_vertices(self) -> int:
        return self.mean_vertices.shape[0]

    @property
    def d_id(self) -> int:
        return self.identity_basis.shape[1]

    @property
    def d_exp(self) -> int:
        return self.expression_basis.shape[1]

    def validate(self) -> list[str]:
        """Return a list of invariant violations (empty when the model is valid)."""
        out = []
        mean = self.mean_vertices
        if mean.ndim != 2 or mean.shape[1] != 3:
            return [f"mean_vertices must be (N, 3), got {mean.shape}"]
        n = mean.shape[0]
        for name in ("identity_basis", "expression_basis"):
            b = getattr(self, name)
            if b.ndim != 2 or b.shape[0] != 3 * n:
                out.append(f"{name} must have {3 * n} rows, got shape {b.shape}")
            elif not np.all(np.isfinite(b)):
                out.append(f"{name} has non-finite entries")
        if not np.all(np.isfinite(mean)):
            out.append("mean_vertices has non-finite entries")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            out.append(f"triangle index out of range [0, {n})")
        ncc = self.ncc_colors
        if ncc.shape != (n, 3):
            out.append(f"ncc_colors must be ({n}, 3), got {ncc.shape}")
        elif n:
            if ncc.min() < 0.0 or ncc.max() > 1.0:
                out.append("ncc_colors outside [0, 1]")
            # a single vertex cannot span [0, 1]; the span rule applies from two vertices on
            if n >= 2 and (np.any(ncc.min(axis=0) != 0.0) or np.any(ncc.max(axis=0) != 1.0)):
                out.append("ncc_colors must span exactly [0, 1] per channel")
        for name, idx in self.keypoint_sets.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                out.append(f"keypoint set {name!r} has index out of range [0, {n})")
        return out


def _check_code(values, expected: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.shape[0] != expected:
        raise DimensionError(f"{what} code has length {arr.shape[0]}, expected {expected}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} code has non-finite entries")
    return arr


def reconstruct_vertices(model: MorphableModel, identity, expression) -> np.ndarray:
    """Vertices (N, 3) for the given identity and expression codes."""
    i = _check_code(identity, model.d_id, "identity")
    e = _check_code(expression, model.d_exp, "expression")
    flat = model.mean_vertices.reshape(-1) + model.identity_basis @ i + model.expression_basis @ e
    return flat.reshape(-1, 3)


def keypoint_indices(model: MorphableModel, set_name: str) -> np.ndarray:
    try:
        return model.keypoint_sets[set_name]
    except KeyError:
        available = ", ".join(sorted(model.keypoint_sets)) or "<none>"
        raise DataError(f"unknown keypoint set {set_name!r}; available: {available}") from None


def select_keypoints(vertices, set_name: str, model: MorphableModel) -> np.ndarray:
    idx = keypoint_indices(model, set_name)
    return np.asarray(vertices)[idx]


def compute_ncc(mean_vertices) -> np.ndarray:
    """Per-axis min-max normalisation of the mean shape to [0, 1]^3."""
    v = np.asarray(mean_vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 2:
        raise DataError(f"compute_ncc needs at least 2 vertices of shape (N, 3), got {v.shape}")
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    span = hi - lo
    if np.any(span == 0):
        axes = "".join("xyz"[k] for k in np.flatnonzero(span == 0))
        raise DataError(f"degenerate bounding box along axis {axes}")
    ncc = (v - lo) / span
    # pin the extremes so the [0, 1] span is exact regardless of rounding
    ncc[v == lo] = 0.0
    ncc[v == hi] = 1.0
    return np.clip(ncc, 0.0, 1.0)
