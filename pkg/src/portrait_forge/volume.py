"""Ray-marching volume renderer over a tri-plane.

Per ray, with uniform bins of width ``delta`` between ``t_near`` and ``t_far``
and one sample per bin::

    alpha_i = 1 - exp(-sigma_i * delta)
    T_i     = prod_{j<i} (1 - alpha_j)
    rgb     = sum T_i alpha_i c_i
    mask    = 1 - prod (1 - alpha_i)
    depth   = sum T_i alpha_i t_i / max(mask, eps)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import Camera, generate_rays
from .errors import DataError, NumericalError, ShapeMismatch
from .triplane import TriPlane, apply_motion, sample

MLP_LAYERS = 2
MLP_HIDDEN = 64
DEPTH_EPS = 1e-8
DEFAULT_RENDER_RES = 128


def softplus(x):
    # stable log(1 + e^x); several times faster than np.logaddexp on float32
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True, eq=False)
class MlpDecoder:
    """Two fully-connected layers: C -> 64 (softplus) -> 1 density + 3 colour.

    Raw density goes through ``exp``; colour through a sigmoid.
    """

    w0: np.ndarray       # (C, 64)
    b0: np.ndarray       # (64,)
    w1: np.ndarray       # (64, 4)
    b1: np.ndarray       # (4,)
    uses_features = True

    def __post_init__(self):
        arrays = {k: np.asarray(getattr(self, k), dtype=np.float32) for k in ("w0", "b0", "w1", "b1")}
        c = arrays["w0"].shape[0] if arrays["w0"].ndim == 2 else -1
        expected = {"w0": (c, MLP_HIDDEN), "b0": (MLP_HIDDEN,), "w1": (MLP_HIDDEN, 4), "b1": (4,)}
        bad = [f"{k}: expected {expected[k]}, got {arrays[k].shape}"
               for k in expected if arrays[k].shape != expected[k]]
        if c < 1 or bad:
            raise ShapeMismatch("MLP decoder weight shapes: " + "; ".join(bad or ["w0 must be 2-D"]))
        for k, v in arrays.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)

    @property
    def in_features(self) -> int:
        return self.w0.shape[0]

    @classmethod
    def zeros(cls, in_features: int = 32) -> "MlpDecoder":
        return cls(np.zeros((in_features, MLP_HIDDEN)), np.zeros(MLP_HIDDEN),
                   np.zeros((MLP_HIDDEN, 4)), np.zeros(4))

    @classmethod
    def random(cls, in_features: int = 32, seed: int = 0, scale: float = 0.3) -> "MlpDecoder":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, scale, (in_features, MLP_HIDDEN)), rng.normal(0, scale, MLP_HIDDEN),
                   rng.normal(0, scale, (MLP_HIDDEN, 4)), rng.normal(0, scale, 4))

    def __call__(self, features, points=None):
        f = np.asarray(features, dtype=np.float32)
        if f.shape[-1] != self.in_features:
            raise ShapeMismatch(f"decoder expects {self.in_features} features, got {f.shape[-1]}")
        h = softplus(f @ self.w0 + self.b0)
        raw = h @ self.w1 + self.b1
        with np.errstate(over="ignore"):
            density = np.exp(raw[..., 0])
        return density, sigmoid(raw[..., 1:])


ANALYTIC_SHAPES = ("constant-slab", "sphere", "gaussian-blob")


@dataclass(frozen=True)
class AnalyticDecoder:
    """Closed-form density/colour field that ignores tri-plane features.

    * ``constant-slab``: density ``sigma`` where ``z_min <= z <= z_max``.
    * ``sphere``: density ``sigma`` inside a shell ``radius <= |p - center| <= radius + thickness``
      (``thickness=None`` gives a solid ball).
    * ``gaussian-blob``: ``sigma * exp(-|p - center|^2 / (2 width^2))``.
    """

    shape: str
    sigma: float = 1.0
    color: tuple = (1.0, 1.0, 1.0)
    z_min: float = -0.5
    z_max: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    thickness: Optional[float] = None
    width: float = 0.25
    uses_features = False

    def __post_init__(self):
        if self.shape not in ANALYTIC_SHAPES:
            raise DataError(f"unknown analytic shape {self.shape!r}; choose from {ANALYTIC_SHAPES}")
        if self.sigma < 0:
            raise DataError("analytic density must be non-negative")

    def __call__(self, features, points):
        p = np.asarray(points, dtype=np.float64)
        if self.shape == "constant-slab":
            inside = (p[..., 2] >= self.z_min) & (p[..., 2] <= self.z_max)
            density = np.where(inside, self.sigma, 0.0)
        else:
            r = np.linalg.norm(p - np.asarray(self.center), axis=-1)
            if self.shape == "sphere":
                if self.thickness is None:
                    inside = r <= self.radius
                else:
                    inside = (r >= self.radius) & (r <= self.radius + self.thickness)
                density = np.where(inside, self.sigma, 0.0)
            else:
                density = self.sigma * np.exp(-r * r / (2 * self.width ** 2))
        color = np.broadcast_to(np.clip(np.asarray(self.color, dtype=np.float64), 0, 1), p.shape)
        return density, color


def decode(decoder, feature, point):
    """Density and colour for one (or a batch of) feature/point pairs."""
    density, color = decoder(feature, point)
    return density, color


@dataclass(frozen=True)
class SamplingConfig:
    samples_per_ray: int = 64
    stratified_jitter: bool = False
    seed: int = 0
    aggregation: str = "sum"
    chunk_rays: int = 2048

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise DataError(f"samples_per_ray must be >= 2, got {self.samples_per_ray}")
        if self.chunk_rays < 1:
            raise DataError("chunk_rays must be positive")


@dataclass(frozen=True, eq=False)
class RenderOutput:
    rgb: np.ndarray     # (H, W, 3)
    mask: np.ndarray    # (H, W)
    depth: np.ndarray   # (H, W)


def _composite(density, color, t, delta):
    """Alpha-composite sample arrays of shape (rays, samples[, 3])."""
    alpha = 1.0 - np.exp(-density * delta)
    one_minus = 1.0 - alpha
    trans = np.ones_like(alpha)
    np.cumprod(one_minus[:, :-1], axis=1, out=trans[:, 1:])
    weights = trans * alpha
    mask = 1.0 - trans[:, -1] * one_minus[:, -1]
    rgb = np.einsum("rs,rsc->rc", weights, color)
    depth = (weights * t).sum(axis=1) / np.maximum(mask, DEPTH_EPS)
    return rgb, mask, depth


def render(triplane: TriPlane, decoder, camera: Camera, sampling: SamplingConfig = SamplingConfig(),
           resolution=None) -> RenderOutput:
    """Volume-render ``triplane`` through ``decoder`` from ``camera``."""
    rays = generate_rays(camera, resolution)
    n_rays, n_s = len(rays), sampling.samples_per_ray
    delta = (rays.t_far - rays.t_near) / n_s
    base_t = rays.t_near + (np.arange(n_s) + 0.5) * delta
    rng = np.random.default_rng(sampling.seed) if sampling.stratified_jitter else None
    rgb = np.zeros((n_rays, 3))
    mask = np.zeros(n_rays)
    depth = np.zeros(n_rays)
    if decoder.uses_features and decoder.in_features != triplane.channels:
        raise ShapeMismatch(f"decoder expects {decoder.in_features} channels, tri-plane has {triplane.channels}")
    if triplane.planes.dtype != np.float32:
        # features are gathered in float32 anyway; cast the planes once, not per lookup
        triplane = TriPlane(triplane.planes.astype(np.float32), triplane.extent)

    for start in range(0, n_rays, sampling.chunk_rays):
        stop = min(start + sampling.chunk_rays, n_rays)
        if rng is not None:
            t = base_t + rng.uniform(-0.5, 0.5, (stop - start, n_s)) * delta
        else:
            t = np.broadcast_to(base_t, (stop - start, n_s))
        pts = rays.origins[start:stop, None, :] + t[..., None] * rays.directions[start:stop, None, :]
        feats = sample(triplane, pts, sampling.aggregation, dtype=np.float32) if decoder.uses_features else None
        density, color = decoder(feats, pts)
        density = np.asarray(density, dtype=np.float64)
        color = np.asarray(color, dtype=np.float64)
        bad = ~np.isfinite(density) | ~np.all(np.isfinite(color), axis=-1)
        if bad.any():
            r, s = np.argwhere(bad)[0]
            raise NumericalError(f"decoder returned non-finite density/colour at ray {start + r}, sample {s}")
        if (density < 0).any():
            r, s = np.argwhere(density < 0)[0]
            raise NumericalError(f"decoder returned negative density at ray {start + r}, sample {s}")
        rgb[start:stop], mask[start:stop], depth[start:stop] = _composite(density, np.clip(color, 0, 1), t, delta)

    h, w = rays.height, rays.width
    return RenderOutput(rgb.reshape(h, w, 3), mask.reshape(h, w), depth.reshape(h, w))


def render_head(cano: TriPlane, diff: TriPlane, decoder, camera: Camera,
                sampling: SamplingConfig = SamplingConfig(), resolution=None) -> RenderOutput:
    """Render the canonical tri-plane edited by a motion diff-plane."""
    return render(apply_motion(cano, diff), decoder, camera, sampling, resolution)
