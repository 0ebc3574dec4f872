"""Head / torso / background fusion.

The blend per pixel and channel is::

    out = (head * m_head + torso * (1 - m_head)) * m_person + bg * (1 - m_person)

with ``m_person`` the soft OR of the head and torso masks. A deterministic
bilinear upsampler stands in for a learned super-resolution stage.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, ShapeMismatch

COMPOSITE_SIZE = 512
OR_MODES = ("soft", "max")


@dataclass(frozen=True, eq=False)
class Layer:
    image: np.ndarray                   # (H, W, 3) in [0, 1]
    mask: Optional[np.ndarray] = None   # (H, W) in [0, 1]

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError(f"layer image must be (H, W, 3), got {img.shape}")
        if not np.all(np.isfinite(img)):
            raise DataError("layer image has non-finite values")
        object.__setattr__(self, "image", img)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.float64)
            if m.shape != img.shape[:2]:
                raise ShapeMismatch(f"mask shape {m.shape} does not match image {img.shape[:2]}")
            if not np.all((m >= 0) & (m <= 1)):
                raise DataError("layer mask must lie in [0, 1]")
            object.__setattr__(self, "mask", m)

    @property
    def size(self) -> tuple:
        return self.image.shape[:2]


@dataclass(frozen=True, eq=False)
class CompositeFrame:
    image: np.ndarray         # (H, W, 3)
    person_mask: np.ndarray   # (H, W)


def _axis_weights(src: int, dst: int):
    """Half-pixel-centred source indices and weights along one axis."""
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, pos - i0


def upsample_bilinear(image, size) -> np.ndarray:
    """Separable bilinear upsampling to ``size = (height, width)``.

    Pixel centres are aligned (``align_corners=False`` convention), borders
    clamp, so the output range never exceeds the input range.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    th, tw = (size, size) if np.isscalar(size) else size
    if th < h or tw < w:
        raise DataError(f"upsample_bilinear cannot downsample {(h, w)} to {(th, tw)}")
    if (th, tw) == (h, w):
        return img.copy()
    r0, r1, fr = _axis_weights(h, th)
    c0, c1, fc = _axis_weights(w, tw)
    extra = (None,) * (img.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def person_mask(m_head, m_torso, mode: str = "soft") -> np.ndarray:
    """Union of head and torso masks: probabilistic sum (``soft``) or ``max``.

    The soft form is evaluated as ``1 - (1 - a)(1 - b)`` so that a mask value
    of exactly 1 yields exactly 1.
    """
    a = np.asarray(m_head, dtype=np.float64)
    b = np.asarray(m_torso, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes {a.shape} and {b.shape} differ")
    if mode == "soft":
        return 1.0 - (1.0 - a) * (1.0 - b)
    if mode == "max":
        return np.maximum(a, b)
    raise DataError(f"unknown OR mode {mode!r}; choose from {OR_MODES}")


def fuse(head: Layer, torso: Layer, background: Layer, size: int | tuple = COMPOSITE_SIZE,
         or_mode: str = "soft") -> CompositeFrame:
    """Blend the three layers at ``size``; smaller head/torso layers are upsampled."""
    th, tw = (size, size) if np.isscalar(size) else size
    for name, layer in (("head", head), ("torso", torso)):
        if layer.mask is None:
            raise DataError(f"{name} layer needs a mask")

    def resample(name, image):
        if image.shape[:2] == (th, tw):
            return image
        if name == "background":
            raise ShapeMismatch(f"background is {image.shape[:2]}, expected {(th, tw)}")
        return upsample_bilinear(image, (th, tw))

    h_img = resample("head", head.image)
    h_mask = resample("head", head.mask)
    t_img = resample("torso", torso.image)
    t_mask = resample("torso", torso.mask)
    bg = resample("background", background.image)
    m_person = person_mask(h_mask, t_mask, or_mode)
    mh = h_mask[..., None]
    mp = m_person[..., None]
    out = (h_img * mh + t_img * (1 - mh)) * mp + bg * (1 - mp)
    return CompositeFrame(np.clip(out, 0.0, 1.0), m_person)
