"""Image and code-sequence metrics with oracle-checkable definitions.

Learned or perceptual scores (FID, CSIM, LPIPS, SSIM, AED/APD/AKD, Sync) need
pretrained networks and are left to external tools; their names are reserved
in :data:`EXTERNAL_METRICS` so reports can carry them.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ShapeMismatch

EXTERNAL_METRICS = ("fid", "csim", "lpips", "ssim", "aed", "apd", "akd", "sync")


@dataclass
class MetricReport:
    name: str
    value: float
    per_frame: Optional[list] = None

    def to_json(self) -> dict:
        d = asdict(self)
        # JSON has no infinity literal
        if np.isinf(self.value):
            d["value"] = "inf"
        if self.per_frame is not None:
            d["per_frame"] = ["inf" if np.isinf(v) else v for v in self.per_frame]
        return d


def _pair(a, b):
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes {x.shape} and {y.shape} differ")
    return x, y


def l1_error(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.mean(np.abs(x - y)))


def mse(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / err))


def expression_recon_error(a, b) -> float:
    """Mean squared difference over frames and code components."""
    x, y = _pair(np.atleast_2d(a), np.atleast_2d(b))
    return float(np.mean((x - y) ** 2))
