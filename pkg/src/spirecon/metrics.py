"""Image quality metrics: MSE, PSNR and global-statistics SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classical import minmax


def _pair(j, k) -> tuple[np.ndarray, np.ndarray]:
    j = np.asarray(j, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if j.shape != k.shape:
        raise ValueError(f"image shapes differ: {j.shape} vs {k.shape}")
    if not (np.all(np.isfinite(j)) and np.all(np.isfinite(k))):
        raise ValueError("images must be finite")
    return j, k


def mse(j, k) -> float:
    j, k = _pair(j, k)
    d = j - k
    return float(np.mean(d * d))


def psnr(j, k, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    e = mse(j, k)
    if e == 0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / e)


def ssim(j, k, dynamic_range: float = 1.0) -> float:
    """Single-window SSIM over whole images, c1=(0.01 L)^2, c2=(0.03 L)^2."""
    if dynamic_range <= 0:
        raise ValueError("dynamic_range must be positive")
    j, k = _pair(j, k)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mj, mk = j.mean(), k.mean()
    dj, dk = j - mj, k - mk
    vj, vk = np.mean(dj * dj), np.mean(dk * dk)
    cov = np.mean(dj * dk)
    return float(((2 * mj * mk + c1) * (2 * cov + c2)) /
                 ((mj * mj + mk * mk + c1) * (vj + vk + c2)))


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    ssim: float
    mse: float

    def as_dict(self) -> dict:
        return {"psnr_db": self.psnr_db, "ssim": self.ssim, "mse": self.mse}


def quality(truth, recon, normalize: bool = True) -> QualityReport:
    """Metrics of ``recon`` against [0, 1] ground truth, min-max normalizing
    the reconstruction first unless ``normalize`` is False."""
    truth, recon = _pair(truth, recon)
    if normalize:
        recon, _ = minmax(recon)
    return QualityReport(psnr(truth, recon, 1.0), ssim(truth, recon, 1.0), mse(truth, recon))
