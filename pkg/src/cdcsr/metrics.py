"""Image quality metrics: PSNR on the Y channel, SSIM averaged over RGB."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .imgcore import rgb_to_y

PSNR_CAP_DB = 100.0

_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


def psnr_y(sr: np.ndarray, hr: np.ndarray, border: int = 0) -> float:
    """PSNR in dB between the Y channels (0-255 scale), border cropped.

    Identical images return the 100 dB cap so reports stay finite.
    """
    sr, hr = np.asarray(sr), np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    if border < 0 or 2 * border >= min(sr.shape[0], sr.shape[1]):
        raise ValueError(f"border {border} too large for image {sr.shape[:2]}")
    ys = rgb_to_y(sr)[:, :, 0] * 255.0
    yh = rgb_to_y(hr)[:, :, 0] * 255.0
    if border:
        ys = ys[border:-border, border:-border]
        yh = yh[border:-border, border:-border]
    mse = float(np.mean((ys - yh) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP_DB)


def _fspecial_gauss(size: int, sigma: float) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    k /= k.sum()
    return np.outer(k, k)


def _ssim_channel(a: np.ndarray, b: np.ndarray, win: np.ndarray) -> float:
    mu1 = convolve2d(a, win, mode="valid")
    mu2 = convolve2d(b, win, mode="valid")
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = convolve2d(a * a, win, mode="valid") - mu1_sq
    sigma2_sq = convolve2d(b * b, win, mode="valid") - mu2_sq
    sigma12 = convolve2d(a * b, win, mode="valid") - mu1_mu2
    num = (2.0 * mu1_mu2 + _SSIM_C1) * (2.0 * sigma12 + _SSIM_C2)
    den = (mu1_sq + mu2_sq + _SSIM_C1) * (sigma1_sq + sigma2_sq + _SSIM_C2)
    return float((num / den).mean())


def ssim_rgb(sr: np.ndarray, hr: np.ndarray) -> float:
    """Mean SSIM over the three channels; 11x11 Gaussian window, sigma 1.5,
    on the 0-255 scale. The window must fit: min(H, W) >= 11."""
    sr, hr = np.asarray(sr, np.float64), np.asarray(hr, np.float64)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    if sr.ndim != 3 or min(sr.shape[0], sr.shape[1]) < 11:
        raise ValueError(f"image {sr.shape} smaller than the 11x11 SSIM window")
    win = _fspecial_gauss(11, 1.5)
    scores = [_ssim_channel(sr[:, :, c] * 255.0, hr[:, :, c] * 255.0, win) for c in range(sr.shape[2])]
    return float(np.mean(scores))


@dataclass
class EvalReport:
    """Per-image metric records plus their arithmetic means."""

    meta: dict = field(default_factory=dict)
    images: list = field(default_factory=list)

    def add(self, name: str, psnr_db: float, ssim: float) -> None:
        self.images.append({"name": name, "psnr_db": psnr_db, "ssim": ssim})

    @property
    def mean(self) -> dict:
        if not self.images:
            return {"psnr_db": float("nan"), "ssim": float("nan")}
        return {
            "psnr_db": float(np.mean([r["psnr_db"] for r in self.images])),
            "ssim": float(np.mean([r["ssim"] for r in self.images])),
        }

    def to_dict(self) -> dict:
        return {"meta": self.meta, "images": self.images, "mean": self.mean}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_file(cls, path) -> "EvalReport":
        with open(path) as f:
            doc = json.load(f)
        return cls(meta=doc.get("meta", {}), images=doc.get("images", []))
