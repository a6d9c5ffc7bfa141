"""Deterministic image primitives shared by every other module.

Images are float numpy arrays of shape (H, W, C) with values in [0, 1].
C == 3 means RGB, C == 1 means a single luminance/grayscale channel.
All functions are pure and safe to call from multiple threads.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import correlate1d


class GradientMaps(NamedTuple):
    """Per-channel spatial gradients, same shape as the source image."""

    gx: np.ndarray
    gy: np.ndarray


def _check_image(img: np.ndarray, name: str = "img") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"{name} must have shape (H, W, C), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must have H, W >= 1, got {img.shape}")
    return img.astype(np.float64, copy=False)


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Keys cubic kernel with a = -0.5, support [-2, 2]."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = 1.5 * ax3 - 2.5 * ax2 + 1.0
    far = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) row-stochastic bicubic weight matrix.

    Center-of-pixel alignment: output sample i reads source coordinate
    (i + 0.5) * n_in / n_out - 0.5 with a 4-tap cubic kernel; taps outside
    the image are clamped to the border (replicate).
    """
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    w = _cubic_kernel(src[:, None] - taps)
    taps = np.clip(taps, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), 4)
    np.add.at(mat, (rows, taps.ravel()), w.ravel())
    mat /= mat.sum(axis=1, keepdims=True)
    return mat


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize (a = -0.5), output clamped to [0, 1]."""
    img = _check_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    h, w, _ = img.shape
    wh = _resize_weights(h, out_h)
    ww = _resize_weights(w, out_w)
    out = np.einsum("oi,iwc->owc", wh, img)
    out = np.einsum("oj,hjc->hoc", ww, out)
    return np.clip(out, 0.0, 1.0)


# ITU-R BT.601 studio-swing luma coefficients on the 0-255 scale.
_Y_COEF = np.array([65.481, 128.553, 24.966])
_Y_OFFSET = 16.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """RGB -> single luminance channel (stored back in [0, 1] via /255)."""
    img = _check_image(img)
    if img.shape[2] != 3:
        raise ValueError(f"rgb_to_y needs an RGB image, got C={img.shape[2]}")
    y255 = _Y_OFFSET + img @ _Y_COEF
    return (y255 / 255.0)[:, :, None]


def spatial_gradients(img: np.ndarray, scheme: str = "forward") -> GradientMaps:
    """Per-channel one-sided differences with replicate padding.

    scheme="forward": gx[i, j] = img[i, j+1] - img[i, j], last column 0.
    scheme="backward": gx[i, j] = img[i, j] - img[i, j-1], first column 0.
    """
    img = _check_image(img)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    dx = img[:, 1:] - img[:, :-1]
    dy = img[1:, :] - img[:-1, :]
    if scheme == "forward":
        gx[:, :-1] = dx
        gy[:-1, :] = dy
    elif scheme == "backward":
        gx[:, 1:] = dx
        gy[1:, :] = dy
    else:
        raise ValueError(f"unknown gradient scheme {scheme!r}")
    return GradientMaps(gx, gy)


def pixel_shuffle(feat: np.ndarray, r: int) -> np.ndarray:
    """Rearrange (H, W, C*r^2) -> (H*r, W*r, C).

    out[h*r + dy, w*r + dx, c] = feat[h, w, c*r^2 + dy*r + dx]
    """
    feat = _check_image(feat, "feat")
    h, w, cr2 = feat.shape
    if r < 1 or cr2 % (r * r) != 0:
        raise ValueError(f"channels {cr2} not divisible by r^2 = {r * r}")
    c = cr2 // (r * r)
    out = feat.reshape(h, w, c, r, r)
    out = out.transpose(0, 3, 1, 4, 2)
    return out.reshape(h * r, w * r, c)


def pixel_unshuffle(img: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle`: (H*r, W*r, C) -> (H, W, C*r^2)."""
    img = _check_image(img)
    hr, wr, c = img.shape
    if r < 1 or hr % r != 0 or wr % r != 0:
        raise ValueError(f"spatial dims {hr}x{wr} not divisible by r = {r}")
    h, w = hr // r, wr // r
    out = img.reshape(h, r, w, r, c)
    out = out.transpose(0, 2, 4, 1, 3)
    return out.reshape(h, w, c * r * r)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicate boundary handling."""
    img = _check_image(img)
    k = gaussian_kernel1d(sigma)
    out = correlate1d(img, k, axis=0, mode="nearest")
    out = correlate1d(out, k, axis=1, mode="nearest")
    return out


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG as float (H, W, C) in [0, 1]; RGB or grayscale."""
    with PILImage.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_png(img: np.ndarray, path) -> None:
    """Write float (H, W, C) in [0, 1] as an 8-bit PNG."""
    img = _check_image(img)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        PILImage.fromarray(data[:, :, 0], mode="L").save(path)
    elif data.shape[2] == 3:
        PILImage.fromarray(data, mode="RGB").save(path)
    else:
        raise ValueError(f"can only save 1- or 3-channel images, got C={data.shape[2]}")
