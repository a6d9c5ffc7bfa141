"""Parse an image into flat / edge / corner masks via structure-tensor analysis.

The masks are a hard per-pixel partition computed from the HR image; they
supervise the intermediate branch losses during training and are never fed
to the network itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, correlate1d

from .imgcore import gaussian_kernel1d, rgb_to_y

_SOBEL_DERIV = np.array([-1.0, 0.0, 1.0])
_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])


@dataclass(frozen=True)
class HarrisConfig:
    """Structure-tensor detector settings.

    sigma: Gaussian window of the tensor smoothing (radius ceil(3*sigma)).
    k: trace penalty of the corner response.
    corner_thresh / edge_thresh: fractions of the extreme responses.
    corner_dilate_radius: square dilation applied to the corner mask so the
        sparse corner points cover a usable supervision area.
    """

    sigma: float = 1.0
    k: float = 0.04
    corner_thresh: float = 0.01
    edge_thresh: float = 0.01
    corner_dilate_radius: int = 2

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.k < 0.25:
            raise ValueError(f"k must lie in (0, 0.25), got {self.k}")
        if not 0.0 < self.corner_thresh < 1.0:
            raise ValueError(f"corner_thresh must lie in (0, 1), got {self.corner_thresh}")
        if not 0.0 < self.edge_thresh < 1.0:
            raise ValueError(f"edge_thresh must lie in (0, 1), got {self.edge_thresh}")
        if self.corner_dilate_radius < 0:
            raise ValueError("corner_dilate_radius must be >= 0")


@dataclass
class ComponentMasks:
    """Binary per-pixel partition; flat + edge + corner == 1 everywhere."""

    flat: np.ndarray
    edge: np.ndarray
    corner: np.ndarray

    def check_partition(self) -> None:
        total = self.flat.astype(np.int64) + self.edge + self.corner
        if not np.all(total == 1):
            raise ValueError("masks do not form a partition")

    def stack(self) -> np.ndarray:
        """(3, H, W) float stack in branch order flat, edge, corner."""
        return np.stack([self.flat, self.edge, self.corner]).astype(np.float64)


def _sobel_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = correlate1d(gray, _SOBEL_DERIV, axis=1, mode="nearest")
    gx = correlate1d(gx, _SOBEL_SMOOTH, axis=0, mode="nearest")
    gy = correlate1d(gray, _SOBEL_DERIV, axis=0, mode="nearest")
    gy = correlate1d(gy, _SOBEL_SMOOTH, axis=1, mode="nearest")
    return gx, gy


def harris_response(gray: np.ndarray, cfg: HarrisConfig = HarrisConfig()) -> np.ndarray:
    """Corner response R = det(S) - k * trace(S)^2 of the smoothed structure tensor.

    Gradients are 3x3 Sobel, the window is a Gaussian of cfg.sigma, both with
    replicate boundary handling. Input must be single channel, (H, W) or
    (H, W, 1).
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim == 3:
        if gray.shape[2] != 1:
            raise ValueError(f"harris_response needs a single-channel image, got C={gray.shape[2]}")
        gray = gray[:, :, 0]
    if gray.ndim != 2:
        raise ValueError(f"expected (H, W) or (H, W, 1), got shape {gray.shape}")
    gx, gy = _sobel_gradients(gray)
    win = gaussian_kernel1d(cfg.sigma)

    def smooth(a):
        a = correlate1d(a, win, axis=0, mode="nearest")
        return correlate1d(a, win, axis=1, mode="nearest")

    sxx = smooth(gx * gx)
    syy = smooth(gy * gy)
    sxy = smooth(gx * gy)
    return sxx * syy - sxy * sxy - cfg.k * (sxx + syy) ** 2


def classify_components(response: np.ndarray, cfg: HarrisConfig = HarrisConfig()) -> ComponentMasks:
    """Threshold the response into the hard {flat, edge, corner} partition.

    Corners: R > corner_thresh * max positive response (none if the map has
    no positive values). Edges: remaining pixels with R below
    -edge_thresh * |min response| (none if the map has no negative values).
    Everything else is flat. Priority is corner > edge > flat.
    """
    response = np.asarray(response, dtype=np.float64)
    if not np.all(np.isfinite(response)):
        raise ValueError("response map contains non-finite values")
    rmax = response.max()
    rmin = response.min()
    corner = response > cfg.corner_thresh * rmax if rmax > 0 else np.zeros(response.shape, bool)
    if rmin < 0:
        edge = ~corner & (response < -cfg.edge_thresh * abs(rmin))
    else:
        edge = np.zeros(response.shape, bool)
    flat = ~corner & ~edge
    return ComponentMasks(flat.astype(np.uint8), edge.astype(np.uint8), corner.astype(np.uint8))


def refine_masks(masks: ComponentMasks, cfg: HarrisConfig = HarrisConfig()) -> ComponentMasks:
    """Dilate the corner mask by a square of the configured radius.

    Pixels swallowed by the dilation are removed from the other two masks
    (corner > edge > flat), so the partition is preserved.
    """
    r = cfg.corner_dilate_radius
    if r == 0:
        return ComponentMasks(masks.flat.copy(), masks.edge.copy(), masks.corner.copy())
    struct = np.ones((2 * r + 1, 2 * r + 1), bool)
    corner = binary_dilation(masks.corner.astype(bool), structure=struct)
    edge = masks.edge.astype(bool) & ~corner
    flat = ~corner & ~edge
    return ComponentMasks(flat.astype(np.uint8), edge.astype(np.uint8), corner.astype(np.uint8))


def component_masks(img: np.ndarray, cfg: HarrisConfig = HarrisConfig()) -> ComponentMasks:
    """Full pipeline: luminance -> response -> classify -> corner dilation."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 3:
        gray = rgb_to_y(img)
    else:
        gray = img
    resp = harris_response(gray, cfg)
    return refine_masks(classify_components(resp, cfg), cfg)
