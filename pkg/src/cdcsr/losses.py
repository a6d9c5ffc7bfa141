"""Training objectives: L1, gradient-weighted reconstruction, masked branch losses.

All losses operate on channels-first tensors -- (H, W), (C, H, W) or
(B, C, H, W) -- with the last two dimensions spatial. They are differentiable
through every prediction argument, including inside the gradient weight map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class LossConfig:
    """Objective settings.

    alpha: scale of the gradient weighting; 0 turns the reconstruction term
        into plain L1.
    is_weight: multiplier on each of the three branch losses.
    grad_scheme: one-sided difference convention inside the weight map
        ("backward": first row/column zero, "forward": last row/column zero).
    detach_weight: treat the weight map as a constant (no gradient through it).
    """

    alpha: float = 4.0
    is_weight: float = 1.0
    base_loss: str = "l1"
    grad_scheme: str = "backward"
    detach_weight: bool = False

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.is_weight < 0:
            raise ValueError(f"is_weight must be >= 0, got {self.is_weight}")
        if self.base_loss != "l1":
            raise ValueError(f"unsupported base loss {self.base_loss!r}")
        if self.grad_scheme not in ("backward", "forward"):
            raise ValueError(f"unknown gradient scheme {self.grad_scheme!r}")


@dataclass
class LossBreakdown:
    """Total objective and its terms; total == rec + is_flat + is_edge + is_corner."""

    total: torch.Tensor
    rec: torch.Tensor
    is_flat: torch.Tensor
    is_edge: torch.Tensor
    is_corner: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "total": float(self.total),
            "rec": float(self.rec),
            "is_flat": float(self.is_flat),
            "is_edge": float(self.is_edge),
            "is_corner": float(self.is_corner),
        }


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _grad_xy(t: torch.Tensor, scheme: str) -> tuple[torch.Tensor, torch.Tensor]:
    """One-sided differences along the last two (spatial) dimensions."""
    dx = t[..., :, 1:] - t[..., :, :-1]
    dy = t[..., 1:, :] - t[..., :-1, :]
    zx = torch.zeros_like(t[..., :, :1])
    zy = torch.zeros_like(t[..., :1, :])
    if scheme == "backward":
        gx = torch.cat([zx, dx], dim=-1)
        gy = torch.cat([zy, dy], dim=-2)
    else:
        gx = torch.cat([dx, zx], dim=-1)
        gy = torch.cat([dy, zy], dim=-2)
    return gx, gy


def l1_loss(a, b) -> torch.Tensor:
    """Mean absolute difference over all pixels and channels."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b)
    return (a - b).abs().mean()


def gw_loss(sr, hr, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Gradient-weighted L1: mean of (1 + a*Dx)(1 + a*Dy) * |hr - sr|.

    Dx and Dy are the absolute one-sided gradient differences between sr and
    hr. The weight map is >= 1 everywhere, so this bounds l1_loss from above;
    alpha = 0 reduces it to plain L1.
    """
    sr, hr = _as_tensor(sr), _as_tensor(hr)
    _check_same_shape(sr, hr)
    gx_sr, gy_sr = _grad_xy(sr, cfg.grad_scheme)
    gx_hr, gy_hr = _grad_xy(hr, cfg.grad_scheme)
    dx = (gx_sr - gx_hr).abs()
    dy = (gy_sr - gy_hr).abs()
    weight = (1.0 + cfg.alpha * dx) * (1.0 + cfg.alpha * dy)
    if cfg.detach_weight:
        weight = weight.detach()
    return (weight * (hr - sr).abs()).mean()


def intermediate_loss(sr_e, hr, mask_e) -> torch.Tensor:
    """Masked branch L1: mean over all pixels of |mask * hr - mask * sr_e|.

    Zeros outside the mask still count in the mean. The mask broadcasts over
    the channel dimension: (H, W) against (..., C, H, W) works directly.
    """
    sr_e, hr = _as_tensor(sr_e), _as_tensor(hr)
    _check_same_shape(sr_e, hr)
    mask = _as_tensor(mask_e).to(hr.dtype)
    if mask.dim() == 3 and hr.dim() == 4 and mask.shape[0] == hr.shape[0]:
        mask = mask[:, None]  # (B, H, W) -> (B, 1, H, W)
    return (mask * (hr - sr_e).abs()).mean()


def total_loss(final_sr, inter_srs, hr, masks, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Reconstruction term plus the three masked branch terms.

    inter_srs and masks are sequences in branch order (flat, edge, corner);
    masks may also be a ComponentMasks instance. Batched inputs are averaged
    over the batch by the underlying means.
    """
    if hasattr(masks, "flat") and hasattr(masks, "corner"):
        masks = (masks.flat, masks.edge, masks.corner)
    if len(inter_srs) != 3 or len(masks) != 3:
        raise ValueError("expected three intermediate predictions and three masks")
    rec = gw_loss(final_sr, hr, cfg)
    branches = [cfg.is_weight * intermediate_loss(sr_e, hr, m) for sr_e, m in zip(inter_srs, masks)]
    total = rec + branches[0] + branches[1] + branches[2]
    return LossBreakdown(total, rec, branches[0], branches[1], branches[2])
