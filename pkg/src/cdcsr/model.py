"""The CDC super-resolution network.

A stem conv lifts the RGB input to the working width, a stack of hourglass
modules (three groups) with residual-inception connectors refines it, and
three component-attentive heads emit intermediate SR images plus mask logits.
Per-pixel softmax over the three logits gives the attentive masks A_e, and
the final SR is the mask-weighted sum of the intermediate predictions.

Tensors are channels-first float32: LR input (B, 3, H, W), SR outputs
(B, 3, H*s, W*s).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_MAGIC = b"CDC1"
BRANCH_NAMES = ("flat", "edge", "corner")


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    base_channels: int = 64
    hg_modules: int = 6
    hg_depth: int = 4

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.hg_modules < 3 or self.hg_modules % 3 != 0:
            raise ValueError(f"hg_modules must be a positive multiple of 3, got {self.hg_modules}")
        if self.hg_depth < 1:
            raise ValueError(f"hg_depth must be >= 1, got {self.hg_depth}")

    @classmethod
    def tiny(cls, scale: int = 2) -> "ModelConfig":
        """Small preset (one hourglass per group) for tests and CI."""
        return cls(scale=scale, base_channels=16, hg_modules=3, hg_depth=4)


@dataclass
class CdcOutput:
    """Forward results: final SR, per-branch intermediate SRs and masks.

    attn_masks is (B, 3, H*s, W*s) with dim 1 in branch order flat, edge,
    corner; the three masks sum to 1 at every pixel. trunk_feats holds the
    trunk tensor at the end of each group (diagnostics and tests).
    """

    final_sr: torch.Tensor
    inter_srs: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    attn_masks: torch.Tensor
    trunk_feats: tuple[torch.Tensor, ...] = field(default=())


class BottleneckBlock(nn.Module):
    """Pre-activation residual bottleneck: 1x1 -> 3x3 -> 1x1 plus identity."""

    def __init__(self, channels: int):
        super().__init__()
        mid = max(channels // 2, 1)
        self.conv1 = nn.Conv2d(channels, mid, 1)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=1)
        self.conv3 = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        y = self.conv1(F.relu(x))
        y = self.conv2(F.relu(y))
        y = self.conv3(F.relu(y))
        return x + y


class Hourglass(nn.Module):
    """Encoder-decoder at hg_depth pooling levels with per-level skip blocks.

    Each level: residual block then 2x2 max-pool on the way down, residual
    block then nearest-neighbor x2 on the way up, and a residual skip block
    added at the matching resolution. A final 1x1 conv closes the module, so
    an all-zero parameterization maps everything to zero.
    """

    def __init__(self, channels: int, depth: int):
        super().__init__()
        self.depth = depth
        self.enc = nn.ModuleList(BottleneckBlock(channels) for _ in range(depth))
        self.skip = nn.ModuleList(BottleneckBlock(channels) for _ in range(depth))
        self.dec = nn.ModuleList(BottleneckBlock(channels) for _ in range(depth))
        self.bottom = BottleneckBlock(channels)
        self.post = nn.Conv2d(channels, channels, 1)

    def _level(self, x, i):
        skip = self.skip[i](x)
        y = F.max_pool2d(self.enc[i](x), 2)
        y = self._level(y, i + 1) if i + 1 < self.depth else self.bottom(y)
        y = F.interpolate(self.dec[i](y), scale_factor=2, mode="nearest")
        return skip + y

    def forward(self, x):
        h, w = x.shape[-2:]
        div = 1 << self.depth
        if h % div or w % div:
            raise ValueError(f"spatial size {h}x{w} not divisible by 2^{self.depth}")
        return self.post(self._level(x, 0))


class ResidualInceptionBlock(nn.Module):
    """Parallel 1x1 / 1x1-3x3 / 1x1-3x3-3x3 branches, concatenated, projected,
    plus identity."""

    def __init__(self, channels: int):
        super().__init__()
        mid = max(channels // 2, 1)
        self.b1 = nn.Conv2d(channels, mid, 1)
        self.b2a = nn.Conv2d(channels, mid, 1)
        self.b2b = nn.Conv2d(mid, mid, 3, padding=1)
        self.b3a = nn.Conv2d(channels, mid, 1)
        self.b3b = nn.Conv2d(mid, mid, 3, padding=1)
        self.b3c = nn.Conv2d(mid, mid, 3, padding=1)
        self.proj = nn.Conv2d(3 * mid, channels, 1)

    def forward(self, x):
        y1 = F.relu(self.b1(x))
        y2 = F.relu(self.b2b(F.relu(self.b2a(x))))
        y3 = F.relu(self.b3c(F.relu(self.b3b(F.relu(self.b3a(x))))))
        return x + self.proj(torch.cat([y1, y2, y3], dim=1))


class ComponentAttentiveBlock(nn.Module):
    """Two sub-pixel heads: a coarse intermediate SR and a raw mask logit."""

    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.scale = scale
        self.sr_conv = nn.Conv2d(channels, 3 * scale * scale, 3, padding=1)
        self.mask_conv = nn.Conv2d(channels, scale * scale, 3, padding=1)

    def forward(self, feat):
        inter = F.pixel_shuffle(self.sr_conv(feat), self.scale)
        logit = F.pixel_shuffle(self.mask_conv(feat), self.scale)
        return inter, logit


class CdcNetwork(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.hourglasses = nn.ModuleList(
            Hourglass(c, cfg.hg_depth) for _ in range(cfg.hg_modules)
        )
        # two residual-inception connectors in every gap between hourglasses
        self.connectors = nn.ModuleList(
            nn.Sequential(ResidualInceptionBlock(c), ResidualInceptionBlock(c))
            for _ in range(cfg.hg_modules - 1)
        )
        self.cabs = nn.ModuleList(ComponentAttentiveBlock(c, cfg.scale) for _ in range(3))

    def forward(self, lr: torch.Tensor) -> CdcOutput:
        if lr.dim() == 3:
            lr = lr[None]
        if lr.dim() != 4 or lr.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(lr.shape)}")
        h, w = lr.shape[-2:]
        div = 1 << self.cfg.hg_depth
        if h % div or w % div:
            raise ValueError(f"input size {h}x{w} not divisible by 2^{self.cfg.hg_depth}")

        feat = self.stem(lr)
        per_group = self.cfg.hg_modules // 3
        inters, logits, trunks = [], [], []
        k = 0
        for g in range(3):
            for m in range(per_group):
                hg_out = self.hourglasses[k](feat)
                feat = feat + hg_out
                if m == per_group - 1:
                    inter, logit = self.cabs[g](hg_out)
                    inters.append(inter)
                    logits.append(logit)
                    trunks.append(feat)
                if k < self.cfg.hg_modules - 1:
                    feat = self.connectors[k](feat)
                k += 1
        attn = torch.softmax(torch.cat(logits, dim=1), dim=1)
        final = (
            attn[:, 0:1] * inters[0]
            + attn[:, 1:2] * inters[1]
            + attn[:, 2:3] * inters[2]
        )
        return CdcOutput(final, (inters[0], inters[1], inters[2]), attn, tuple(trunks))


def init_model(cfg: ModelConfig, seed: int) -> CdcNetwork:
    """Build a network with deterministic fan-in-scaled uniform weights.

    Conv weights are U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn from a generator
    seeded with `seed`; all biases are zero. Same (cfg, seed) gives
    bit-identical parameters.
    """
    model = CdcNetwork(cfg)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() > 1:
                fan_in = p[0].numel()
                bound = 1.0 / float(np.sqrt(fan_in))
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()
    return model


def save_checkpoint(model: CdcNetwork, path) -> None:
    """Binary checkpoint: magic, config JSON, then (path, shape, f32 LE) entries."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    cfg_bytes = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        name_b = name.encode()
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        arr = tensor.detach().cpu().numpy().astype("<f4")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> CdcNetwork:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a CDC checkpoint (bad magic)")
    off = 4
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    cfg = ModelConfig(**json.loads(raw[off : off + cfg_len].decode()))
    off += cfg_len
    (n_entries,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        state[name] = torch.from_numpy(arr.copy())
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    model = CdcNetwork(cfg)
    model.load_state_dict(state)
    return model
