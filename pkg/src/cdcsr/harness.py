"""Training loop, learning-rate schedule, evaluation and inference.

Ground-truth component masks enter only through the loss; the forward pass
never sees them, so inference needs nothing beyond the checkpoint. Setting
CDC_DETERMINISTIC=1 forces single-threaded, bit-reproducible execution.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, asdict, field, fields

import numpy as np
import torch

from . import data as data_mod
from .components import HarrisConfig, component_masks
from .imgcore import load_png, save_png
from .losses import LossConfig, total_loss
from .metrics import EvalReport, psnr_y, ssim_rgb
from .model import CdcNetwork, ModelConfig, init_model, load_checkpoint, save_checkpoint


@dataclass
class TrainConfig:
    scale: int = 4
    manifest: str = ""
    epochs: int = 300
    max_steps: int | None = None
    batch: int = 16
    lr_patch: int = 48
    lr0: float = 2e-4
    lr_halving_period: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 4.0
    is_weight: float = 1.0
    grad_scheme: str = "backward"
    preset: str = "paper"
    seed: int = 0
    ckpt_dir: str = "checkpoints"
    log_path: str = "train_log.jsonl"
    log_every: int = 10

    def __post_init__(self):
        for name in ("epochs", "batch", "lr_patch", "lr_halving_period", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.preset not in ("paper", "tiny"):
            raise ValueError(f"unknown preset {self.preset!r}")
        depth = self.model_config().hg_depth
        if self.lr_patch % (1 << depth):
            raise ValueError(f"lr_patch {self.lr_patch} not divisible by 2^{depth}")

    def model_config(self) -> ModelConfig:
        if self.preset == "tiny":
            return ModelConfig.tiny(self.scale)
        return ModelConfig(scale=self.scale)

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, is_weight=self.is_weight, grad_scheme=self.grad_scheme)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            doc = json.load(f)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate at an epoch: lr0 halved every lr_halving_period epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 / (2 ** (epoch // cfg.lr_halving_period))


def apply_determinism() -> bool:
    det = os.environ.get("CDC_DETERMINISTIC") == "1"
    if det:
        torch.set_num_threads(1)
    return det


def _to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def _from_chw(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)


class _MaskCache:
    """Component masks per HR crop, keyed by content hash; Harris is far too
    slow to rerun on every batch and the masks are input-deterministic."""

    def __init__(self, harris: HarrisConfig):
        self.harris = harris
        self._store: dict[bytes, np.ndarray] = {}

    def get(self, hr_crop: np.ndarray) -> np.ndarray:
        key = hashlib.sha1(hr_crop.tobytes()).digest()
        hit = self._store.get(key)
        if hit is None:
            hit = component_masks(hr_crop, self.harris).stack().astype(np.float32)
            self._store[key] = hit
        return hit


@dataclass
class TrainResult:
    ckpt_last: str
    ckpt_best: str
    log_path: str
    steps: int
    initial_loss: float
    final_loss: float
    best_loss: float


def _load_pairs(manifest_path: str, scale: int):
    manifest = data_mod.load_manifest(manifest_path)
    if not manifest.records:
        raise ValueError(f"empty manifest: {manifest_path}")
    pairs = []
    for rec in manifest.records:
        if rec.scale != scale:
            raise ValueError(f"manifest scale {rec.scale} != configured scale {scale}")
        hr = load_png(rec.hr_path)
        lr = load_png(rec.lr_path)
        lh, lw = lr.shape[:2]
        hr = hr[: lh * scale, : lw * scale]
        if hr.shape[0] != lh * scale or hr.shape[1] != lw * scale:
            raise ValueError(f"pair {rec.lr_path}: HR smaller than LR x scale")
        pairs.append((hr, lr))
    return pairs


def train(cfg: TrainConfig, harris: HarrisConfig = HarrisConfig()) -> TrainResult:
    apply_determinism()
    pairs = _load_pairs(cfg.manifest, cfg.scale)
    for hr, lr in pairs:
        if lr.shape[0] < cfg.lr_patch or lr.shape[1] < cfg.lr_patch:
            raise ValueError(f"LR image {lr.shape[:2]} smaller than lr_patch {cfg.lr_patch}")

    model = init_model(cfg.model_config(), cfg.seed)
    optim = torch.optim.Adam(
        model.parameters(), lr=cfg.lr0, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )
    loss_cfg = cfg.loss_config()
    cache = _MaskCache(harris)
    rng = np.random.default_rng(cfg.seed)

    n = len(pairs)
    os.makedirs(cfg.ckpt_dir, exist_ok=True)
    ckpt_last = os.path.join(cfg.ckpt_dir, "last.ckpt")
    ckpt_best = os.path.join(cfg.ckpt_dir, "best.ckpt")
    log_dir = os.path.dirname(os.path.abspath(cfg.log_path))
    os.makedirs(log_dir, exist_ok=True)

    order: list[int] = []
    consumed = 0
    p, s = cfg.lr_patch, cfg.scale
    initial = best = float("nan")
    breakdown = None
    t0 = time.time()

    step = 0
    with open(cfg.log_path, "w") as log:
        while consumed // n < cfg.epochs and (cfg.max_steps is None or step < cfg.max_steps):
            epoch = consumed // n
            lr_t = lr_at(cfg, epoch)
            for group in optim.param_groups:
                group["lr"] = lr_t

            while len(order) < cfg.batch:
                order.extend(rng.permutation(n).tolist())
            idx, order = order[: cfg.batch], order[cfg.batch :]
            consumed += cfg.batch

            lr_b = np.empty((cfg.batch, 3, p, p), np.float32)
            hr_b = np.empty((cfg.batch, 3, p * s, p * s), np.float32)
            mask_b = np.empty((cfg.batch, 3, p * s, p * s), np.float32)
            for i, j in enumerate(idx):
                hr, lr_img = pairs[j]
                y = rng.integers(0, lr_img.shape[0] - p + 1)
                x = rng.integers(0, lr_img.shape[1] - p + 1)
                hr_crop = hr[y * s : (y + p) * s, x * s : (x + p) * s]
                lr_b[i] = _to_chw(lr_img[y : y + p, x : x + p])
                hr_b[i] = _to_chw(hr_crop)
                mask_b[i] = cache.get(hr_crop)

            lr_t_b = torch.from_numpy(lr_b)
            hr_t_b = torch.from_numpy(hr_b)
            masks = tuple(torch.from_numpy(mask_b[:, e]) for e in range(3))

            out = model(lr_t_b)
            breakdown = total_loss(out.final_sr, out.inter_srs, hr_t_b, masks, loss_cfg)
            loss = breakdown.total
            if not torch.isfinite(loss):
                dump = os.path.join(log_dir or ".", f"nan_batch_step{step}.npz")
                np.savez(dump, lr=lr_b, hr=hr_b, masks=mask_b)
                raise RuntimeError(f"non-finite loss at step {step}; batch dumped to {dump}")

            optim.zero_grad()
            loss.backward()
            optim.step()

            loss_val = float(loss)
            if step == 0:
                initial = loss_val
            if np.isnan(best) or loss_val < best:
                best = loss_val
                save_checkpoint(model, ckpt_best)
            if step % cfg.log_every == 0:
                rec = {"step": step, "epoch": epoch, "lr": lr_t}
                rec.update(breakdown.as_floats())
                rec["wall_time"] = time.time() - t0
                log.write(json.dumps(rec) + "\n")
            if consumed // n > epoch:
                save_checkpoint(model, ckpt_last)
            step += 1

    save_checkpoint(model, ckpt_last)
    return TrainResult(ckpt_last, ckpt_best, cfg.log_path, step, initial, float(loss), best)


def _pad_to_divisible(img: np.ndarray, div: int) -> tuple[np.ndarray, int, int]:
    h, w = img.shape[:2]
    ph = (-h) % div
    pw = (-w) % div
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return img, h, w


def sr_image(model: CdcNetwork, lr: np.ndarray, return_parts: bool = False):
    """Full-image inference: replicate-pad to divisibility, forward, crop back.

    Returns the SR image in [0, 1]; with return_parts also the three
    attentive masks and intermediate SRs (cropped the same way).
    """
    div = 1 << model.cfg.hg_depth
    s = model.cfg.scale
    padded, h, w = _pad_to_divisible(lr, div)
    with torch.no_grad():
        out = model(torch.from_numpy(_to_chw(padded))[None])
    sr = np.clip(_from_chw(out.final_sr[0])[: h * s, : w * s], 0.0, 1.0)
    if not return_parts:
        return sr
    attn = out.attn_masks[0].cpu().numpy()[:, : h * s, : w * s]
    inters = [np.clip(_from_chw(t[0])[: h * s, : w * s], 0.0, 1.0) for t in out.inter_srs]
    return sr, attn, inters


def _checkpoint_id(path: str) -> str:
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    return f"{os.path.basename(path)}:{digest[:12]}"


def evaluate(ckpt_path: str, manifest_path: str, border: int | None = None) -> EvalReport:
    apply_determinism()
    model = load_checkpoint(ckpt_path)
    model.eval()
    s = model.cfg.scale
    if border is None:
        border = s
    manifest = data_mod.load_manifest(manifest_path, split="test")
    if not manifest.records:
        raise ValueError(f"empty manifest: {manifest_path}")
    report = EvalReport(
        meta={
            "scale": s,
            "border": border,
            "checkpoint": _checkpoint_id(ckpt_path),
            "manifest": os.path.abspath(manifest_path),
        }
    )
    for rec in manifest.records:
        if rec.scale != s:
            raise ValueError(f"manifest scale {rec.scale} != checkpoint scale {s}")
        lr = load_png(rec.lr_path)
        hr = load_png(rec.hr_path)
        sr = sr_image(model, lr)
        hr = hr[: sr.shape[0], : sr.shape[1]]
        name = os.path.splitext(os.path.basename(rec.lr_path))[0]
        report.add(name, psnr_y(sr, hr, border), ssim_rgb(sr, hr))
    return report


def infer(ckpt_path: str, in_path: str, out_path: str, dump_dir: str | None = None) -> None:
    apply_determinism()
    model = load_checkpoint(ckpt_path)
    model.eval()
    try:
        lr = load_png(in_path)
    except OSError as e:
        raise OSError(f"cannot read LR image {in_path}: {e}") from e
    if lr.shape[2] != 3:
        raise ValueError(f"{in_path}: expected an RGB image")
    sr, attn, inters = sr_image(model, lr, return_parts=True)
    try:
        save_png(sr, out_path)
    except OSError as e:
        raise OSError(f"cannot write SR image {out_path}: {e}") from e
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
        stem = os.path.splitext(os.path.basename(in_path))[0]
        for e, name in enumerate(("flat", "edge", "corner")):
            save_png(attn[e][:, :, None], os.path.join(dump_dir, f"{stem}_attn_{name}.png"))
            save_png(inters[e], os.path.join(dump_dir, f"{stem}_inter_{name}.png"))
