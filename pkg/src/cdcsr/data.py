"""Dataset tooling: synthetic degradation, pair registration, patches, manifests.

Registration works at desk scale: integer translation search by normalized
cross-correlation plus a closed-form linear brightness match, alternated a few
times. Manifests are JSON-lines records {"hr_path", "lr_path", "scale"}.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .imgcore import gaussian_blur, resize_bicubic


@dataclass(frozen=True)
class DegradeConfig:
    scale: int
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be >= 0")


def degrade(hr: np.ndarray, cfg: DegradeConfig) -> np.ndarray:
    """HR -> LR: optional Gaussian blur, bicubic downsample, optional seeded noise."""
    hr = np.asarray(hr, dtype=np.float64)
    h, w = hr.shape[:2]
    if h % cfg.scale or w % cfg.scale:
        raise ValueError(f"HR dims {h}x{w} not divisible by scale {cfg.scale}")
    x = gaussian_blur(hr, cfg.blur_sigma) if cfg.blur_sigma > 0 else hr
    x = resize_bicubic(x, h // cfg.scale, w // cfg.scale)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed)
        x = x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)
    return np.clip(x, 0.0, 1.0)


@dataclass
class BrightnessMatch:
    gain: float
    bias: float
    corrected: np.ndarray
    degenerate: bool = False


def brightness_match(src: np.ndarray, ref: np.ndarray) -> BrightnessMatch:
    """Least-squares (gain, bias) mapping src onto ref over all pixels/channels.

    A constant src has no usable variance; that case falls back to gain 1 with
    a mean-offset bias and is flagged degenerate.
    """
    src, ref = np.asarray(src, np.float64), np.asarray(ref, np.float64)
    if src.shape != ref.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {ref.shape}")
    s, r = src.ravel(), ref.ravel()
    var = s.var()
    if var < 1e-12:
        gain, bias, degenerate = 1.0, float(r.mean() - s.mean()), True
    else:
        gain = float(((s - s.mean()) * (r - r.mean())).mean() / var)
        bias = float(r.mean() - gain * s.mean())
        degenerate = False
    corrected = np.clip(gain * src + bias, 0.0, 1.0)
    return BrightnessMatch(gain, bias, corrected, degenerate)


@dataclass
class AlignResult:
    dx: int
    dy: int
    score: float
    src_crop: np.ndarray
    ref_crop: np.ndarray
    low_confidence: bool


def _shift_windows(shape, dx: int, dy: int):
    """Index windows so that src[window_s] overlays ref[window_r] when src is
    translated by (dx, dy): ref[y, x] ~ src[y - dy, x - dx]."""
    h, w = shape[:2]
    sy = slice(max(0, -dy), h - max(0, dy))
    ry = slice(max(0, dy), h - max(0, -dy))
    sx = slice(max(0, -dx), w - max(0, dx))
    rx = slice(max(0, dx), w - max(0, -dx))
    return (sy, sx), (ry, rx)


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 0.0
    return float((a * b).sum() / denom)


def align_translation(src: np.ndarray, ref: np.ndarray, radius: int) -> AlignResult:
    """Exhaustive integer-shift search in [-radius, radius]^2 maximizing NCC.

    Ties break toward the smaller |dx| + |dy|, then lexicographic (dy, dx).
    Scores below 0.5 are flagged low-confidence.
    """
    src, ref = np.asarray(src, np.float64), np.asarray(ref, np.float64)
    if src.shape != ref.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {ref.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    h, w = src.shape[:2]
    if h - radius < 8 or w - radius < 8:
        raise ValueError(f"search overlap below 8x8 for image {h}x{w}, radius {radius}")
    shifts = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    shifts.sort(key=lambda s: (abs(s[0]) + abs(s[1]), s[1], s[0]))
    best = None
    for dx, dy in shifts:
        (sy, sx), (ry, rx) = _shift_windows(src.shape, dx, dy)
        score = _ncc(src[sy, sx], ref[ry, rx])
        if best is None or score > best[0]:
            best = (score, dx, dy)
    score, dx, dy = best
    (sy, sx), (ry, rx) = _shift_windows(src.shape, dx, dy)
    return AlignResult(dx, dy, score, src[sy, sx], ref[ry, rx], score < 0.5)


@dataclass
class RegisterResult:
    hr: np.ndarray
    lr: np.ndarray
    dx: int  # cumulative shift on the HR grid
    dy: int
    gain: float
    bias: float
    iterations: int
    low_confidence: bool


def register_pair(
    lr: np.ndarray,
    hr: np.ndarray,
    scale: int,
    radius: int = 4,
    iters: int = 3,
) -> RegisterResult:
    """Align an LR/HR pair by alternating translation search and brightness match.

    The LR image is lifted to the HR grid bicubically for the search. The
    returned crops come from the original images: the cumulative HR-grid shift
    is rounded to LR pixels, and the HR window is snapped to multiples of
    `scale` so the two crops stay exactly divisible.
    """
    lr = np.asarray(lr, np.float64)
    hr = np.asarray(hr, np.float64)
    up = resize_bicubic(lr, hr.shape[0], hr.shape[1])
    cur_up, cur_hr = up, hr
    # window of cur_hr inside the original hr, and of cur_up inside up
    hr_y0 = hr_x0 = up_y0 = up_x0 = 0
    total_dx = total_dy = 0
    gain, bias = 1.0, 0.0
    low_conf = False
    it = 0
    for it in range(1, iters + 1):
        res = align_translation(cur_up, cur_hr, radius)
        low_conf = res.low_confidence
        (sy, sx), (ry, rx) = _shift_windows(cur_up.shape, res.dx, res.dy)
        up_y0 += sy.start
        up_x0 += sx.start
        hr_y0 += ry.start
        hr_x0 += rx.start
        total_dx += res.dx
        total_dy += res.dy
        bm = brightness_match(res.src_crop, res.ref_crop)
        gain, bias = bm.gain, bm.bias
        cur_up, cur_hr = bm.corrected, res.ref_crop
        if res.dx == 0 and res.dy == 0:
            break
    # snap the HR window and size to multiples of scale
    h, w = cur_hr.shape[:2]
    y0 = int(np.ceil(hr_y0 / scale)) * scale
    x0 = int(np.ceil(hr_x0 / scale)) * scale
    h = (h - (y0 - hr_y0)) // scale * scale
    w = (w - (x0 - hr_x0)) // scale * scale
    if h <= 0 or w <= 0:
        raise ValueError("registration left no usable overlap")
    hr_out = hr[y0 : y0 + h, x0 : x0 + w]
    ly0, lx0 = y0 // scale, x0 // scale
    lr_crop = lr[ly0 : ly0 + h // scale, lx0 : lx0 + w // scale]
    lr_out = np.clip(gain * lr_crop + bias, 0.0, 1.0)
    return RegisterResult(hr_out, lr_out, total_dx, total_dy, gain, bias, it, low_conf)


def extract_patches(
    hr: np.ndarray,
    lr: np.ndarray,
    scale: int,
    hr_patch: int,
    stride: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Regular grid of aligned (hr, lr) patch pairs; border leftovers dropped.

    Grid offsets are snapped down to multiples of `scale` so every HR window
    has an exact LR counterpart of size hr_patch / scale.
    """
    hr, lr = np.asarray(hr), np.asarray(lr)
    if hr_patch < 1 or hr_patch % scale != 0:
        raise ValueError(f"hr_patch {hr_patch} must be a positive multiple of scale {scale}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    h, w = hr.shape[:2]
    if hr_patch > h or hr_patch > w:
        return []
    p, lp = hr_patch, hr_patch // scale
    pairs = []
    for y in range(0, h - p + 1, stride):
        ys = y // scale * scale
        for x in range(0, w - p + 1, stride):
            xs = x // scale * scale
            pairs.append(
                (
                    hr[ys : ys + p, xs : xs + p].copy(),
                    lr[ys // scale : ys // scale + lp, xs // scale : xs // scale + lp].copy(),
                )
            )
    return pairs


@dataclass
class PairRecord:
    hr_path: str
    lr_path: str
    scale: int


@dataclass
class PairManifest:
    records: list[PairRecord]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.records)


def write_manifest(records: list[PairRecord], path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps({"hr_path": r.hr_path, "lr_path": r.lr_path, "scale": r.scale}) + "\n")


def append_manifest(record: PairRecord, path) -> None:
    with open(path, "a") as f:
        f.write(json.dumps({"hr_path": record.hr_path, "lr_path": record.lr_path, "scale": record.scale}) + "\n")


def load_manifest(path, split: str = "train", check_exists: bool = True) -> PairManifest:
    records = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            rec = PairRecord(str(doc["hr_path"]), str(doc["lr_path"]), int(doc["scale"]))
            # relative paths resolve against the manifest location
            if not os.path.isabs(rec.hr_path):
                rec.hr_path = os.path.join(base, rec.hr_path)
            if not os.path.isabs(rec.lr_path):
                rec.lr_path = os.path.join(base, rec.lr_path)
            if check_exists:
                for p in (rec.hr_path, rec.lr_path):
                    if not os.path.exists(p):
                        raise FileNotFoundError(f"{path}:{line_no}: missing file {p}")
            records.append(rec)
    return PairManifest(records, split)
