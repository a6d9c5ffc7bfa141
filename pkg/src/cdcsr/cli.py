"""Command-line entry points: masks, degrade, register, patches, train, eval, sr."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as data_mod
from . import harness
from .components import HarrisConfig, component_masks
from .imgcore import load_png, save_png


def _cmd_masks(args) -> int:
    img = load_png(args.in_path)
    masks = component_masks(img, HarrisConfig())
    prefix = args.out_prefix
    save_png(masks.flat[:, :, None].astype(np.float64), prefix + "_flat.png")
    save_png(masks.edge[:, :, None].astype(np.float64), prefix + "_edge.png")
    save_png(masks.corner[:, :, None].astype(np.float64), prefix + "_corner.png")
    # composite for eyeballing: flat blue, edge green, corner red
    comp = np.stack([masks.corner, masks.edge, masks.flat], axis=2).astype(np.float64)
    save_png(comp, prefix + "_composite.png")
    print(f"wrote {prefix}_{{flat,edge,corner,composite}}.png")
    return 0


def _cmd_degrade(args) -> int:
    cfg = data_mod.DegradeConfig(
        scale=args.scale, blur_sigma=args.blur, noise_sigma=args.noise, seed=args.seed
    )
    os.makedirs(args.out, exist_ok=True)
    names = sorted(n for n in os.listdir(args.in_dir) if n.lower().endswith(".png"))
    if not names:
        print(f"no PNG files in {args.in_dir}", file=sys.stderr)
        return 1
    count = 0
    for name in names:
        hr_path = os.path.join(args.in_dir, name)
        hr = load_png(hr_path)
        h, w = hr.shape[:2]
        hr = hr[: h // args.scale * args.scale, : w // args.scale * args.scale]
        per_image = data_mod.DegradeConfig(
            scale=cfg.scale, blur_sigma=cfg.blur_sigma, noise_sigma=cfg.noise_sigma,
            seed=cfg.seed + count,
        )
        lr = data_mod.degrade(hr, per_image)
        lr_path = os.path.join(args.out, name)
        save_png(lr, lr_path)
        data_mod.append_manifest(
            data_mod.PairRecord(os.path.abspath(hr_path), os.path.abspath(lr_path), args.scale),
            args.manifest,
        )
        count += 1
    print(f"degraded {count} images -> {args.out}; manifest {args.manifest}")
    return 0


def _cmd_register(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    lr_names = sorted(n for n in os.listdir(args.lr) if n.lower().endswith(".png"))
    manifest_path = os.path.join(args.out, "manifest.jsonl")
    count = 0
    for name in lr_names:
        hr_path = os.path.join(args.hr, name)
        if not os.path.exists(hr_path):
            print(f"skipping {name}: no HR counterpart", file=sys.stderr)
            continue
        lr = load_png(os.path.join(args.lr, name))
        hr = load_png(hr_path)
        scale = round(hr.shape[0] / lr.shape[0])
        res = data_mod.register_pair(lr, hr, scale, radius=args.radius, iters=args.iters)
        stem = os.path.splitext(name)[0]
        hr_out = os.path.join(args.out, f"{stem}_hr.png")
        lr_out = os.path.join(args.out, f"{stem}_lr.png")
        save_png(res.hr, hr_out)
        save_png(res.lr, lr_out)
        data_mod.append_manifest(
            data_mod.PairRecord(os.path.abspath(hr_out), os.path.abspath(lr_out), scale),
            manifest_path,
        )
        flag = " (low confidence)" if res.low_confidence else ""
        print(f"{name}: shift ({res.dx}, {res.dy}), gain {res.gain:.4f}, bias {res.bias:+.4f}{flag}")
        count += 1
    print(f"registered {count} pairs -> {args.out}")
    return 0 if count else 1


def _cmd_patches(args) -> int:
    manifest = data_mod.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    out_manifest = os.path.join(args.out, "manifest.jsonl")
    total = 0
    for rec in manifest.records:
        hr = load_png(rec.hr_path)
        lr = load_png(rec.lr_path)
        stem = os.path.splitext(os.path.basename(rec.hr_path))[0]
        for i, (hp, lp) in enumerate(
            data_mod.extract_patches(hr, lr, rec.scale, args.size, args.stride)
        ):
            hr_out = os.path.join(args.out, f"{stem}_p{i:04d}_hr.png")
            lr_out = os.path.join(args.out, f"{stem}_p{i:04d}_lr.png")
            save_png(hp, hr_out)
            save_png(lp, lr_out)
            data_mod.append_manifest(
                data_mod.PairRecord(os.path.abspath(hr_out), os.path.abspath(lr_out), rec.scale),
                out_manifest,
            )
            total += 1
    print(f"extracted {total} patch pairs -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = harness.TrainConfig.from_json(args.config)
    result = harness.train(cfg)
    print(
        f"trained {result.steps} steps: loss {result.initial_loss:.4f} -> {result.final_loss:.4f}"
        f" (best {result.best_loss:.4f})"
    )
    print(f"checkpoints: {result.ckpt_last}, {result.ckpt_best}; log: {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    report = harness.evaluate(args.ckpt, args.manifest, args.border)
    report.save(args.out)
    mean = report.mean
    print(f"{len(report.images)} images: PSNR {mean['psnr_db']:.3f} dB, SSIM {mean['ssim']:.4f}")
    print(f"report written to {args.out}")
    return 0


def _cmd_sr(args) -> int:
    harness.infer(args.ckpt, args.in_path, args.out_path, args.dump_components)
    print(f"wrote {args.out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdc", description="Component divide-and-conquer SR toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("masks", help="extract flat/edge/corner masks from an image")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out-prefix", dest="out_prefix", required=True)
    p.set_defaults(func=_cmd_masks)

    p = sub.add_parser("degrade", help="synthesize LR images from an HR directory")
    p.add_argument("--scale", type=int, required=True, choices=(2, 3, 4))
    p.add_argument("--blur", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("register", help="align LR/HR pairs by translation + brightness")
    p.add_argument("--lr", required=True)
    p.add_argument("--hr", required=True)
    p.add_argument("--radius", type=int, default=4)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("patches", help="cut manifest pairs into aligned patch pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--stride", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_patches)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--border", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sr", help="super-resolve one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--dump-components", default=None)
    p.set_defaults(func=_cmd_sr)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
