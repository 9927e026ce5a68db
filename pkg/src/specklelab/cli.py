"""``speckle-lab`` command line.

Exit status is 0 on success, 2 on invalid input or configuration, and 3 when
training aborts on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import SpeckleLabError, TrainingAborted
from .imageio import load_image, save_image
from .metrics import enl, ratio_image, ratio_kl
from .pipeline import (build_dataset, bundled_scene_path, despeckle_image, evaluate_corpus,
                       load_config, train)
from .speckle import SpeckleConfig, apply_speckle, as_gray, gamma_speckle_field

EXIT_OK, EXIT_INVALID, EXIT_ABORTED = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default="desk",
                   help="JSON config file or bundled profile name (desk, full); default desk")
    p.add_argument("--seed", type=int, help="override dataset and training seeds")
    p.add_argument("--looks", type=int, help="override the number of looks L")
    p.add_argument("--lambda", dest="lam", type=float, help="override the KL weight")
    p.add_argument("--out", required=True, help="output file or directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="speckle-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="speckle a clean image")
    p.add_argument("image", nargs="?", help="clean image (default: bundled scene)")
    p.add_argument("--format", choices=("gimg", "pgm8", "pgm16"), default="gimg")

    p = sub.add_parser("build-dataset", parents=[common], help="cut and speckle training patches")
    p.add_argument("clean_dir", nargs="?", help="directory of clean images (default: bundled scene)")

    p = sub.add_parser("train", parents=[common], help="train a despeckler on a built dataset")
    p.add_argument("dataset", help="dataset directory written by build-dataset")

    p = sub.add_parser("despeckle", parents=[common], help="filter one image with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--ratio", help="also write the ratio image here")

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint over a corpus")
    p.add_argument("checkpoint")
    p.add_argument("noisy_dir")
    p.add_argument("--clean", help="clean reference directory; omit for no-reference metrics")

    p = sub.add_parser("ratio", parents=[common], help="ratio image and its KL to the speckle law")
    p.add_argument("noisy")
    p.add_argument("filtered")
    return parser


def _echo(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")


def run(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config).with_overrides(seed=args.seed, looks=args.looks, lam=args.lam)
    effective = {"command": args.command, "config": cfg.to_dict()}
    out = Path(args.out)
    loss_cfg = cfg.train.loss
    looks = cfg.train.looks

    if args.command == "simulate":
        src = Path(args.image) if args.image else bundled_scene_path()
        clean = as_gray(load_image(src), "clean")
        speckle = SpeckleConfig(looks, cfg.dataset.seed)
        effective["speckle"] = asdict(speckle)
        _echo(effective)
        noisy = apply_speckle(clean, gamma_speckle_field(speckle, *clean.shape))
        save_image(noisy, out, args.format)
        return {"output": str(out)}

    if args.command == "build-dataset":
        src = Path(args.clean_dir) if args.clean_dir else bundled_scene_path().parent
        _echo(effective)
        manifest = build_dataset(src, cfg.dataset, out)
        _write_json(out / "effective_config.json", effective)
        return {"splits": manifest.splits, "skipped": len(manifest.skipped)}

    if args.command == "train":
        _echo(effective)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "effective_config.json", effective)
        result = train(args.dataset, cfg.model, cfg.train, out, log=print)
        r = result.report
        return {"best_epoch": r.best_epoch, "val_psnr": r.val_psnr[r.best_epoch - 1],
                "noisy_psnr": r.noisy_psnr}

    if args.command == "despeckle":
        effective["division_floor"] = loss_cfg.division_floor
        _echo(effective)
        noisy = as_gray(load_image(args.image), "noisy")
        est, ratio = despeckle_image(args.checkpoint, noisy, with_ratio=True,
                                     floor=loss_cfg.division_floor)
        save_image(est, out)
        if args.ratio:
            save_image(ratio, args.ratio)
        return {"output": str(out), "ratio_kl": ratio_kl(ratio, looks, loss_cfg)}

    if args.command == "evaluate":
        mode = "paired" if args.clean else "unpaired"
        effective["mode"] = mode
        _echo(effective)
        report = evaluate_corpus(args.checkpoint, args.noisy_dir, args.clean, mode=mode,
                                 looks=looks, loss_cfg=loss_cfg, out_dir=out)
        return report.aggregate()

    if args.command == "ratio":
        effective["division_floor"] = loss_cfg.division_floor
        _echo(effective)
        noisy = as_gray(load_image(args.noisy), "noisy")
        filtered = np.maximum(as_gray(load_image(args.filtered), "filtered"), 0.0)
        ratio = ratio_image(noisy, filtered, loss_cfg.division_floor)
        save_image(ratio, out)
        summary = {"output": str(out), "ratio_kl": ratio_kl(ratio, looks, loss_cfg)}
        try:
            summary["ratio_enl"] = enl(ratio)
        except ValueError:
            summary["ratio_enl"] = None
        return summary

    raise AssertionError(args.command)


def _plain(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "identical" if v > 0 else str(v)
    return v


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = run(args)
    except TrainingAborted as exc:
        print(f"speckle-lab: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except (SpeckleLabError, ValueError, OSError, KeyError) as exc:
        print(f"speckle-lab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps({k: _plain(v) for k, v in summary.items()}, default=str, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
