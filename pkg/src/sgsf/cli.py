"""Command line entry point: ``sgsf forge|build-contrast|train|eval|infer``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import load_config
from .dataset_io import (
    load_image, save_heatmap, save_image, scan_dataset,
)
from .errors import LayoutError, SGSFError, ValidationError
from .forge import forge_sample
from .saliency import load_saliency

log = logging.getLogger("sgsf")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgsf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help, *flags):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="YAML run config (defaults apply to absent keys)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        for flag in flags:
            sp.add_argument(f"--{flag}", **_FLAGS[flag])
        return sp

    add("forge", "write forged training samples as PNGs",
        "data-root", "category", "aux-dir", "saliency-dir", "out", "count")
    add("build-contrast", "rebuild the contrast index of a checkpoint",
        "data-root", "category", "checkpoint", "out")
    add("train", "train both networks", "data-root", "category", "aux-dir",
        "saliency-dir", "out", "checkpoint")
    add("eval", "score the test split and write a metrics report",
        "data-root", "category", "checkpoint", "out")
    sp = add("infer", "anomaly maps and scores for single images", "checkpoint", "out")
    sp.add_argument("images", nargs="+")
    add("make-synthetic", "write the synthetic smoke dataset", "out")
    return p


_FLAGS = {
    "data-root": dict(required=True, help="dataset root in the MVTec folder layout"),
    "category": dict(default="", help="category sub-folder under --data-root"),
    "aux-dir": dict(help="auxiliary texture images"),
    "saliency-dir": dict(help="per-image saliency PNGs matched by stem"),
    "checkpoint": dict(help="checkpoint file"),
    "out": dict(help="output path"),
    "count": dict(type=int, default=8, help="number of forged samples"),
}


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _need(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise ValidationError(f"--{name} is required for '{args.command}'")


def cmd_forge(args) -> None:
    _need(args, "aux-dir", "out")
    cfg = _config(args)
    index = scan_dataset(args.data_root, args.category, args.aux_dir)
    data = pipeline.prepare_data(index, cfg, args.saliency_dir)
    rng = np.random.default_rng(cfg.seed)
    out = Path(args.out)
    written = 0
    for k in range(args.count):
        i = k % len(data.stems)
        s = forge_sample(data.images[i], data.saliency[i], data.aux, cfg, rng, data.stems[i])
        if s is None:
            log.warning("no usable mask for %s, skipped", data.stems[i])
            continue
        save_image(s.image, out / f"{k:04d}_{s.source_stem}.png")
        save_image(s.label, out / f"{k:04d}_{s.source_stem}_label.png")
        written += 1
    print(f"wrote {written} forged samples to {out}")


def cmd_build_contrast(args) -> None:
    _need(args, "checkpoint")
    index = scan_dataset(args.data_root, args.category)
    idx = pipeline.build_contrast(args.checkpoint, index, args.out)
    print(f"contrast index: {idx.m} entries, dim {idx.vectors.shape[1]}")


def cmd_train(args) -> None:
    _need(args, "aux-dir", "out")
    cfg = _config(args)
    index = scan_dataset(args.data_root, args.category, args.aux_dir)
    ckpt = pipeline.train(index, cfg, args.out, args.saliency_dir, resume=args.checkpoint)
    print(f"checkpoint: {ckpt}")


def cmd_eval(args) -> None:
    _need(args, "checkpoint")
    index = scan_dataset(args.data_root, args.category)
    report_path = Path(args.out) if args.out else None
    rep = pipeline.evaluate(args.checkpoint, index, report_path=report_path)
    d = rep.to_dict()
    cols = ["auroc_det", "f1", "tpr", "tnr", "acc", "macc", "auroc_loc", "ap_loc"]
    print(" ".join(f"{c:>9}" for c in cols))
    print(" ".join(f"{'-':>9}" if d[c] is None else f"{d[c]:9.4f}" for c in cols))


def cmd_infer(args) -> None:
    _need(args, "checkpoint")
    det = pipeline.Detector.from_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else None
    rows = []
    for path in args.images:
        img = load_image(path, det.cfg.N, det.cfg.channels)
        res = det.score_image(img, Path(path).stem)
        row = {"image": str(path), "score": res.score, "guidance": res.guidance_stem}
        if out is not None:
            row["heatmap"] = str(save_heatmap(res.map, out / f"{Path(path).stem}.png"))
        rows.append(row)
    print(json.dumps(rows, indent=2))


def cmd_make_synthetic(args) -> None:
    from .synthetic import make_synthetic_dataset

    _need(args, "out")
    cfg = _config(args)
    base, aux = make_synthetic_dataset(args.out, seed=cfg.seed, N=cfg.N)
    print(f"dataset: {base}\naux: {aux}")


COMMANDS = {
    "forge": cmd_forge,
    "build-contrast": cmd_build_contrast,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, LayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SGSFError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
