"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np
import yaml

CHECKPOINT_ENV = "DOCBIN_CHECKPOINT_DIR"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("docbin")


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


class _ConfigLoader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot, e.g. ``1e-4``."""


_ConfigLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def parse_yaml(text: str):
    return yaml.load(text, Loader=_ConfigLoader)


def default_checkpoint_dir() -> Path:
    return Path(os.environ.get(CHECKPOINT_ENV, "checkpoints"))


# -- configuration -------------------------------------------------------


def apply_override(doc: dict, override: str) -> None:
    """Apply ``section.key=value``; the value is parsed as YAML."""
    if "=" not in override:
        raise UsageError(f"override {override!r} is not of the form section.key=value")
    dotted, raw = override.split("=", 1)
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise UsageError(f"override {dotted!r} descends into a non-mapping")
    node[keys[-1]] = parse_yaml(raw)


def load_config(path, overrides=()) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    try:
        doc = parse_yaml(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: invalid YAML ({exc})") from exc
    for section in ("model", "train", "data"):
        doc.setdefault(section, {})
        doc[section] = doc[section] or {}
    for ov in overrides:
        apply_override(doc, ov)
    return doc


def _dataset_from_section(data: dict, prefix: str):
    from .data import ingest_dataset, ingest_manifest, synth_corpus

    if data.get(f"{prefix}_manifest"):
        return ingest_manifest(data[f"{prefix}_manifest"])
    if data.get(f"{prefix}_image_dir"):
        return ingest_dataset(data[f"{prefix}_image_dir"], data[f"{prefix}_gt_dir"],
                              data.get("gt_suffix", "_gt"))
    synth = data.get(f"synth_{prefix}")
    if synth:
        return synth_corpus(int(synth["n"]), int(synth.get("seed", 0)),
                            start=int(synth.get("start", 0)))
    return None


# -- commands ------------------------------------------------------------


def cmd_train(args) -> int:
    from .data import AugmentConfig, extract_training_patches
    from .network import ModelConfig, build_model
    from .trainer import TrainConfig, train

    doc = load_config(args.config, args.override or [])
    train_section = dict(doc["train"])
    if not train_section.get("checkpoint_dir"):
        train_section["checkpoint_dir"] = str(default_checkpoint_dir())
    try:
        model_cfg = ModelConfig.from_dict(doc["model"])
        train_cfg = TrainConfig.from_dict(train_section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc

    data = doc["data"]
    train_samples = _dataset_from_section(data, "train")
    if not train_samples:
        raise UsageError("config provides no training data (data.train_manifest, "
                         "data.train_image_dir/train_gt_dir or data.synth_train)")
    val_samples = _dataset_from_section(data, "val")
    patches = [p for s in train_samples for p in extract_training_patches(s)]
    augment_cfg = None
    if data.get("augment", True):
        augment_cfg = AugmentConfig(out_size=int(data.get("out_size", 256)),
                                    seed=int(data.get("augment_seed", 0)))
    model = build_model(model_cfg, seed=train_cfg.seed)
    result = train(model, patches, train_cfg, val_set=val_samples, augment_cfg=augment_cfg,
                   header={"overrides": list(args.override or []), "config_path": str(args.config)})
    print(f"best checkpoint: {result.best_path}")
    print(f"final checkpoint: {result.final_path}")
    if result.best_val_fm is not None:
        print(f"best validation FM: {result.best_val_fm:.4f}")
    return EXIT_OK


def _input_files(paths) -> list[Path]:
    from .imagecore import SUPPORTED_SUFFIXES

    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(f for f in p.iterdir() if f.suffix.lower() in SUPPORTED_SUFFIXES))
        else:
            files.append(p)
    return files


def _resolve_checkpoint(path) -> Path:
    return Path(path) if path else default_checkpoint_dir() / "best.safetensors"


def cmd_binarize(args) -> int:
    from .imagecore import load_image, save_image, save_mask
    from .inference import binarize_document
    from .network import load_checkpoint

    overlap = 0 if args.no_overlap else args.overlap
    if args.patch_size % 8:
        raise UsageError("--patch-size must be divisible by 8")
    if not 0 <= overlap < args.patch_size:
        raise UsageError("--overlap must be in [0, patch-size)")
    model = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in _input_files(args.inputs):
        try:
            image = load_image(path)
            mask, prob = binarize_document(model, image, args.patch_size, overlap,
                                           args.threshold, return_probabilities=True)
            save_mask(mask, out_dir / f"{path.stem}.png")
            if args.save_probabilities:
                save_image(prob[:, :, None], out_dir / f"{path.stem}_prob.png")
            print(f"{path} -> {out_dir / (path.stem + '.png')}")
        except Exception as exc:  # report and continue with the next file
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    return EXIT_FAILURE if failures else EXIT_OK


def _write_report(report, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_text())
    path.with_suffix(".csv").write_text(report.to_csv())


def cmd_evaluate(args) -> int:
    from .data import PairingError, ingest_dataset, pair_files
    from .imagecore import load_mask
    from .metrics import MetricReport, evaluate_pair

    report_path = Path(args.report)
    if args.patch_sizes:
        from .inference import sweep_patch_sizes, sweep_table
        from .network import load_checkpoint

        try:
            sizes = [int(s) for s in args.patch_sizes.split(",")]
        except ValueError as exc:
            raise UsageError(f"--patch-sizes must be comma-separated integers") from exc
        model = load_checkpoint(_resolve_checkpoint(args.checkpoint))
        samples = ingest_dataset(args.pred_dir, args.gt_dir, args.gt_suffix)
        reports = sweep_patch_sizes(model, samples, sizes, args.overlap_mode)
        for size, report in reports.items():
            _write_report(report, report_path.with_name(f"{report_path.stem}_p{size}{report_path.suffix}"))
        table = sweep_table(reports)
        report_path.with_name(f"{report_path.stem}_sweep.csv").write_text(table)
        print(table, end="")
        return EXIT_OK

    try:
        pairs = pair_files(args.pred_dir, args.gt_dir, args.gt_suffix)
    except PairingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    report = MetricReport(label=str(args.pred_dir))
    for stem, pred_path, gt_path in pairs:
        pred, gt = load_mask(pred_path), load_mask(gt_path)
        report.per_image.append(evaluate_pair(pred, gt, stem))
    _write_report(report, report_path)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import synth_corpus

    if args.n < 1:
        raise UsageError("--n must be >= 1")
    synth_corpus(args.n, args.seed, args.out_dir, start=args.start)
    print(f"wrote {args.n} pairs to {args.out_dir}")
    return EXIT_OK


def cmd_info(args) -> int:
    from .network import count_parameters, load_checkpoint, read_checkpoint

    ckpt = read_checkpoint(_resolve_checkpoint(args.checkpoint))
    model = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    info = {
        "parameters": count_parameters(model),
        "training_step": ckpt.training_step,
        "format_version": ckpt.format_version,
        "model_config": ckpt.model_config.to_dict(),
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    from .data import ingest_dataset
    from .metrics import error_heatmap
    from .network import load_checkpoint

    model = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    samples = ingest_dataset(args.image_dir, args.gt_dir, args.gt_suffix)
    grid = error_heatmap(model, samples, args.patch_size)
    np.savetxt(args.out, grid, delimiter=",", fmt="%.6f")
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} heatmap to {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docbin", description="Document image binarization toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a YAML config")
    p.add_argument("config")
    p.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("binarize", help="binarize images with a trained checkpoint")
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.add_argument("--checkpoint", help=f"default: ${CHECKPOINT_ENV}/best.safetensors")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch-size", type=int, default=512)
    p.add_argument("--overlap", type=int, default=256)
    p.add_argument("--no-overlap", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--save-probabilities", action="store_true")
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    p.add_argument("pred_dir", help="predicted masks (or, with --patch-sizes, input images)")
    p.add_argument("gt_dir")
    p.add_argument("--report", required=True, help="text report path; a .csv twin is written alongside")
    p.add_argument("--gt-suffix", default="_gt")
    p.add_argument("--patch-sizes", help="sweep mode: comma-separated inference patch sizes")
    p.add_argument("--overlap-mode", choices=("half", "none"), default="half")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic degraded-document corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("info", help="show checkpoint configuration and parameter count")
    p.add_argument("checkpoint", nargs="?")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("heatmap", help="16x16 average error distribution over patches")
    p.add_argument("image_dir")
    p.add_argument("gt_dir")
    p.add_argument("--checkpoint")
    p.add_argument("--gt-suffix", default="_gt")
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
