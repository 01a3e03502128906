"""Command-line interface.

Subcommands: gen-data, train, eval, gradcheck, dilution, ablate,
visualize. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from dataclasses import replace

import numpy as np

from fbnet import checkpoint, colormap, data, gradcheck, metrics, network, train
from fbnet.checkpoint import CheckpointError
from fbnet.data import CamoConfig, DataError
from fbnet.netpbm import NetpbmError, read_ppm
from fbnet.network import STAGE_NAMES, ConfigError, ModelConfig
from fbnet.train import NumericError, TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DEFAULT_SCHEME_DICT = {"total": 8, "foreground_ids": [3, 4, 5, 6, 7]}

ARMS = (
    # (name, inject, block variant)
    ("baseline", (), "full"),
    ("bwbce_only", ("res5",), "aux_only"),
    ("dfm_only", ("res5",), "sensors_only"),
    ("fbnet", ("res5",), "full"),
)


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1, not argparse's default 2 (reserved for data errors)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path):
    if not os.path.exists(path):
        raise DataError(f"no such config file: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable JSON in {path}: {exc}") from None


def build_parser():
    parser = _Parser(prog="fbnet", description="camouflage-aware segmentation workbench")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset split")
    g.add_argument("--out", required=True, help="dataset directory")
    g.add_argument("--split", default="train")
    g.add_argument("--count", type=int, default=512)
    g.add_argument("--seed", type=int, default=None, help="split seed (default: derived from split name)")
    g.add_argument("--config", default=None, help="JSON file of generator fields")
    g.add_argument("--force", action="store_true", help="overwrite an existing non-empty split")

    t = sub.add_parser("train", help="train a model on a dataset split")
    t.add_argument("--data", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    t.add_argument("--config", default=None, help='JSON: {"train": {...}, "model": {...}}')
    t.add_argument("--seed", type=int, default=None, help="override the training seed")
    t.add_argument("--no-fbnet", action="store_true", help="no injected blocks (baseline arm)")
    t.add_argument("--inject", default=None, help="comma-separated stages, e.g. res4,res5")
    t.add_argument("--block-variant", default=None, choices=("full", "aux_only", "sensors_only"))

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", default=None, help="directory for eval.json (default: print only)")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op")
    gc.add_argument("--seeds", type=int, default=10)
    gc.add_argument("--ops-only", action="store_true", help="skip the block and end-to-end cases")

    d = sub.add_parser("dilution", help="gradient-dilution probe")
    d.add_argument("--stride", type=int, required=True)
    d.add_argument("--out", default=None, help="CSV path (default: print)")

    a = sub.add_parser("ablate", help="train and evaluate the four-arm matrix")
    a.add_argument("--data", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--out", required=True, help="report CSV path")
    a.add_argument("--config", default=None, help="train/model config JSON shared by all arms")
    a.add_argument("--runs-dir", default=None, help="where per-arm run dirs go (default: alongside report)")

    v = sub.add_parser("visualize", help="render a stage's modulated feature map")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--image", required=True, help="input PPM")
    v.add_argument("--stage", default="res5", choices=STAGE_NAMES)
    v.add_argument("--out", required=True, help="output PPM heatmap")
    return parser


# -- command bodies ----------------------------------------------------------


def _camo_config(args):
    fields = {}
    if args.config:
        fields = _read_json(args.config)
        if not isinstance(fields, dict):
            raise DataError(f"{args.config} must hold a JSON object")
    try:
        config = CamoConfig(**fields)
    except TypeError as exc:
        raise ValueError(f"bad generator config: {exc}") from None
    return config


def cmd_gen_data(args):
    config = _camo_config(args)
    seed = args.seed if args.seed is not None else zlib.crc32(args.split.encode()) % 100000
    if args.count < 0:
        raise ValueError("--count must be >= 0")
    manifest = data.write_split(args.out, config, args.split, args.count, seed, force=args.force)
    print(f"wrote {args.count} samples to {os.path.join(args.out, args.split)} (seed {seed})")
    print(f"manifest: {data.manifest_path(args.out)} with splits {sorted(manifest['splits'])}")
    return EXIT_OK


def _split_config_file(raw, path):
    if not isinstance(raw, dict):
        raise DataError(f"{path} must hold a JSON object")
    if "train" in raw or "model" in raw:
        unknown = set(raw) - {"train", "model"}
        if unknown:
            raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
        return dict(raw.get("train", {})), dict(raw.get("model", {}))
    return dict(raw), {}


def _parse_configs(config_path, seed=None, no_fbnet=False, inject=None, block_variant=None):
    train_dict, model_dict = {}, {}
    if config_path:
        train_dict, model_dict = _split_config_file(_read_json(config_path), config_path)
    train_config = TrainConfig.from_dict(train_dict)
    if seed is not None:
        train_config = replace(train_config, seed=seed)
    model_dict.setdefault("scheme", _DEFAULT_SCHEME_DICT)
    if no_fbnet:
        if inject:
            raise ValueError("--no-fbnet and --inject are mutually exclusive")
        model_dict["inject"] = []
    elif inject:
        model_dict["inject"] = [s.strip() for s in inject.split(",") if s.strip()]
    if block_variant:
        model_dict["block_variant"] = block_variant
    try:
        model_config = ModelConfig.from_dict(model_dict)
    except TypeError as exc:
        raise ValueError(f"bad model config: {exc}") from None
    return train_config, model_config


def cmd_train(args):
    train_config, model_config = _parse_configs(
        args.config,
        seed=args.seed,
        no_fbnet=args.no_fbnet,
        inject=args.inject,
        block_variant=args.block_variant,
    )
    samples = data.load_split(args.data, args.split)
    print(
        f"training on {len(samples)} samples ({args.split}); "
        f"inject={list(model_config.inject)} variant={model_config.block_variant} "
        f"seed={train_config.seed}"
    )
    _, final = train.train(train_config, model_config, samples, args.out)
    print(f"final checkpoint: {final}")
    return EXIT_OK


def _load_model(checkpoint_path):
    run_dir = os.path.dirname(os.path.abspath(checkpoint_path))
    config_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(config_path):
        raise DataError(f"no config.json next to {checkpoint_path}; cannot rebuild the architecture")
    raw = _read_json(config_path)
    model_config = ModelConfig.from_dict(raw["model"])
    model = network.build(model_config, seed=0)
    checkpoint.load_into(checkpoint_path, model.parameters())
    return model


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    samples = data.load_split(args.data, args.split)
    report = train.evaluate(model, samples)
    for c, iou in enumerate(report.per_class_iou()):
        label = data.CLASS_NAMES[c] if c < len(data.CLASS_NAMES) else str(c)
        print(f"iou[{c}] {label:<9} {'undefined' if iou is None else f'{iou:.4f}'}")
    print(f"miou   {report.miou():.4f}")
    print(f"f_miou {report.f_miou():.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        out_path = os.path.join(args.out, "eval.json")
        report.save_json(out_path)
        print(f"report: {out_path}")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    results = gradcheck.battery(seeds=range(args.seeds), full=not args.ops_only)
    worst = {}
    for name, _, err in results:
        worst[name] = max(worst.get(name, 0.0), err)
    for name, err in worst.items():
        status = "ok" if err < gradcheck.TOL else "FAIL"
        print(f"{name:<22} max rel err {err:.3e}  {status}")
    overall = max(worst.values())
    print(f"{len(worst)} cases x {args.seeds} seeds: max rel err {overall:.3e} (tol {gradcheck.TOL:.0e})")
    if overall >= gradcheck.TOL:
        raise NumericError("finite-difference check failed")
    return EXIT_OK


def cmd_dilution(args):
    report = metrics.dilution_probe(args.stride)
    csv = report.to_csv()
    if args.out:
        report.save_csv(args.out)
        print(f"wrote {args.out}")
    else:
        print(csv, end="")
    return EXIT_OK


def cmd_ablate(args):
    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    base_train, base_model = _parse_configs(args.config)
    train_samples = data.load_split(args.data, "train")
    val_samples = data.load_split(args.data, "val")
    runs_dir = args.runs_dir or os.path.join(os.path.dirname(os.path.abspath(args.out)) or ".", "runs")
    rows = []
    for arm, inject, variant in ARMS:
        for seed in range(args.seeds):
            model_config = replace(base_model, inject=inject, block_variant=variant)
            train_config = replace(base_train, seed=seed)
            out_dir = os.path.join(runs_dir, f"{arm}_seed{seed}")
            model, _ = train.train(train_config, model_config, train_samples, out_dir)
            report = train.evaluate(model, val_samples)
            rows.append((arm, seed, report.miou(), report.f_miou()))
            print(f"{arm} seed {seed}: miou {rows[-1][2]:.4f} f_miou {rows[-1][3]:.4f}")
    lines = ["arm,seed,miou,f_miou"]
    lines += [f"{arm},{seed},{miou:.6f},{fmiou:.6f}" for arm, seed, miou, fmiou in rows]
    for arm, _, _ in ARMS:
        picked = [(m, f) for a, _, m, f in rows if a == arm]
        mean_m = sum(m for m, _ in picked) / len(picked)
        mean_f = sum(f for _, f in picked) / len(picked)
        lines.append(f"{arm},mean,{mean_m:.6f},{mean_f:.6f}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"report: {args.out}")
    return EXIT_OK


def cmd_visualize(args):
    model = _load_model(args.checkpoint)
    block = model.blocks.get(args.stage)
    if block is None or not block.has_sensors:
        raise ValueError(f"stage {args.stage} has no modulated branch in this checkpoint")
    image = read_ppm(args.image).astype(np.float32) / 255.0
    result = model.forward(image, capture_xo=True)
    heat = result.xo[args.stage].data.mean(axis=0)
    colormap.heatmap_ppm(args.out, heat)
    print(f"wrote {args.out} ({heat.shape[0]}x{heat.shape[1]} heatmap)")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "dilution": cmd_dilution,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, NetpbmError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:  # includes ConfigError and bad flag values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
