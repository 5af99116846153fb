"""Command-line interface.

Subcommands: generate, train, fewshot, eval, infer, serve. Each takes
--config <path> (JSON), --out <dir> and --seed <int>; SMOL_DATA_ROOT
provides a default dataset root where a config omits "dataset". Exit codes:
0 success, 2 invalid configuration or arguments, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .datapipe import (
    FEWSHOT,
    TEST,
    TRAIN,
    Patch,
    build_dataset,
    crop_fewshot,
    crop_patches,
    grid_split,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    compare_models,
    evaluate_model,
    evaluate_unet,
    format_comparison,
    segment_raster,
)
from .model import (
    ModelConfig,
    UNetConfig,
    build_model,
    build_unet,
    load_model,
    save_checkpoint,
)
from .model.unet import BaselineUNet
from .sampler import UnsatisfiableDataset
from .synthmap import (
    AmbiguityConfig,
    ClassId,
    StyleSpec,
    ambiguity_ceiling,
    make_ambiguity_suite,
    make_pattern_library,
    render_sheet,
)
from .training import TrainConfig, fewshot_finetune, train, train_baseline


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")


def _dataset_path(config: dict) -> Path:
    path = config.get("dataset") or os.environ.get("SMOL_DATA_ROOT")
    if not path:
        raise ConfigError('config needs a "dataset" path (or set SMOL_DATA_ROOT)')
    if not Path(path).exists():
        raise ConfigError(f"dataset root does not exist: {path}")
    return Path(path)


def _out_dir(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_generate(config: dict, out_dir: Path, seed: int | None = None) -> Path:
    """Render the ambiguity suite, crop, split, and store it under out_dir."""
    try:
        amb = AmbiguityConfig.from_dict(config)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e))
    if seed is not None:
        amb.seed = seed
    sheets = make_ambiguity_suite(amb)
    dataset = build_dataset(
        sheets,
        amb.classes,
        amb.styles,
        amb.patch_size,
        min_pixels=amb.min_pixels,
        extra={
            "generator_config": amb.to_dict(),
            "ceiling": ambiguity_ceiling(sheets, amb.styles),
        },
    )
    out = _out_dir(out_dir)
    save_dataset(
        out,
        sheets,
        dataset.patches,
        amb.classes,
        amb.styles,
        amb.patch_size,
        dataset.min_pixels,
        extra=dataset.extra,
    )
    counts = {s: len(p) for s, p in dataset.patches.items()}
    print(f"dataset written to {out}")
    print(f"sheets: {len(sheets)}  patches: {counts}")
    ceiling = dataset.extra["ceiling"]
    for cid, info in ceiling["per_class"].items():
        print(f"collision class {cid}: style-blind iou ceiling {info['iou_ceiling']:.4f}")
    return out


def run_train(config: dict, out_dir: Path, seed: int | None = None) -> dict:
    """Train the prompted model and/or the baseline; write checkpoints + logs."""
    dataset = load_dataset(_dataset_path(config))
    out = _out_dir(out_dir)
    try:
        train_cfg = TrainConfig.from_dict(config.get("train", {}))
        if seed is not None:
            train_cfg.seed = seed
        which = config.get("model_kind", "smolmapseg")
        if which not in ("smolmapseg", "unet", "both"):
            raise ConfigError(f'model_kind must be smolmapseg, unet or both, got "{which}"')
        model_cfg = ModelConfig.from_dict(config.get("model", {}))
        unet_cfg = UNetConfig.from_dict(
            config.get("unet", {"patch_size": dataset.patch_size, "out_channels": len(dataset.classes) + 1})
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))

    classes = [{"id": c.id, "name": c.name} for c in dataset.classes]
    artifacts: dict = {}

    def progress(stats):
        print(
            f"epoch {stats.epoch:3d}  loss {stats.mean_loss:.4f}  "
            f"lr {stats.lr:.2e}  {stats.wall_time:.1f}s",
            flush=True,
        )

    if which in ("smolmapseg", "both"):
        model = build_model(model_cfg, seed=train_cfg.seed)
        log = train(model, dataset, train_cfg, progress=progress)
        ckpt = out / "model.ckpt"
        save_checkpoint(ckpt, model, classes=classes)
        log.checkpoint_path = str(ckpt)
        log.save(out / "train_log.jsonl")
        artifacts["checkpoint"] = str(ckpt)
        artifacts["log"] = str(out / "train_log.jsonl")
    if which in ("unet", "both"):
        unet = build_unet(unet_cfg, seed=train_cfg.seed)
        log = train_baseline(unet, dataset, train_cfg)
        ckpt = out / "unet.ckpt"
        save_checkpoint(ckpt, unet, classes=classes)
        log.checkpoint_path = str(ckpt)
        log.save(out / "unet_train_log.jsonl")
        artifacts["unet_checkpoint"] = str(ckpt)
        artifacts["unet_log"] = str(out / "unet_train_log.jsonl")
    return artifacts


def build_fewshot_sheets(spec: dict):
    """Render the few-shot sheets and split them into pool and eval data.

    Sheet 0 supplies the fine-tuning pool (overlapping crops, capped at
    max_patches); the remaining sheets are checkerboard-split so their train
    half provides prompt sources and their test half held-out targets.
    """
    style = spec["style"]
    if isinstance(style, dict):
        style = StyleSpec(
            style_id=int(style["style_id"]),
            class_to_pattern={int(k): int(v) for k, v in style["class_to_pattern"].items()},
            background_color=tuple(style["background_color"]),
        )
    new_class = spec["new_class"]
    if isinstance(new_class, dict):
        new_class = ClassId(int(new_class["id"]), str(new_class["name"]))
    classes = [
        ClassId(int(c["id"]), str(c["name"])) if isinstance(c, dict) else c
        for c in spec["classes"]
    ]
    n_patterns = max(style.class_to_pattern.values()) + 1
    patterns = make_pattern_library(int(spec.get("pattern_seed", spec["seed"])), max(6, n_patterns))
    height, width = int(spec["sheet_height"]), int(spec["sheet_width"])
    rng = np.random.default_rng(int(spec["seed"]))
    sheets = [
        render_sheet(
            style,
            int(rng.integers(2**48)),
            height,
            width,
            classes,
            patterns,
            sheet_id=int(spec.get("first_sheet_id", 1000)) + i,
            n_cells=spec.get("cells_per_sheet"),
            background_weight=int(spec.get("background_weight", 1)),
        )
        for i in range(int(spec["n_sheets"]))
    ]

    patch_size = int(spec.get("patch_size", 64))
    pool = crop_fewshot(
        sheets[0],
        region=(0, 0, height, width),
        patch_size=patch_size,
        margin=int(spec["margin"]),
        start_id=int(spec.get("first_patch_id", 10**6)),
    )
    pool = pool[: int(spec["max_patches"])]

    eval_patches: list[Patch] = []
    next_id = int(spec.get("first_patch_id", 10**6)) + len(pool)
    for sheet in sheets[1:]:
        got = crop_patches(sheet, patch_size, start_id=next_id)
        next_id += len(got)
        eval_patches.extend(got)
    eval_train, eval_test = grid_split(eval_patches)
    return sheets, pool, eval_train, eval_test, classes, new_class, style


def run_fewshot(config: dict, out_dir: Path, seed: int | None = None) -> dict:
    """Fine-tune a trained checkpoint on a small new-class pool."""
    if "checkpoint" not in config:
        raise ConfigError('config needs a "checkpoint" path')
    if not Path(config["checkpoint"]).exists():
        raise ConfigError(f"checkpoint does not exist: {config['checkpoint']}")
    if "fewshot" not in config:
        raise ConfigError('config needs a "fewshot" block')
    out = _out_dir(out_dir)
    try:
        train_cfg = TrainConfig.from_dict(config.get("train", {}))
        if seed is not None:
            train_cfg.seed = seed
        sheets, pool, eval_train, eval_test, classes, new_class, style = build_fewshot_sheets(
            config["fewshot"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e))

    model = load_model(config["checkpoint"])
    if isinstance(model, BaselineUNet):
        raise ConfigError("few-shot adaptation needs a prompted-model checkpoint")
    min_pixels = int(config["fewshot"].get("min_pixels", 32))
    log = fewshot_finetune(
        model,
        pool,
        new_class.id,
        train_cfg,
        min_pixels=min_pixels,
        class_universe={c.id for c in classes},
    )
    ckpt = out / "adapted.ckpt"
    save_checkpoint(ckpt, model, classes=[{"id": c.id, "name": c.name} for c in classes])
    log.checkpoint_path = str(ckpt)
    log.save(out / "fewshot_log.jsonl")

    eval_dataset = build_dataset(
        sheets[1:], classes, [style], patch_size=pool[0].size, min_pixels=min_pixels
    )
    report = evaluate_model(model, eval_dataset, class_ids=[new_class.id])
    report.checkpoint_id = str(ckpt)
    report.save(out / "fewshot_report.json")
    iou = report.per_class[new_class.id].metrics.iou
    print(f"few-shot pool: {len(pool)} patches; new class {new_class.id} iou {iou:.4f}")
    return {
        "checkpoint": str(ckpt),
        "log": str(out / "fewshot_log.jsonl"),
        "report": str(out / "fewshot_report.json"),
        "new_class_iou": iou,
    }


def run_eval(config: dict, out_dir: Path, seed: int | None = None) -> dict:
    """Evaluate a checkpoint; add a comparison table when a baseline is given."""
    dataset = load_dataset(_dataset_path(config))
    if "checkpoint" not in config:
        raise ConfigError('config needs a "checkpoint" path')
    if not Path(config["checkpoint"]).exists():
        raise ConfigError(f"checkpoint does not exist: {config['checkpoint']}")
    out = _out_dir(out_dir)
    prompt_seed = int(config.get("prompt_seed", 0)) if seed is None else seed
    threshold = float(config.get("threshold", 0.5))
    split = config.get("split", TEST)
    if split not in (TRAIN, TEST, FEWSHOT):
        raise ConfigError(f"unknown split {split!r}")

    model = load_model(config["checkpoint"])
    artifacts: dict = {}
    if isinstance(model, BaselineUNet):
        report = evaluate_unet(model, dataset, split=split)
    else:
        report = evaluate_model(
            model, dataset, split=split, threshold=threshold, prompt_seed=prompt_seed
        )
    report.checkpoint_id = str(config["checkpoint"])
    report.save(out / "report.json")
    artifacts["report"] = str(out / "report.json")
    print(f"mean iou {report.mean_iou:.4f}  degraded classes {report.degraded_classes}")

    baseline_path = config.get("baseline_checkpoint")
    if baseline_path:
        if not Path(baseline_path).exists():
            raise ConfigError(f"baseline checkpoint does not exist: {baseline_path}")
        baseline = load_model(baseline_path)
        if not isinstance(baseline, BaselineUNet):
            raise ConfigError("baseline_checkpoint must hold a unet")
        unet_report = evaluate_unet(baseline, dataset, split=split)
        unet_report.checkpoint_id = str(baseline_path)
        unet_report.save(out / "unet_report.json")
        cmp = compare_models(report, unet_report)
        (out / "comparison.json").write_text(json.dumps(cmp, indent=1) + "\n")
        table = format_comparison(cmp)
        (out / "comparison.txt").write_text(table + "\n")
        print(table)
        artifacts["unet_report"] = str(out / "unet_report.json")
        artifacts["comparison"] = str(out / "comparison.json")
    return artifacts


def run_infer(config: dict, out_dir: Path, seed: int | None = None) -> dict:
    """Segment one (source image, source mask, target image) triple."""
    from PIL import Image

    for key in ("checkpoint", "source_image", "source_mask", "target_image"):
        if key not in config:
            raise ConfigError(f'config needs a "{key}" path')
        if not Path(config[key]).exists():
            raise ConfigError(f"{key} does not exist: {config[key]}")
    model = load_model(config["checkpoint"])
    if isinstance(model, BaselineUNet):
        raise ConfigError("infer needs a prompted-model checkpoint")

    def load_rgb(path):
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))

    def load_gray(path):
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))

    source = load_rgb(config["source_image"])
    mask = load_gray(config["source_mask"])
    target = load_rgb(config["target_image"])
    try:
        pred = segment_raster(
            model, source, mask, target, threshold=float(config.get("threshold", 0.5))
        )
    except ValueError as e:
        raise ConfigError(str(e))
    out = _out_dir(out_dir)
    t0 = time.perf_counter()
    Image.fromarray(pred * 255, mode="L").save(out / "mask.png")
    fraction = float(np.count_nonzero(pred)) / pred.size
    print(
        f"mask written to {out / 'mask.png'}  foreground fraction {fraction:.4f}  "
        f"({(time.perf_counter() - t0) * 1000:.0f} ms encode)"
    )
    return {"mask": str(out / "mask.png"), "foreground_fraction": fraction}


def run_serve(config: dict, out_dir: Path, seed: int | None = None) -> None:
    import uvicorn

    from .service import create_app

    if "checkpoint" not in config:
        raise ConfigError('config needs a "checkpoint" path')
    if not Path(config["checkpoint"]).exists():
        raise ConfigError(f"checkpoint does not exist: {config['checkpoint']}")
    dataset_root = config.get("dataset") or os.environ.get("SMOL_DATA_ROOT")
    app = create_app(
        config["checkpoint"],
        dataset_root=dataset_root,
        max_side=int(config.get("max_side", 2048)),
    )
    uvicorn.run(app, host=config.get("host", "127.0.0.1"), port=int(config.get("port", 8008)))


COMMANDS = {
    "generate": run_generate,
    "train": run_train,
    "fewshot": run_fewshot,
    "eval": run_eval,
    "infer": run_infer,
    "serve": run_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smolmapseg",
        description="OND-prompted segmentation of synthetic historical maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_json(args.config)
        COMMANDS[args.command](config, Path(args.out), args.seed)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except UnsatisfiableDataset as e:
        print(f"error: sampler cannot proceed: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        if args.verbose:
            raise
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
