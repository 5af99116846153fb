"""Metrics, the prompted per-class evaluation protocol, and sheet stitching.

Metric conventions (degenerate denominators):
  - empty ground truth and empty prediction: iou = precision = recall = 1
  - otherwise a zero denominator makes that one metric 0

Per-class scores are micro-averaged: confusion counts are pooled over all
evaluated patches first and the metrics computed once from the pooled counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from .datapipe import TEST, TRAIN, Dataset
from .model.network import SmolMapSeg, images_to_tensor, masks_to_tensor
from .model.unet import BaselineUNet

DEGRADED_IOU = 0.5  # classes scoring below this are flagged in reports


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn
        )


@dataclass(frozen=True)
class BinaryMetrics:
    iou: float
    precision: float
    recall: float


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts for a binary prediction against binary ground truth."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p = pred != 0
    g = gt != 0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn)


def metrics_from_counts(c: ConfusionCounts) -> BinaryMetrics:
    if c.tp == 0 and c.fp == 0 and c.fn == 0:
        return BinaryMetrics(1.0, 1.0, 1.0)

    def ratio(num: int, den: int) -> float:
        return num / den if den else 0.0

    return BinaryMetrics(
        iou=ratio(c.tp, c.tp + c.fp + c.fn),
        precision=ratio(c.tp, c.tp + c.fp),
        recall=ratio(c.tp, c.tp + c.fn),
    )


@dataclass
class ClassEval:
    class_id: int
    name: str
    counts: ConfusionCounts
    metrics: BinaryMetrics
    n_pairs: int
    skipped_sheets: list[int] = field(default_factory=list)
    by_style: dict[int, BinaryMetrics] = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return self.metrics.iou < DEGRADED_IOU

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "name": self.name,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "fn": self.counts.fn},
            "iou": self.metrics.iou,
            "precision": self.metrics.precision,
            "recall": self.metrics.recall,
            "n_pairs": self.n_pairs,
            "skipped_sheets": self.skipped_sheets,
            "degraded": self.degraded,
            "by_style": {
                str(sid): {"iou": m.iou, "precision": m.precision, "recall": m.recall}
                for sid, m in sorted(self.by_style.items())
            },
        }


@dataclass
class EvalReport:
    model_kind: str
    per_class: dict[int, ClassEval]
    dataset_id: str = ""
    checkpoint_id: str = ""
    prompt_seed: int | None = None
    threshold: float = 0.5

    @property
    def mean_iou(self) -> float:
        return float(np.mean([c.metrics.iou for c in self.per_class.values()]))

    @property
    def degraded_classes(self) -> list[int]:
        return sorted(cid for cid, c in self.per_class.items() if c.degraded)

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "dataset_id": self.dataset_id,
            "checkpoint_id": self.checkpoint_id,
            "prompt_seed": self.prompt_seed,
            "threshold": self.threshold,
            "classes": [self.per_class[cid].to_dict() for cid in sorted(self.per_class)],
            "mean_iou": self.mean_iou,
            "mean_precision": float(
                np.mean([c.metrics.precision for c in self.per_class.values()])
            ),
            "mean_recall": float(
                np.mean([c.metrics.recall for c in self.per_class.values()])
            ),
            "degraded_classes": self.degraded_classes,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def predict_pairs(
    model: SmolMapSeg,
    sources: Sequence[np.ndarray],
    source_masks: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    threshold: float = 0.5,
    batch_size: int = 16,
) -> np.ndarray:
    """Binary predictions for a list of prompted pairs, batched for speed."""
    model.eval()
    dev = next(model.parameters()).device
    out = []
    with torch.no_grad():
        for i in range(0, len(targets), batch_size):
            ti = images_to_tensor(np.stack(targets[i : i + batch_size])).to(dev)
            si = images_to_tensor(np.stack(sources[i : i + batch_size])).to(dev)
            sm = masks_to_tensor(np.stack(source_masks[i : i + batch_size])).to(dev)
            probs = torch.sigmoid(model(ti, si, sm))
            out.append((probs >= threshold).cpu().numpy().astype(np.uint8))
    if not out:
        return np.zeros((0,), dtype=np.uint8)
    return np.concatenate(out)


def evaluate_class(
    model: SmolMapSeg,
    dataset: Dataset,
    class_id: int,
    split: str = TEST,
    threshold: float = 0.5,
    prompt_seed: int = 0,
    batch_size: int = 16,
) -> ClassEval:
    """Prompted evaluation of one class over a held-out split.

    Every patch of the split belonging to a sheet that contains the class is
    segmented, prompted by a seeded random source patch drawn from the same
    sheet's train split. Sheets with no usable train source are skipped and
    recorded.
    """
    train_index = dataset.index_for(TRAIN)
    eval_index = dataset.index_for(split)
    eval_patches = dataset.split(split)
    patch_by_id = {p.patch_id: p for p in dataset.split(TRAIN)}
    rng = np.random.default_rng([prompt_seed, class_id])

    relevant_sheets = {
        sid
        for sid in dataset.sheet_meta
        if class_id in train_index.sheet_classes(sid) | eval_index.sheet_classes(sid)
    }
    sources_by_sheet = {
        sid: sorted(train_index.patches_with(sid, class_id)) for sid in relevant_sheets
    }
    skipped = sorted(sid for sid, pool in sources_by_sheet.items() if not pool)

    targets, sources, source_masks, styles = [], [], [], []
    for p in eval_patches:
        pool = sources_by_sheet.get(p.sheet_id)
        if not pool:
            continue
        src = patch_by_id[pool[int(rng.integers(len(pool)))]]
        targets.append(p)
        sources.append(src.image)
        source_masks.append((src.label == class_id).astype(np.uint8))
        styles.append(dataset.sheet_meta[p.sheet_id]["style_id"])

    preds = predict_pairs(
        model,
        sources,
        source_masks,
        [p.image for p in targets],
        threshold=threshold,
        batch_size=batch_size,
    )

    total = ConfusionCounts()
    per_style: dict[int, ConfusionCounts] = {}
    for patch, pred, style in zip(targets, preds, styles):
        c = confusion(pred, (patch.label == class_id).astype(np.uint8))
        total = total + c
        per_style[style] = per_style.get(style, ConfusionCounts()) + c

    return ClassEval(
        class_id=class_id,
        name=dataset.class_by_id(class_id).name,
        counts=total,
        metrics=metrics_from_counts(total),
        n_pairs=len(targets),
        skipped_sheets=skipped,
        by_style={s: metrics_from_counts(c) for s, c in per_style.items()},
    )


def evaluate_model(
    model: SmolMapSeg,
    dataset: Dataset,
    class_ids: Iterable[int] | None = None,
    split: str = TEST,
    threshold: float = 0.5,
    prompt_seed: int = 0,
    batch_size: int = 16,
) -> EvalReport:
    ids = sorted(class_ids) if class_ids is not None else [c.id for c in dataset.classes]
    per_class = {
        cid: evaluate_class(model, dataset, cid, split, threshold, prompt_seed, batch_size)
        for cid in ids
    }
    return EvalReport(
        model_kind="smolmapseg",
        per_class=per_class,
        dataset_id=str(dataset.root) if dataset.root else "in-memory",
        prompt_seed=prompt_seed,
        threshold=threshold,
    )


def evaluate_unet(
    model: BaselineUNet,
    dataset: Dataset,
    class_ids: Iterable[int] | None = None,
    split: str = TEST,
    batch_size: int = 16,
) -> EvalReport:
    """Per-class metrics for the baseline's argmax predictions.

    The baseline needs no prompt, so every patch of the split contributes to
    every class. Output channel i corresponds to the i-th entry of the sorted
    class list; channel 0 is background.
    """
    ids = sorted(class_ids) if class_ids is not None else [c.id for c in dataset.classes]
    channel_of = {
        c.id: i + 1 for i, c in enumerate(sorted(dataset.classes, key=lambda c: c.id))
    }
    patches = dataset.split(split)
    model.eval()
    dev = next(model.parameters()).device

    totals = {cid: ConfusionCounts() for cid in ids}
    per_style: dict[int, dict[int, ConfusionCounts]] = {cid: {} for cid in ids}
    n_pairs = dict.fromkeys(ids, 0)
    with torch.no_grad():
        for i in range(0, len(patches), batch_size):
            chunk = patches[i : i + batch_size]
            x = images_to_tensor(np.stack([p.image for p in chunk])).to(dev)
            pred_ids = model(x).argmax(dim=1).cpu().numpy()
            for patch, pred in zip(chunk, pred_ids):
                style = dataset.sheet_meta[patch.sheet_id]["style_id"]
                for cid in ids:
                    c = confusion(
                        (pred == channel_of[cid]).astype(np.uint8),
                        (patch.label == cid).astype(np.uint8),
                    )
                    totals[cid] = totals[cid] + c
                    by = per_style[cid]
                    by[style] = by.get(style, ConfusionCounts()) + c
                    n_pairs[cid] += 1

    per_class = {
        cid: ClassEval(
            class_id=cid,
            name=dataset.class_by_id(cid).name,
            counts=totals[cid],
            metrics=metrics_from_counts(totals[cid]),
            n_pairs=n_pairs[cid],
            by_style={s: metrics_from_counts(c) for s, c in per_style[cid].items()},
        )
        for cid in ids
    }
    return EvalReport(
        model_kind="unet",
        per_class=per_class,
        dataset_id=str(dataset.root) if dataset.root else "in-memory",
        prompt_seed=None,
    )


def stitch_sheet(
    patch_preds: Iterable[tuple[int, int, np.ndarray]], height: int, width: int
) -> np.ndarray:
    """Place non-overlapping P x P tiles back onto a sheet-sized canvas.

    Uncovered margins stay zero. Duplicate grid cells are an error.
    """
    out = np.zeros((height, width), dtype=np.uint8)
    seen: set[tuple[int, int]] = set()
    for row, col, tile in patch_preds:
        if (row, col) in seen:
            raise ValueError(f"duplicate grid cell ({row}, {col})")
        seen.add((row, col))
        p = tile.shape[0]
        if tile.shape != (p, p):
            raise ValueError(f"tiles must be square, got {tile.shape}")
        y, x = row * p, col * p
        if y + p > height or x + p > width:
            raise ValueError(f"tile ({row}, {col}) falls outside a {height}x{width} sheet")
        out[y : y + p, x : x + p] = (tile != 0).astype(np.uint8)
    return out


def segment_raster(
    model: SmolMapSeg,
    source_image: np.ndarray,
    source_mask: np.ndarray,
    target_image: np.ndarray,
    threshold: float = 0.5,
    batch_size: int = 16,
) -> np.ndarray:
    """Prompted segmentation of a target raster of any size >= P.

    The target is tiled on the patch grid and the tile predictions stitched
    back; residual margins beyond the grid stay zero. When the source raster
    is larger than one patch, the grid tile with the most mask foreground
    becomes the prompt.
    """
    p = model.cfg.patch_size
    if source_image.shape[:2] != source_mask.shape:
        raise ValueError("source image and source mask dims must match")
    th, tw = target_image.shape[:2]
    sh, sw = source_mask.shape
    if min(th, tw, sh, sw) < p:
        raise ValueError(f"all rasters must be at least {p} pixels per side")
    if not np.any(source_mask):
        raise ValueError("source mask is empty")

    best, best_fg = None, -1
    for r in range(sh // p):
        for c in range(sw // p):
            fg = int(np.count_nonzero(source_mask[r * p : (r + 1) * p, c * p : (c + 1) * p]))
            if fg > best_fg:
                best, best_fg = (r, c), fg
    r, c = best
    si = source_image[r * p : (r + 1) * p, c * p : (c + 1) * p]
    sm = (source_mask[r * p : (r + 1) * p, c * p : (c + 1) * p] != 0).astype(np.uint8)

    cells, tiles = [], []
    for rr in range(th // p):
        for cc in range(tw // p):
            cells.append((rr, cc))
            tiles.append(target_image[rr * p : (rr + 1) * p, cc * p : (cc + 1) * p])
    preds = predict_pairs(
        model, [si] * len(tiles), [sm] * len(tiles), tiles, threshold, batch_size
    )
    return stitch_sheet(
        [(rr, cc, pred) for (rr, cc), pred in zip(cells, preds)], th, tw
    )


def overlay_mask(
    image: np.ndarray, mask: np.ndarray, color=(224, 32, 32), alpha: float = 0.45
) -> np.ndarray:
    """Alpha-blend a binary mask over an RGB image for visual inspection."""
    if image.shape[:2] != mask.shape:
        raise ValueError("image and mask dims must match")
    out = image.astype(np.float64).copy()
    sel = mask != 0
    out[sel] = (1 - alpha) * out[sel] + alpha * np.array(color, dtype=np.float64)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def compare_models(smol_report: EvalReport, unet_report: EvalReport) -> dict:
    """Side-by-side per-class comparison of the two reports."""
    if sorted(smol_report.per_class) != sorted(unet_report.per_class):
        raise ValueError("reports cover different class sets")
    rows = []
    for cid in sorted(smol_report.per_class):
        s = smol_report.per_class[cid]
        u = unet_report.per_class[cid]
        winner = ""
        if s.metrics.iou > u.metrics.iou:
            winner = "smol"
        elif u.metrics.iou > s.metrics.iou:
            winner = "unet"
        rows.append(
            {
                "class_id": cid,
                "name": s.name,
                "smol": {
                    "iou": s.metrics.iou,
                    "precision": s.metrics.precision,
                    "recall": s.metrics.recall,
                },
                "unet": {
                    "iou": u.metrics.iou,
                    "precision": u.metrics.precision,
                    "recall": u.metrics.recall,
                },
                "winner": winner,
            }
        )
    mean = {
        "smol_iou": smol_report.mean_iou,
        "unet_iou": unet_report.mean_iou,
        "winner": (
            "smol"
            if smol_report.mean_iou > unet_report.mean_iou
            else "unet" if unet_report.mean_iou > smol_report.mean_iou else ""
        ),
    }
    return {"rows": rows, "mean": mean}


def format_comparison(cmp: dict) -> str:
    """Fixed-width text rendering of a compare_models result."""
    header = (
        f"{'class':<18}{'smol iou':>10}{'unet iou':>10}"
        f"{'smol pr':>9}{'unet pr':>9}{'smol rc':>9}{'unet rc':>9}  winner"
    )
    lines = [header, "-" * len(header)]
    for r in cmp["rows"]:
        name = f"{r['name']} ({r['class_id']})"
        lines.append(
            f"{name:<18}"
            f"{r['smol']['iou']:>10.3f}{r['unet']['iou']:>10.3f}"
            f"{r['smol']['precision']:>9.3f}{r['unet']['precision']:>9.3f}"
            f"{r['smol']['recall']:>9.3f}{r['unet']['recall']:>9.3f}"
            f"  {r['winner']}"
        )
    m = cmp["mean"]
    lines.append("-" * len(header))
    lines.append(
        f"{'mean':<18}{m['smol_iou']:>10.3f}{m['unet_iou']:>10.3f}"
        + " " * 36
        + f"  {m['winner']}"
    )
    return "\n".join(lines)
