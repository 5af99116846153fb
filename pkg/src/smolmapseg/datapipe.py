"""Patch pipeline: cropping, checkerboard split, few-shot crops, class index.

Also owns the on-disk dataset layout:

    root/manifest.json
    root/sheets/<sheet_id>/image.png     8-bit RGB
    root/sheets/<sheet_id>/labels.png    8-bit single channel, value = class id
    root/sheets/<sheet_id>/meta.json     {style_id, layout_seed}
    root/patches/<split>/<patch_id>.png  plus <patch_id>_label.png
    root/patches.jsonl                   one record per patch
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .synthmap import ClassId, MapSheet, StyleSpec

FORMAT_VERSION = 1

TRAIN = "train"
TEST = "test"
FEWSHOT = "fewshot"
SPLITS = (TRAIN, TEST, FEWSHOT)


@dataclass
class Patch:
    patch_id: int
    sheet_id: int
    grid_row: int
    grid_col: int
    image: np.ndarray  # P x P x 3 uint8
    label: np.ndarray  # P x P uint8
    split: str = TRAIN

    def __post_init__(self):
        if self.image.shape[:2] != self.label.shape:
            raise ValueError("patch image and label must share P x P")

    @property
    def size(self) -> int:
        return self.label.shape[0]


def default_min_pixels(patch_size: int) -> int:
    """Presence threshold scaled from 64 pixels at a 384-pixel patch."""
    return max(1, round(64 * (patch_size / 384) ** 2))


def crop_patches(sheet: MapSheet, patch_size: int, start_id: int = 0) -> list[Patch]:
    """Non-overlapping row-major tiling; residual right/bottom margins drop."""
    h, w = sheet.labels.shape
    if patch_size > h or patch_size > w:
        raise ValueError(f"patch_size {patch_size} exceeds sheet dims {h}x{w}")
    patches = []
    pid = start_id
    for r in range(h // patch_size):
        for c in range(w // patch_size):
            y, x = r * patch_size, c * patch_size
            patches.append(
                Patch(
                    patch_id=pid,
                    sheet_id=sheet.sheet_id,
                    grid_row=r,
                    grid_col=c,
                    image=sheet.image[y : y + patch_size, x : x + patch_size].copy(),
                    label=sheet.labels[y : y + patch_size, x : x + patch_size].copy(),
                )
            )
            pid += 1
    return patches


def grid_split(patches: list[Patch]) -> tuple[list[Patch], list[Patch]]:
    """Checkerboard split on grid parity: even (row+col) trains, odd tests."""
    train, test = [], []
    for p in patches:
        if (p.grid_row + p.grid_col) % 2 == 0:
            p.split = TRAIN
            train.append(p)
        else:
            p.split = TEST
            test.append(p)
    return train, test


def crop_fewshot(
    sheet: MapSheet,
    region: tuple[int, int, int, int],
    patch_size: int,
    margin: int,
    start_id: int = 0,
) -> list[Patch]:
    """Overlapping tiling of a region with stride patch_size - margin.

    When the last stride overshoots, a flush tile aligned to the far edge is
    emitted so the region is fully covered.
    """
    top, left, rh, rw = region
    h, w = sheet.labels.shape
    if not (0 <= top and 0 <= left and top + rh <= h and left + rw <= w):
        raise ValueError(f"region {region} not within sheet dims {h}x{w}")
    if rh < patch_size or rw < patch_size:
        raise ValueError(f"region {rh}x{rw} smaller than patch_size {patch_size}")
    if margin >= patch_size:
        raise ValueError("margin must be smaller than patch_size")

    stride = patch_size - margin

    def positions(extent: int) -> list[int]:
        pos = list(range(0, extent - patch_size + 1, stride))
        if pos[-1] + patch_size < extent:
            pos.append(extent - patch_size)
        return pos

    patches = []
    pid = start_id
    for r, oy in enumerate(positions(rh)):
        for c, ox in enumerate(positions(rw)):
            y, x = top + oy, left + ox
            patches.append(
                Patch(
                    patch_id=pid,
                    sheet_id=sheet.sheet_id,
                    grid_row=r,
                    grid_col=c,
                    image=sheet.image[y : y + patch_size, x : x + patch_size].copy(),
                    label=sheet.labels[y : y + patch_size, x : x + patch_size].copy(),
                    split=FEWSHOT,
                )
            )
            pid += 1
    return patches


class ClassIndex:
    """Which patches contain which classes, per sheet.

    Membership is exact: patch in index[sheet][c] iff count(label == c) is at
    least min_pixels.
    """

    def __init__(self, min_pixels: int):
        if min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")
        self.min_pixels = min_pixels
        self.by_sheet: dict[int, dict[int, set[int]]] = {}
        self.patch_classes: dict[int, set[int]] = {}

    def add(self, patch: Patch) -> None:
        ids, counts = np.unique(patch.label, return_counts=True)
        present = {
            int(c) for c, n in zip(ids, counts) if c != 0 and n >= self.min_pixels
        }
        self.patch_classes[patch.patch_id] = present
        sheet = self.by_sheet.setdefault(patch.sheet_id, {})
        for c in present:
            sheet.setdefault(c, set()).add(patch.patch_id)

    def classes_in(self, patch_id: int) -> set[int]:
        return self.patch_classes.get(patch_id, set())

    def patches_with(self, sheet_id: int, class_id: int) -> set[int]:
        return self.by_sheet.get(sheet_id, {}).get(class_id, set())

    def sheet_classes(self, sheet_id: int) -> set[int]:
        return {c for c, pids in self.by_sheet.get(sheet_id, {}).items() if pids}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ClassIndex)
            and self.min_pixels == other.min_pixels
            and self.patch_classes == other.patch_classes
            and self.by_sheet == other.by_sheet
        )


def index_classes(patches: list[Patch], min_pixels: int) -> ClassIndex:
    index = ClassIndex(min_pixels)
    for p in patches:
        index.add(p)
    return index


@dataclass
class Dataset:
    root: Path | None
    patch_size: int
    min_pixels: int
    classes: list[ClassId]
    styles: list[StyleSpec]
    sheet_meta: dict[int, dict]  # sheet_id -> {style_id, layout_seed, height, width}
    patches: dict[str, list[Patch]] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Patch]:
        return self.patches.get(name, [])

    def index_for(self, split: str) -> ClassIndex:
        return index_classes(self.split(split), self.min_pixels)

    def class_by_id(self, class_id: int) -> ClassId:
        for c in self.classes:
            if c.id == class_id:
                return c
        raise KeyError(class_id)

    def style_by_id(self, style_id: int) -> StyleSpec:
        for s in self.styles:
            if s.style_id == style_id:
                return s
        raise KeyError(style_id)


def _save_png(path: Path, array: np.ndarray) -> None:
    mode = "RGB" if array.ndim == 3 else "L"
    Image.fromarray(array, mode=mode).save(path, format="PNG")


def _load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def save_dataset(
    root: str | Path,
    sheets: list[MapSheet],
    patches: dict[str, list[Patch]],
    classes: list[ClassId],
    styles: list[StyleSpec],
    patch_size: int,
    min_pixels: int,
    extra: dict | None = None,
) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for sheet in sheets:
        d = root / "sheets" / str(sheet.sheet_id)
        d.mkdir(parents=True, exist_ok=True)
        _save_png(d / "image.png", sheet.image)
        _save_png(d / "labels.png", sheet.labels)
        (d / "meta.json").write_text(
            json.dumps({"style_id": sheet.style_id, "layout_seed": sheet.layout_seed})
        )

    index_lines = []
    for split, plist in patches.items():
        d = root / "patches" / split
        d.mkdir(parents=True, exist_ok=True)
        for p in plist:
            _save_png(d / f"{p.patch_id}.png", p.image)
            _save_png(d / f"{p.patch_id}_label.png", p.label)
            ids, counts = np.unique(p.label, return_counts=True)
            present = sorted(
                int(c) for c, n in zip(ids, counts) if c != 0 and n >= min_pixels
            )
            index_lines.append(
                json.dumps(
                    {
                        "patch_id": p.patch_id,
                        "sheet_id": p.sheet_id,
                        "grid_row": p.grid_row,
                        "grid_col": p.grid_col,
                        "classes": present,
                        "split": split,
                    }
                )
            )
    (root / "patches.jsonl").write_text("\n".join(index_lines) + "\n")

    manifest = {
        "format_version": FORMAT_VERSION,
        "patch_size": patch_size,
        "min_pixels": min_pixels,
        "classes": [{"id": c.id, "name": c.name} for c in classes],
        "styles": [
            {
                "style_id": s.style_id,
                "class_to_pattern": {str(k): v for k, v in s.class_to_pattern.items()},
                "background_color": list(s.background_color),
            }
            for s in styles
        ],
        "sheets": [
            {
                "sheet_id": s.sheet_id,
                "style_id": s.style_id,
                "layout_seed": s.layout_seed,
                "height": int(s.labels.shape[0]),
                "width": int(s.labels.shape[1]),
            }
            for s in sheets
        ],
        "split_counts": {split: len(plist) for split, plist in patches.items()},
        "extra": extra or {},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest['format_version']}")
    classes = [ClassId(c["id"], c["name"]) for c in manifest["classes"]]
    styles = [
        StyleSpec(
            style_id=s["style_id"],
            class_to_pattern={int(k): v for k, v in s["class_to_pattern"].items()},
            background_color=tuple(s["background_color"]),
        )
        for s in manifest["styles"]
    ]
    sheet_meta = {s["sheet_id"]: s for s in manifest["sheets"]}

    records = [
        json.loads(line)
        for line in (root / "patches.jsonl").read_text().splitlines()
        if line.strip()
    ]
    patches: dict[str, list[Patch]] = {}
    for rec in records:
        split = rec["split"]
        d = root / "patches" / split
        patch = Patch(
            patch_id=rec["patch_id"],
            sheet_id=rec["sheet_id"],
            grid_row=rec["grid_row"],
            grid_col=rec["grid_col"],
            image=_load_png(d / f"{rec['patch_id']}.png"),
            label=_load_png(d / f"{rec['patch_id']}_label.png"),
            split=split,
        )
        patches.setdefault(split, []).append(patch)
    for plist in patches.values():
        plist.sort(key=lambda p: p.patch_id)

    counts = {split: len(plist) for split, plist in patches.items()}
    declared = manifest["split_counts"]
    names = set(counts) | set(declared)
    if any(counts.get(s, 0) != declared.get(s, 0) for s in names):
        raise ValueError(
            f"manifest split counts {declared} do not match disk {counts}"
        )
    return Dataset(
        root=root,
        patch_size=manifest["patch_size"],
        min_pixels=manifest["min_pixels"],
        classes=classes,
        styles=styles,
        sheet_meta=sheet_meta,
        patches=patches,
        extra=manifest.get("extra", {}),
    )


def load_sheet(root: str | Path, sheet_id: int) -> MapSheet:
    d = Path(root) / "sheets" / str(sheet_id)
    meta = json.loads((d / "meta.json").read_text())
    return MapSheet(
        sheet_id=sheet_id,
        style_id=meta["style_id"],
        image=_load_png(d / "image.png"),
        labels=_load_png(d / "labels.png"),
        layout_seed=meta["layout_seed"],
    )


def build_dataset(
    sheets: list[MapSheet],
    classes: list[ClassId],
    styles: list[StyleSpec],
    patch_size: int,
    min_pixels: int | None = None,
    extra: dict | None = None,
) -> Dataset:
    """Crop, checkerboard-split and index a sheet collection (in memory)."""
    if min_pixels is None:
        min_pixels = default_min_pixels(patch_size)
    all_patches: list[Patch] = []
    next_id = 0
    for sheet in sheets:
        got = crop_patches(sheet, patch_size, start_id=next_id)
        next_id += len(got)
        all_patches.extend(got)
    train, test = grid_split(all_patches)
    return Dataset(
        root=None,
        patch_size=patch_size,
        min_pixels=min_pixels,
        classes=classes,
        styles=styles,
        sheet_meta={
            s.sheet_id: {
                "sheet_id": s.sheet_id,
                "style_id": s.style_id,
                "layout_seed": s.layout_seed,
                "height": int(s.labels.shape[0]),
                "width": int(s.labels.shape[1]),
            }
            for s in sheets
        },
        patches={TRAIN: train, TEST: test},
        extra=extra or {},
    )
