"""Procedural map-sheet generator.

Produces sheets whose symbology is deliberately ambiguous across styles:
the same visual pattern may stand for different classes in different
styles, while within one style every class has its own pattern. A blank
pattern (rendered exactly as background) is available to reproduce the
featureless-class failure mode.

All generation is deterministic: outputs are pure functions of their
arguments, textures are phase-locked to absolute sheet coordinates, and
anti-aliasing is never used.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np


class PatternKind(str, enum.Enum):
    SOLID_COLOR = "solid_color"
    DOTS = "dots"
    HATCHING = "hatching"
    CROSS_HATCH = "cross_hatch"
    STIPPLE_WITH_SYMBOLS = "stipple_with_symbols"
    BLANK = "blank"


# Enum order doubles as the kind cycle used by make_pattern_library.
_KIND_CYCLE = list(PatternKind)
_NON_BLANK = [k for k in _KIND_CYCLE if k is not PatternKind.BLANK]


@dataclass(frozen=True)
class PatternSpec:
    pattern_id: int
    kind: PatternKind
    color: tuple[int, int, int]
    spacing: int
    mark_size: int
    orientation: int

    def __post_init__(self):
        if self.spacing < 2:
            raise ValueError(f"spacing must be >= 2, got {self.spacing}")
        needs_marks = self.kind not in (PatternKind.SOLID_COLOR, PatternKind.BLANK)
        if needs_marks and self.mark_size < 1:
            raise ValueError(f"mark_size must be >= 1 for kind {self.kind.value}")
        if not all(0 <= c <= 255 for c in self.color):
            raise ValueError(f"color channels must be in 0..255, got {self.color}")


@dataclass(frozen=True)
class ClassId:
    id: int
    name: str

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("class ids start at 1; 0 is reserved for background")
        if self.id > 255:
            raise ValueError("class ids must fit an 8-bit label raster")


@dataclass(frozen=True)
class StyleSpec:
    style_id: int
    class_to_pattern: dict[int, int]
    background_color: tuple[int, int, int]

    def __post_init__(self):
        pattern_ids = list(self.class_to_pattern.values())
        if len(set(pattern_ids)) != len(pattern_ids):
            raise ValueError(
                f"style {self.style_id}: two classes share a pattern; "
                "patterns must be distinguishable within one style"
            )


@dataclass
class MapSheet:
    sheet_id: int
    style_id: int
    image: np.ndarray  # H x W x 3 uint8
    labels: np.ndarray  # H x W uint8, 0 = background
    layout_seed: int

    def __post_init__(self):
        if self.image.shape[:2] != self.labels.shape:
            raise ValueError("image and labels must share H x W")


def make_pattern_library(seed: int, n_patterns: int) -> list[PatternSpec]:
    """Deterministic pattern list with ids 0..n_patterns-1.

    The first six ids walk the kind enum once (so exactly one blank exists
    when n_patterns >= 6); further ids cycle the non-blank kinds.
    """
    if n_patterns < 1:
        raise ValueError(f"n_patterns must be >= 1, got {n_patterns}")
    specs = []
    for pid in range(n_patterns):
        kind = _KIND_CYCLE[pid] if pid < 6 else _NON_BLANK[(pid - 6) % len(_NON_BLANK)]
        rng = np.random.default_rng([seed, pid])
        color = tuple(int(c) for c in rng.integers(0, 190, size=3))
        spacing = int(rng.integers(6, 11))
        orientation = int(rng.choice([0, 45, 90, 135]))
        if kind is PatternKind.DOTS or kind is PatternKind.STIPPLE_WITH_SYMBOLS:
            mark = int(rng.integers(1, 3))
        elif kind in (PatternKind.HATCHING, PatternKind.CROSS_HATCH):
            mark = int(rng.integers(1, 3))
        else:
            mark = 1
        specs.append(PatternSpec(pid, kind, color, spacing, mark, orientation))
    return specs


def _hatch_phase(x, y, orientation: int):
    if orientation == 0:
        return y
    if orientation == 90:
        return x
    if orientation == 45:
        return x + y
    if orientation == 135:
        return x - y
    raise ValueError(f"orientation must be one of 0/45/90/135, got {orientation}")


def _mark_predicate(spec: PatternSpec, x, y):
    """Whether pixels at absolute coordinates (x, y) carry the pattern's mark.

    Works on scalars and on numpy arrays; integer arithmetic only, so the
    vectorized renderer and the per-pixel oracle agree exactly.
    """
    s = spec.spacing
    if spec.kind is PatternKind.SOLID_COLOR:
        return (x + y) * 0 == 0
    if spec.kind is PatternKind.BLANK:
        return (x + y) * 0 == 1
    if spec.kind is PatternKind.DOTS:
        c = s // 2
        u = x % s - c
        v = y % s - c
        return u * u + v * v <= spec.mark_size * spec.mark_size
    if spec.kind is PatternKind.HATCHING:
        return _hatch_phase(x, y, spec.orientation) % s < spec.mark_size
    if spec.kind is PatternKind.CROSS_HATCH:
        return ((x + y) % s < spec.mark_size) | ((x - y) % s < spec.mark_size)
    if spec.kind is PatternKind.STIPPLE_WITH_SYMBOLS:
        c = s // 2
        u = x % s - c
        v = y % s - c
        dots = u * u + v * v <= spec.mark_size * spec.mark_size
        big = 2 * s
        cb = big // 2
        ub = x % big - cb
        vb = y % big - cb
        arm = spec.mark_size + 2
        plus = ((abs(ub) <= arm) & (vb == 0)) | ((abs(vb) <= arm) & (ub == 0))
        return dots | plus
    raise ValueError(f"unknown pattern kind {spec.kind}")


def pattern_color_at(
    spec: PatternSpec, background: tuple[int, int, int], x: int, y: int
) -> tuple[int, int, int]:
    """Color the pattern paints at one absolute pixel. Reference for tests."""
    return spec.color if bool(_mark_predicate(spec, x, y)) else tuple(background)


def render_pattern(
    spec: PatternSpec,
    background: tuple[int, int, int],
    y0: int,
    x0: int,
    height: int,
    width: int,
) -> np.ndarray:
    """Render a pattern window anchored at absolute sheet coords (y0, x0)."""
    ys, xs = np.meshgrid(
        np.arange(y0, y0 + height, dtype=np.int64),
        np.arange(x0, x0 + width, dtype=np.int64),
        indexing="ij",
    )
    marked = _mark_predicate(spec, xs, ys)
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:] = np.asarray(background, dtype=np.uint8)
    out[marked] = np.asarray(spec.color, dtype=np.uint8)
    return out


def _voronoi_labels(
    rng: np.random.Generator, height: int, width: int, n_cells: int
) -> np.ndarray:
    """Nearest-seed cell decomposition; ties break toward the lower seed index."""
    flat = rng.choice(height * width, size=n_cells, replace=False)
    sy = flat // width
    sx = flat % width
    cells = np.empty((height, width), dtype=np.int32)
    xs = np.arange(width, dtype=np.int64)
    dx2 = (xs[:, None] - sx[None, :]) ** 2  # W x n
    chunk = max(1, (1 << 22) // max(1, width * n_cells))
    for y0 in range(0, height, chunk):
        y1 = min(height, y0 + chunk)
        ys = np.arange(y0, y1, dtype=np.int64)
        dy2 = (ys[:, None] - sy[None, :]) ** 2  # rows x n
        d2 = dy2[:, None, :] + dx2[None, :, :]
        cells[y0:y1] = np.argmin(d2, axis=2)
    return cells


def render_sheet(
    style: StyleSpec,
    layout_seed: int,
    height: int,
    width: int,
    classes: list[ClassId],
    patterns: list[PatternSpec],
    sheet_id: int = 0,
    n_cells: int | None = None,
    background_weight: int = 1,
) -> MapSheet:
    """Render one sheet: seeded cell layout, one class (or background) per cell.

    Cell classes are dealt round-robin from a shuffled deck, so every class
    is present whenever the cell count allows it.
    """
    if not classes:
        raise ValueError("classes must be nonempty")
    missing = [c.id for c in classes if c.id not in style.class_to_pattern]
    if missing:
        raise ValueError(
            f"invalid style {style.style_id}: no pattern for class ids {missing}"
        )
    pattern_by_id = {p.pattern_id: p for p in patterns}
    for c in classes:
        pid = style.class_to_pattern[c.id]
        if pid not in pattern_by_id:
            raise ValueError(f"style {style.style_id} references unknown pattern {pid}")

    rng = np.random.default_rng([int(layout_seed) & 0xFFFFFFFFFFFF, style.style_id])
    deck = [0] * background_weight + [c.id for c in classes]
    if n_cells is None:
        n_cells = max(len(deck), round(height * width / 96**2))
    cells = _voronoi_labels(rng, height, width, n_cells)
    slots = np.array([deck[i % len(deck)] for i in range(n_cells)], dtype=np.uint8)
    rng.shuffle(slots)
    labels = slots[cells]

    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = np.asarray(style.background_color, dtype=np.uint8)
    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.int64), np.arange(width, dtype=np.int64), indexing="ij"
    )
    for c in classes:
        region = labels == c.id
        if not region.any():
            continue
        spec = pattern_by_id[style.class_to_pattern[c.id]]
        marked = region & _mark_predicate(spec, xs, ys)
        image[marked] = np.asarray(spec.color, dtype=np.uint8)
    return MapSheet(sheet_id, style.style_id, image, labels, int(layout_seed))


@dataclass
class AmbiguityConfig:
    styles: list[StyleSpec]
    classes: list[ClassId]
    sheets_per_style: int
    sheet_height: int
    sheet_width: int
    seed: int
    n_patterns: int | None = None
    cells_per_sheet: int | None = None
    background_weight: int = 1
    patch_size: int = 64
    min_pixels: int | None = None

    def resolved_n_patterns(self) -> int:
        used = [p for s in self.styles for p in s.class_to_pattern.values()]
        floor = max(used) + 1 if used else 6
        return self.n_patterns if self.n_patterns is not None else max(6, floor)

    @staticmethod
    def from_dict(raw: dict) -> "AmbiguityConfig":
        for key in ("styles", "classes", "sheets_per_style", "sheet_height", "sheet_width", "seed"):
            if key not in raw:
                raise KeyError(f"config missing required key: {key!r}")
        styles = [
            StyleSpec(
                style_id=int(s["style_id"]),
                class_to_pattern={int(k): int(v) for k, v in s["class_to_pattern"].items()},
                background_color=tuple(int(v) for v in s["background_color"]),
            )
            for s in raw["styles"]
        ]
        classes = [ClassId(int(c["id"]), str(c["name"])) for c in raw["classes"]]
        return AmbiguityConfig(
            styles=styles,
            classes=classes,
            sheets_per_style=int(raw["sheets_per_style"]),
            sheet_height=int(raw["sheet_height"]),
            sheet_width=int(raw["sheet_width"]),
            seed=int(raw["seed"]),
            n_patterns=raw.get("n_patterns"),
            cells_per_sheet=raw.get("cells_per_sheet"),
            background_weight=int(raw.get("background_weight", 1)),
            patch_size=int(raw.get("patch_size", 64)),
            min_pixels=raw.get("min_pixels"),
        )

    def to_dict(self) -> dict:
        return {
            "styles": [
                {
                    "style_id": s.style_id,
                    "class_to_pattern": {str(k): v for k, v in s.class_to_pattern.items()},
                    "background_color": list(s.background_color),
                }
                for s in self.styles
            ],
            "classes": [{"id": c.id, "name": c.name} for c in self.classes],
            "sheets_per_style": self.sheets_per_style,
            "sheet_height": self.sheet_height,
            "sheet_width": self.sheet_width,
            "seed": self.seed,
            "n_patterns": self.n_patterns,
            "cells_per_sheet": self.cells_per_sheet,
            "background_weight": self.background_weight,
            "patch_size": self.patch_size,
            "min_pixels": self.min_pixels,
        }


def find_collisions(styles: list[StyleSpec]) -> dict[int, set[int]]:
    """pattern_id -> the class ids it denotes, for patterns bound to more than one."""
    bound: dict[int, set[int]] = {}
    for s in styles:
        for cid, pid in s.class_to_pattern.items():
            bound.setdefault(pid, set()).add(cid)
    return {pid: cids for pid, cids in bound.items() if len(cids) > 1}


def collision_classes(styles: list[StyleSpec]) -> set[int]:
    out: set[int] = set()
    for cids in find_collisions(styles).values():
        out |= cids
    return out


def make_ambiguity_suite(
    config: AmbiguityConfig, patterns: list[PatternSpec] | None = None
) -> list[MapSheet]:
    """Render sheets_per_style sheets for every style in the config.

    Rejects configs without a deliberate pattern collision: the suite exists
    to create cross-style ambiguity.
    """
    if len(config.styles) < 2 or len(config.classes) < 2:
        raise ValueError("ambiguity suite needs >= 2 styles and >= 2 classes")
    if not find_collisions(config.styles):
        raise ValueError(
            "no pattern collision: some pattern must denote different classes "
            "in different styles"
        )
    if patterns is None:
        patterns = make_pattern_library(config.seed, config.resolved_n_patterns())
    seeds = np.random.SeedSequence(config.seed).spawn(
        len(config.styles) * config.sheets_per_style
    )
    sheets = []
    sheet_id = itertools.count()
    for style in config.styles:
        for _ in range(config.sheets_per_style):
            sid = next(sheet_id)
            layout_seed = int(seeds[sid].generate_state(1)[0])
            sheets.append(
                render_sheet(
                    style,
                    layout_seed,
                    config.sheet_height,
                    config.sheet_width,
                    config.classes,
                    patterns,
                    sheet_id=sid,
                    n_cells=config.cells_per_sheet,
                    background_weight=config.background_weight,
                )
            )
    return sheets


def ambiguity_ceiling(sheets: list[MapSheet], styles: list[StyleSpec]) -> dict:
    """Per-class IoU ceilings for any style-blind per-pixel classifier.

    Counts, over all sheets, how many pixels each pattern renders for each
    class. A style-blind classifier can only map patterns to classes, so for
    class c its IoU is bounded by the best subset S of c's patterns:
    sum(m[P][c] for P in S) / (sum(M[P] for P in S) + sum of c's pixels missed).
    """
    style_by_id = {s.style_id: s for s in styles}
    m: dict[int, dict[int, int]] = {}
    labeled_total = 0
    for sheet in sheets:
        style = style_by_id[sheet.style_id]
        ids, counts = np.unique(sheet.labels, return_counts=True)
        for cid, cnt in zip(ids.tolist(), counts.tolist()):
            if cid == 0:
                continue
            pid = style.class_to_pattern[cid]
            m.setdefault(pid, {})
            m[pid][cid] = m[pid].get(cid, 0) + int(cnt)
            labeled_total += int(cnt)

    collisions = find_collisions(styles)
    collision_pids = [pid for pid in collisions if pid in m]
    per_class: dict[int, dict] = {}
    for cid in sorted(collision_classes(styles)):
        pats = [pid for pid, per in m.items() if per.get(cid, 0) > 0]
        total_c = sum(m[pid].get(cid, 0) for pid in pats)
        best = 0.0
        for r in range(1, len(pats) + 1):
            for combo in itertools.combinations(pats, r):
                tp = sum(m[pid].get(cid, 0) for pid in combo)
                predicted = sum(sum(m[pid].values()) for pid in combo)
                missed = total_c - tp
                denom = predicted + missed
                if denom > 0:
                    best = max(best, tp / denom)
        per_class[cid] = {"iou_ceiling": best, "pixels": total_c}

    collision_pixels = sum(sum(m[pid].values()) for pid in collision_pids)
    misassigned = sum(
        sum(m[pid].values()) - max(m[pid].values()) for pid in collision_pids
    )
    return {
        "collision_patterns": sorted(collisions),
        "collision_classes": sorted(collision_classes(styles)),
        "per_class": per_class,
        "q": collision_pixels / labeled_total if labeled_total else 0.0,
        "misassign_lower_bound": misassigned / labeled_total if labeled_total else 0.0,
    }
