import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smolmapseg import presets
from smolmapseg.synthmap import (
    AmbiguityConfig,
    ClassId,
    MapSheet,
    PatternKind,
    StyleSpec,
    ambiguity_ceiling,
    collision_classes,
    find_collisions,
    make_ambiguity_suite,
    make_pattern_library,
    pattern_color_at,
    render_pattern,
    render_sheet,
)

BG = (240, 235, 220)


def test_library_basic_contract():
    lib = make_pattern_library(seed=7, n_patterns=6)
    assert [p.pattern_id for p in lib] == list(range(6))
    assert sum(p.kind is PatternKind.BLANK for p in lib) == 1
    assert lib == make_pattern_library(seed=7, n_patterns=6)
    other = make_pattern_library(seed=8, n_patterns=6)
    assert any(a != b for a, b in zip(lib, other))


def test_library_param_ranges():
    for p in make_pattern_library(seed=3, n_patterns=12):
        assert p.spacing >= 2
        if p.kind not in (PatternKind.SOLID_COLOR, PatternKind.BLANK):
            assert p.mark_size >= 1
        assert all(0 <= c <= 255 for c in p.color)


def test_library_rejects_empty():
    with pytest.raises(ValueError):
        make_pattern_library(seed=0, n_patterns=0)


def test_render_pattern_matches_scalar_oracle():
    lib = make_pattern_library(seed=5, n_patterns=6)
    for spec in lib:
        window = render_pattern(spec, BG, y0=37, x0=11, height=24, width=24)
        for y in range(24):
            for x in range(24):
                expected = pattern_color_at(spec, BG, 11 + x, 37 + y)
                assert tuple(window[y, x]) == expected, (spec.kind, x, y)


def test_blank_pattern_is_background():
    spec = next(
        p for p in make_pattern_library(seed=2, n_patterns=6) if p.kind is PatternKind.BLANK
    )
    window = render_pattern(spec, BG, 0, 0, 16, 16)
    assert (window == np.array(BG, dtype=np.uint8)).all()


def _simple_styles():
    return [
        StyleSpec(0, {1: 1, 2: 2}, BG),
        StyleSpec(1, {1: 2, 2: 1}, BG),
    ]


def _solid_style():
    return StyleSpec(0, {1: 0}, BG)


def test_render_sheet_solid_degenerate():
    # One class, one cell, background_weight 0 style deck: force via n_cells=1
    lib = make_pattern_library(seed=1, n_patterns=6)
    sheet = render_sheet(
        _solid_style(), 99, 64, 64, [ClassId(1, "a")], lib, n_cells=1, background_weight=0
    )
    assert (sheet.labels == 1).all()
    assert (sheet.image == np.array(lib[0].color, dtype=np.uint8)).all()


def test_render_sheet_deterministic():
    lib = make_pattern_library(seed=1, n_patterns=6)
    kwargs = dict(
        style=_simple_styles()[0],
        layout_seed=42,
        height=96,
        width=80,
        classes=[ClassId(1, "a"), ClassId(2, "b")],
        patterns=lib,
    )
    a = render_sheet(**kwargs)
    b = render_sheet(**kwargs)
    assert (a.image == b.image).all()
    assert (a.labels == b.labels).all()


def test_render_sheet_rejects_unmapped_class():
    lib = make_pattern_library(seed=1, n_patterns=6)
    with pytest.raises(ValueError, match="no pattern for class"):
        render_sheet(_solid_style(), 1, 64, 64, [ClassId(9, "x")], lib)


def test_render_sheet_coverage_1024():
    """Frozen layout property: 4 classes at 1024x1024, seed 3, all within 1%..90%."""
    lib = make_pattern_library(seed=3, n_patterns=6)
    classes = [ClassId(i, f"c{i}") for i in range(1, 5)]
    style = StyleSpec(0, {1: 1, 2: 2, 3: 3, 4: 4}, BG)
    sheet = render_sheet(style, 3, 1024, 1024, classes, lib)
    total = sheet.labels.size
    for c in classes:
        frac = np.count_nonzero(sheet.labels == c.id) / total
        assert 0.01 <= frac <= 0.90, (c.id, frac)


def test_label_texture_consistency():
    """Labeled pixels re-render exactly from the style's pattern (AA off)."""
    lib = make_pattern_library(seed=4, n_patterns=6)
    style = _simple_styles()[0]
    classes = [ClassId(1, "a"), ClassId(2, "b")]
    sheet = render_sheet(style, 17, 128, 128, classes, lib, n_cells=6)
    rng = np.random.default_rng(0)
    ys = rng.integers(0, 128, size=1000)
    xs = rng.integers(0, 128, size=1000)
    deltas = []
    for y, x in zip(ys, xs):
        cid = int(sheet.labels[y, x])
        if cid == 0:
            continue
        spec = lib[style.class_to_pattern[cid]]
        expected = pattern_color_at(spec, BG, int(x), int(y))
        deltas.append(np.abs(np.array(expected) - sheet.image[y, x].astype(int)))
    assert deltas, "expected some labeled pixels in the sample"
    assert np.max(deltas) <= 2  # exact under disabled anti-aliasing


def test_nonzero_labels_in_style_domain():
    amb = presets.smoke_dataset_config()
    for sheet in make_ambiguity_suite(amb):
        style = next(s for s in amb.styles if s.style_id == sheet.style_id)
        present = set(np.unique(sheet.labels)) - {0}
        assert present <= set(style.class_to_pattern)


def test_ambiguity_suite_counts_and_collision_semantics():
    amb = presets.smoke_dataset_config()
    sheets = make_ambiguity_suite(amb)
    assert len(sheets) == 2 * amb.sheets_per_style
    per_style = {s.style_id: 0 for s in amb.styles}
    for sheet in sheets:
        per_style[sheet.style_id] += 1
    assert set(per_style.values()) == {amb.sheets_per_style}

    # Collision semantics: the swapped patterns label different classes per style.
    collisions = find_collisions(amb.styles)
    assert collisions, "preset must contain a deliberate collision"
    lib = make_pattern_library(amb.seed, amb.resolved_n_patterns())
    for sheet in sheets[:2] + sheets[-2:]:
        style = next(s for s in amb.styles if s.style_id == sheet.style_id)
        for cid, pid in style.class_to_pattern.items():
            if pid not in collisions:
                continue
            region = sheet.labels == cid
            if not region.any():
                continue
            spec = lib[pid]
            ys, xs = np.nonzero(region)
            expected = np.array(
                [pattern_color_at(spec, style.background_color, int(x), int(y))
                 for y, x in zip(ys[:50], xs[:50])]
            )
            assert (sheet.image[ys[:50], xs[:50]] == expected).all()


def test_suite_rejects_no_collision():
    amb = presets.smoke_dataset_config()
    same = StyleSpec(1, dict(amb.styles[0].class_to_pattern), amb.styles[0].background_color)
    broken = AmbiguityConfig(
        styles=[amb.styles[0], same],
        classes=amb.classes,
        sheets_per_style=1,
        sheet_height=128,
        sheet_width=128,
        seed=0,
    )
    with pytest.raises(ValueError, match="collision"):
        make_ambiguity_suite(broken)


def test_style_rejects_shared_pattern_within_style():
    with pytest.raises(ValueError, match="share a pattern"):
        StyleSpec(0, {1: 3, 2: 3}, BG)


def test_config_round_trip_and_missing_key():
    amb = presets.smoke_dataset_config()
    raw = amb.to_dict()
    back = AmbiguityConfig.from_dict(raw)
    assert back.to_dict() == raw
    del raw["styles"]
    with pytest.raises(KeyError, match="styles"):
        AmbiguityConfig.from_dict(raw)


def test_collision_classes():
    styles = _simple_styles()
    assert collision_classes(styles) == {1, 2}
    assert set(find_collisions(styles)) == {1, 2}


def test_ceiling_hand_computed():
    """Frozen oracle: two sheets, pattern 1 renders class 1 (60 px) and class 2
    (40 px); pattern 2 renders class 1 (40 px) and class 2 (60 px).

    For class 1 the best subset is {pattern 1}: 60 / (100 + 40) = 3/7.
    Using both patterns: 100 / 200 = 1/2 > 3/7, so the ceiling is 0.5.
    """
    labels_a = np.zeros((10, 20), dtype=np.uint8)
    labels_a[:6, :10] = 1  # pattern 1 renders class 1 in style 0
    labels_a[:6, 10:] = 2  # pattern 2 renders class 2 in style 0
    labels_b = np.zeros((10, 20), dtype=np.uint8)
    labels_b[:4, :10] = 1  # pattern 2 renders class 1 in style 1
    labels_b[:4, 10:] = 2  # pattern 1 renders class 2 in style 1
    styles = [StyleSpec(0, {1: 1, 2: 2}, BG), StyleSpec(1, {1: 2, 2: 1}, BG)]
    img = np.zeros((10, 20, 3), dtype=np.uint8)
    sheets = [
        MapSheet(0, 0, img, labels_a, 0),
        MapSheet(1, 1, img, labels_b, 0),
    ]
    ceiling = ambiguity_ceiling(sheets, styles)
    assert ceiling["collision_classes"] == [1, 2]
    assert ceiling["per_class"][1]["iou_ceiling"] == pytest.approx(0.5)
    assert ceiling["per_class"][2]["iou_ceiling"] == pytest.approx(0.5)
    assert ceiling["per_class"][1]["pixels"] == 100
    # All labeled pixels sit on collision patterns: q = 1, misassignment >= q/2 bound
    assert ceiling["q"] == pytest.approx(1.0)
    assert ceiling["misassign_lower_bound"] == pytest.approx(
        (40 + 40) / 200
    )


def test_ceiling_on_generated_suite_is_near_half(smoke_sheets):
    sheets, amb = smoke_sheets
    ceiling = ambiguity_ceiling(sheets, amb.styles)
    for cid in ceiling["collision_classes"]:
        assert 0.3 <= ceiling["per_class"][cid]["iou_ceiling"] <= 0.7


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    h=st.integers(48, 96),
    w=st.integers(48, 96),
)
def test_sheet_shape_properties(seed, h, w):
    lib = make_pattern_library(seed=1, n_patterns=6)
    classes = [ClassId(1, "a"), ClassId(2, "b")]
    sheet = render_sheet(_simple_styles()[0], seed, h, w, classes, lib, n_cells=4)
    assert sheet.image.shape == (h, w, 3)
    assert sheet.labels.shape == (h, w)
    assert set(np.unique(sheet.labels)) <= {0, 1, 2}
