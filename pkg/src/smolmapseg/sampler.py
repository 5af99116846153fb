"""Source-target pair sampling for prompted training.

A draw picks a target patch uniformly, then with probability p (when the
target has usable foreground classes) builds a positive pair: the prompted
class is present in the target, and the source is another patch of the same
sheet containing it. Otherwise it builds a negative pair: the prompted class
is absent from the target but present elsewhere in the same sheet, and the
supervision mask is all zeros. Same-sheet sourcing keeps the source and the
target under one symbology.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datapipe import ClassIndex, Patch
from .synthmap import ClassId

POSITIVE = "positive"
NEGATIVE = "negative"


class UnsatisfiableDataset(Exception):
    """No valid pair can be drawn (e.g. no sheet offers a negative class)."""


@dataclass
class SamplerConfig:
    positive_prob: float = 0.7
    seed: int = 0
    class_universe: list[ClassId] = field(default_factory=list)
    max_retries: int = 100

    def __post_init__(self):
        if not 0.0 <= self.positive_prob <= 1.0:
            raise ValueError("positive_prob must lie in [0, 1]")
        if not self.class_universe:
            raise ValueError("class universe must be nonempty")


@dataclass
class PairSample:
    target: Patch
    source: Patch
    class_id: int
    polarity: str
    source_mask: np.ndarray  # P x P uint8 in {0, 1}
    target_mask: np.ndarray  # P x P uint8 in {0, 1}; all-zero for negatives


def _binary_mask(label: np.ndarray, class_id: int) -> np.ndarray:
    return (label == class_id).astype(np.uint8)


class PairSampler:
    """Deterministic pair stream over one split of a dataset."""

    def __init__(self, index: ClassIndex, patches: list[Patch], cfg: SamplerConfig):
        self.index = index
        self.patches = patches
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.by_id = {p.patch_id: p for p in patches}
        self.universe = {c.id for c in cfg.class_universe}
        if not patches:
            raise UnsatisfiableDataset("no patches to sample from")

    def draw(self, rng: np.random.Generator | None = None) -> PairSample:
        rng = rng or self.rng
        for _ in range(self.cfg.max_retries):
            target = self.patches[int(rng.integers(len(self.patches)))]
            c_t = self.index.classes_in(target.patch_id)
            if c_t and rng.random() < self.cfg.positive_prob:
                usable = sorted(c_t & self.universe)
                if usable:
                    pair = self._positive(target, usable, rng)
                    if pair is not None:
                        return pair
                # unusable or sourceless target classes: fall through
            pair = self._negative(target, c_t, rng)
            if pair is not None:
                return pair
        raise UnsatisfiableDataset(
            f"no valid pair after {self.cfg.max_retries} target draws"
        )

    def _positive(self, target: Patch, usable: list[int], rng) -> PairSample | None:
        class_id = int(usable[int(rng.integers(len(usable)))])
        candidates = sorted(
            self.index.patches_with(target.sheet_id, class_id) & self.by_id.keys()
        )
        others = [pid for pid in candidates if pid != target.patch_id]
        pool = others or candidates  # self-prompt only when the class is unique
        if not pool:
            return None
        source = self.by_id[pool[int(rng.integers(len(pool)))]]
        return PairSample(
            target=target,
            source=source,
            class_id=class_id,
            polarity=POSITIVE,
            source_mask=_binary_mask(source.label, class_id),
            target_mask=_binary_mask(target.label, class_id),
        )

    def _negative(self, target: Patch, c_t: set[int], rng) -> PairSample | None:
        in_sheet = self.index.sheet_classes(target.sheet_id)
        candidates = sorted((self.universe - c_t) & in_sheet)
        if not candidates:
            return None
        class_id = int(candidates[int(rng.integers(len(candidates)))])
        pool = sorted(
            self.index.patches_with(target.sheet_id, class_id) & self.by_id.keys()
        )
        if not pool:
            return None
        source = self.by_id[pool[int(rng.integers(len(pool)))]]
        return PairSample(
            target=target,
            source=source,
            class_id=class_id,
            polarity=NEGATIVE,
            source_mask=_binary_mask(source.label, class_id),
            target_mask=np.zeros_like(target.label, dtype=np.uint8),
        )


def sample_pair(
    index: ClassIndex,
    patches: list[Patch],
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> PairSample:
    return PairSampler(index, patches, cfg).draw(rng)


def make_epoch(
    index: ClassIndex, patches: list[Patch], cfg: SamplerConfig, n_pairs: int
) -> list[PairSample]:
    """n_pairs independent draws from one seeded stream."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    sampler = PairSampler(index, patches, cfg)
    return [sampler.draw() for _ in range(n_pairs)]


def dump_pairs(pairs: list[PairSample]) -> str:
    """pairs.jsonl payload for reproducibility audits."""
    import json

    return "\n".join(
        json.dumps(
            {
                "target_patch_id": p.target.patch_id,
                "source_patch_id": p.source.patch_id,
                "class_id": p.class_id,
                "polarity": p.polarity,
            }
        )
        for p in pairs
    )
