"""Loss, cosine LR schedule, main training loop and few-shot fine-tuning."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .datapipe import TRAIN, ClassIndex, Dataset, Patch, index_classes
from .model.network import SmolMapSeg, images_to_tensor, masks_to_tensor
from .model.unet import BaselineUNet
from .sampler import (
    NEGATIVE,
    POSITIVE,
    PairSample,
    PairSampler,
    SamplerConfig,
    UnsatisfiableDataset,
)

LOSS_BCE = "bce"
LOSS_BCE_DICE = "bce_plus_dice"
LOSSES = (LOSS_BCE, LOSS_BCE_DICE)


@dataclass
class TrainConfig:
    base_lr: float = 5e-5
    weight_decay: float = 0.01
    epochs: int = 30
    batch_size: int = 8
    pairs_per_epoch: int = 512
    positive_prob: float = 0.7
    seed: int = 0
    loss: str = LOSS_BCE

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.pairs_per_epoch < 0:
            raise ValueError("pairs_per_epoch must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "TrainConfig":
        return TrainConfig(**raw)

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    wall_time: float
    n_pairs: int


@dataclass
class TrainLog:
    config_hash: str
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str | None = None

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "kind": "run",
                    "config_hash": self.config_hash,
                    "checkpoint_path": self.checkpoint_path,
                }
            )
        ]
        for e in self.epochs:
            lines.append(
                json.dumps(
                    {
                        "kind": "epoch",
                        "epoch": e.epoch,
                        "mean_loss": e.mean_loss,
                        "lr": e.lr,
                        "wall_time": e.wall_time,
                        "n_pairs": e.n_pairs,
                    }
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @staticmethod
    def load(path) -> "TrainLog":
        log = TrainLog(config_hash="")
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["kind"] == "run":
                log.config_hash = rec["config_hash"]
                log.checkpoint_path = rec["checkpoint_path"]
            else:
                log.epochs.append(
                    EpochStats(
                        epoch=rec["epoch"],
                        mean_loss=rec["mean_loss"],
                        lr=rec["lr"],
                        wall_time=rec["wall_time"],
                        n_pairs=rec["n_pairs"],
                    )
                )
        return log


def lr_at(e: int, total_epochs: int, base_lr: float) -> float:
    """Cosine decay: lr = b * 0.5 * (1 + cos(e * pi / E))."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= e <= total_epochs:
        raise ValueError(f"epoch {e} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(e * math.pi / total_epochs))


def _dice(logits: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    probs = torch.sigmoid(logits)
    dims = tuple(range(1, logits.ndim))
    inter = (probs * target).sum(dim=dims)
    denom = probs.sum(dim=dims) + target.sum(dim=dims)
    return (1.0 - (2.0 * inter + smooth) / (denom + smooth)).mean()


def pair_loss(logits: Tensor, target_mask: Tensor, loss_spec: str = LOSS_BCE) -> Tensor:
    """Mean per-pixel BCE with logits; bce_plus_dice adds soft Dice (weight 1)."""
    if logits.shape != target_mask.shape:
        raise ValueError(
            f"logit shape {tuple(logits.shape)} does not match "
            f"mask shape {tuple(target_mask.shape)}"
        )
    if loss_spec not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    bce = F.binary_cross_entropy_with_logits(logits, target_mask)
    if loss_spec == LOSS_BCE:
        return bce
    return bce + _dice(logits, target_mask)


def _pair_batch(pairs: list[PairSample]):
    ti = images_to_tensor(np.stack([p.target.image for p in pairs]))
    si = images_to_tensor(np.stack([p.source.image for p in pairs]))
    sm = masks_to_tensor(np.stack([p.source_mask for p in pairs]))
    tm = torch.from_numpy(np.stack([p.target_mask for p in pairs])).to(torch.float32)
    return ti, si, sm, tm


def _make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=cfg.base_lr,
        betas=(0.9, 0.999),
        weight_decay=cfg.weight_decay,
    )


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _run_epochs(model, optimizer, cfg, n_epochs, draw_pairs, step_fn, progress=None):
    """Shared loop: set lr per epoch, consume pairs in batches, log stats."""
    log = TrainLog(config_hash=cfg.hash())
    for e in range(n_epochs):
        t0 = time.perf_counter()
        lr = lr_at(e, n_epochs, cfg.base_lr)
        _set_lr(optimizer, lr)
        pairs = draw_pairs()
        losses = []
        for i in range(0, len(pairs), cfg.batch_size):
            batch = pairs[i : i + cfg.batch_size]
            optimizer.zero_grad(set_to_none=True)
            loss = step_fn(batch)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        stats = EpochStats(
            epoch=e,
            mean_loss=float(np.mean(losses)) if losses else 0.0,
            lr=lr,
            wall_time=time.perf_counter() - t0,
            n_pairs=len(pairs),
        )
        log.epochs.append(stats)
        if progress is not None:
            progress(stats)
    return log


def train(
    model: SmolMapSeg,
    dataset: Dataset,
    cfg: TrainConfig,
    progress=None,
) -> TrainLog:
    """Main prompted training run over the dataset's train split.

    One seeded sampler stream supplies pairs_per_epoch pairs per epoch; the
    learning rate follows lr_at stepped per epoch. Deterministic given the
    seed on single-threaded math.
    """
    torch.set_num_threads(1)
    index = dataset.index_for(TRAIN)
    patches = dataset.split(TRAIN)
    sampler = PairSampler(
        index,
        patches,
        SamplerConfig(
            positive_prob=cfg.positive_prob,
            seed=cfg.seed,
            class_universe=list(dataset.classes),
        ),
    )
    model.train()

    def draw():
        return [sampler.draw() for _ in range(cfg.pairs_per_epoch)]

    def step(batch):
        ti, si, sm, tm = _pair_batch(batch)
        logits = model(ti, si, sm)
        return pair_loss(logits, tm, cfg.loss)

    return _run_epochs(model, _make_optimizer(model, cfg), cfg, cfg.epochs, draw, step, progress)


class _FewshotSampler:
    """Pairs restricted to a few-shot pool: positives always the new class.

    Negatives pick a class absent from the target but present somewhere in
    the pool so a source patch exists; supervision is all-zero, teaching the
    model that the prompt's pattern does not occur in the target.
    """

    def __init__(
        self,
        pool: list[Patch],
        index: ClassIndex,
        new_class: int,
        universe: set[int],
        positive_prob: float,
        seed: int,
        max_retries: int = 100,
    ):
        self.pool = pool
        self.index = index
        self.new_class = new_class
        self.universe = universe | {new_class}
        self.positive_prob = positive_prob
        self.max_retries = max_retries
        self.rng = np.random.default_rng(seed)
        self.positive_targets = [
            p for p in pool if new_class in index.classes_in(p.patch_id)
        ]
        if not self.positive_targets:
            raise ValueError("new class absent from every few-shot patch")
        self.pool_classes: dict[int, list[Patch]] = {}
        for p in pool:
            for c in index.classes_in(p.patch_id):
                self.pool_classes.setdefault(c, []).append(p)

    def _mask(self, patch: Patch, class_id: int) -> np.ndarray:
        return (patch.label == class_id).astype(np.uint8)

    def draw(self) -> PairSample:
        rng = self.rng
        for _ in range(self.max_retries):
            if rng.random() < self.positive_prob:
                target = self.positive_targets[int(rng.integers(len(self.positive_targets)))]
                others = [p for p in self.positive_targets if p.patch_id != target.patch_id]
                pool = others or self.positive_targets
                source = pool[int(rng.integers(len(pool)))]
                return PairSample(
                    target=target,
                    source=source,
                    class_id=self.new_class,
                    polarity=POSITIVE,
                    source_mask=self._mask(source, self.new_class),
                    target_mask=self._mask(target, self.new_class),
                )
            target = self.pool[int(rng.integers(len(self.pool)))]
            absent = sorted(
                (self.universe - self.index.classes_in(target.patch_id))
                & set(self.pool_classes)
            )
            if not absent:
                continue
            class_id = absent[int(rng.integers(len(absent)))]
            candidates = self.pool_classes[class_id]
            source = candidates[int(rng.integers(len(candidates)))]
            return PairSample(
                target=target,
                source=source,
                class_id=class_id,
                polarity=NEGATIVE,
                source_mask=self._mask(source, class_id),
                target_mask=np.zeros_like(target.label, dtype=np.uint8),
            )
        raise UnsatisfiableDataset("no negative class available in few-shot pool")


def fewshot_finetune(
    model: SmolMapSeg,
    fewshot_patches: list[Patch],
    new_class: int,
    cfg: TrainConfig,
    min_pixels: int,
    class_universe: set[int] | None = None,
    n_epochs: int | None = None,
    progress=None,
) -> TrainLog:
    """Fine-tune on a small patch pool so the model picks up one new class.

    All parameter groups stay trainable. n_epochs overrides cfg.epochs and
    may be 0, which leaves the parameters untouched.
    """
    torch.set_num_threads(1)
    epochs = cfg.epochs if n_epochs is None else n_epochs
    if epochs < 0:
        raise ValueError("n_epochs must be >= 0")
    index = index_classes(fewshot_patches, min_pixels)
    sampler = _FewshotSampler(
        pool=fewshot_patches,
        index=index,
        new_class=new_class,
        universe=set(class_universe or ()),
        positive_prob=cfg.positive_prob,
        seed=cfg.seed,
    )
    if epochs == 0:
        return TrainLog(config_hash=cfg.hash())
    model.train()

    def draw():
        return [sampler.draw() for _ in range(cfg.pairs_per_epoch)]

    def step(batch):
        ti, si, sm, tm = _pair_batch(batch)
        logits = model(ti, si, sm)
        return pair_loss(logits, tm, cfg.loss)

    return _run_epochs(model, _make_optimizer(model, cfg), cfg, epochs, draw, step, progress)


def train_baseline(
    model: BaselineUNet,
    dataset: Dataset,
    cfg: TrainConfig,
    progress=None,
) -> TrainLog:
    """Standard per-pixel cross-entropy training of the UNet baseline.

    Patches are drawn uniformly with replacement from the train split,
    pairs_per_epoch per epoch, so the pixel budget matches the prompted run.
    Label values map to output channels through the sorted class list.
    """
    torch.set_num_threads(1)
    patches = dataset.split(TRAIN)
    if not patches:
        raise UnsatisfiableDataset("no train patches")
    sorted_ids = [c.id for c in sorted(dataset.classes, key=lambda c: c.id)]
    channel_of = np.zeros(256, dtype=np.int64)
    for i, cid in enumerate(sorted_ids):
        channel_of[cid] = i + 1
    rng = np.random.default_rng(cfg.seed)
    model.train()

    def draw():
        return [patches[int(rng.integers(len(patches)))] for _ in range(cfg.pairs_per_epoch)]

    def step(batch):
        x = images_to_tensor(np.stack([p.image for p in batch]))
        y = torch.from_numpy(channel_of[np.stack([p.label for p in batch])])
        logits = model(x)
        return F.cross_entropy(logits, y)

    return _run_epochs(model, _make_optimizer(model, cfg), cfg, cfg.epochs, draw, step, progress)
