"""Training loop: AdamW with a linear-warmup cosine schedule, checkpointing
and validation-driven model selection.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import AugmentConfig, PairedSample, augment
from .inference import binarize_document
from .losses import LossConfig, compute_loss
from .metrics import f_measure, psnr
from .network import BinarizationNet, rng_state_to_str, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """Raised when the loss becomes NaN or Inf."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1.5e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    batch_size: int = 8
    warmup_steps: int = 10
    total_steps: int = 2000
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    val_every: int = 100
    checkpoint_dir: str = "checkpoints"
    val_patch_size: int = 256
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.checkpoint_dir is None:
            object.__setattr__(self, "checkpoint_dir", "checkpoints")
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be smaller than total_steps")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up over ``warmup_steps`` then cosine decay to zero."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay, eps=1e-8,
    )


def make_batch(patches: list[PairedSample], step: int, cfg: TrainConfig,
               augment_cfg: AugmentConfig | None) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch for ``step``; every slot has its own rng seeded by (seed, step, slot)."""
    pick = np.random.default_rng([cfg.seed, step])
    chosen = pick.integers(0, len(patches), size=cfg.batch_size)
    images, masks = [], []
    for slot, idx in enumerate(chosen):
        sample = patches[int(idx)]
        if augment_cfg is not None:
            rng = np.random.default_rng([cfg.seed, step, slot, augment_cfg.seed])
            sample = augment(sample, augment_cfg, rng)
        images.append(sample.image)
        masks.append(sample.mask)
    x = torch.from_numpy(np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2)))
    y = torch.from_numpy(np.stack(masks)[:, None].astype(np.float32))
    return x, y


def validate(model: BinarizationNet, val_set: list[PairedSample], patch_size: int) -> dict:
    fms, psnrs = [], []
    for sample in val_set:
        pred = binarize_document(model, sample.image, patch_size, patch_size // 2)
        fms.append(f_measure(pred, sample.mask))
        psnrs.append(psnr(pred, sample.mask))
    model.train()
    return {"val_fm": float(np.mean(fms)), "val_psnr": float(np.mean(psnrs))}


@dataclass
class TrainResult:
    records: list[dict]
    best_path: Path
    final_path: Path
    best_val_fm: float | None
    final_val_fm: float | None

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records if "loss" in r]


def train(model: BinarizationNet, dataset: list[PairedSample], cfg: TrainConfig,
          val_set: list[PairedSample] | None = None,
          augment_cfg: AugmentConfig | None = None,
          log_path=None, header: dict | None = None) -> TrainResult:
    """Optimize ``model`` on training patches.

    ``dataset`` holds the training patches (see
    :func:`docbin.data.extract_training_patches`).  With ``augment_cfg`` each
    draw is augmented to ``augment_cfg.out_size``; without it patches are used
    as-is, so a one-patch dataset yields a batch of repeated copies.

    Checkpoints ``last``, ``best`` and ``final`` are written to
    ``cfg.checkpoint_dir``; ``best`` is chosen by validation F-measure.  The
    log is JSON lines: a config header, then one record per step.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_path, final_path, last_path = (ckpt_dir / f"{n}.safetensors" for n in ("best", "final", "last"))
    log_path = Path(log_path) if log_path else ckpt_dir / "train_log.jsonl"
    torch.manual_seed(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    records: list[dict] = []
    best_fm: float | None = None
    val_metrics: dict = {}

    def rng_blob(step):
        return rng_state_to_str({"seed": cfg.seed, "next_step": step})

    with open(log_path, "w") as log_file:
        head = {"event": "config", "train": cfg.to_dict(), "model": model.cfg.to_dict(),
                **(header or {})}
        log_file.write(json.dumps(head, sort_keys=True) + "\n")
        model.train()
        for step in range(cfg.total_steps):
            lr = lr_at(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            x, y = make_batch(dataset, step, cfg, augment_cfg)
            if augment_cfg is None and len(dataset) == 1:
                # identical copies share BN batch statistics and per-copy loss,
                # so one copy gives the same mean loss and gradients
                x, y = x[:1], y[:1]
            x = x.to(next(model.parameters()).dtype)
            y = y.to(x.dtype)
            loss = compute_loss(model(x), y, cfg.loss)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}; last good checkpoint: {last_path}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.max_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
            optimizer.step()

            record = {"step": step, "lr": lr, "loss": float(loss.item()),
                      "val_fm": None, "val_psnr": None}
            done = step + 1
            if val_set and (done % cfg.val_every == 0 or done == cfg.total_steps):
                val_metrics = validate(model, val_set, cfg.val_patch_size)
                record.update(val_metrics)
                save_checkpoint(model, last_path, done, rng_blob(done))
                if best_fm is None or val_metrics["val_fm"] > best_fm:
                    best_fm = val_metrics["val_fm"]
                    save_checkpoint(model, best_path, done, rng_blob(done),
                                    extra={"val_fm": best_fm})
            records.append(record)
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if step % 50 == 0:
                log.info("step %d lr %.3g loss %.5f", step, lr, record["loss"])

    final_fm = val_metrics.get("val_fm") if val_set else None
    save_checkpoint(model, final_path, cfg.total_steps, rng_blob(cfg.total_steps),
                    extra={"val_fm": final_fm} if final_fm is not None else None)
    if not val_set:
        save_checkpoint(model, best_path, cfg.total_steps, rng_blob(cfg.total_steps))
    model.eval()
    return TrainResult(records, best_path, final_path, best_fm, final_fm)
