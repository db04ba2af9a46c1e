"""Adam, the alternating generator/discriminator loop, and evaluation metrics."""
from __future__ import annotations

import logging
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tape, Var, backward
from .data_synth import SceneSample, stack_batch
from .exceptions import NumericError, ShapeError
from .losses import (CSV_HEADER, FixedFeatureExtractor, LossWeights, format_csv_row, hinge_d_loss,
                     l1_loss, total_generator_loss)
from .model import Generator, PatchDiscriminator, checkpoint_bytes
from .optim import Adam, AdamState, adam_step  # noqa: F401
from .tensor_core import Rng

log = logging.getLogger(__name__)

PSNR_CAP = 99.0


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adv_warmup_epochs: int = 5
    supervise_coarse: bool = True
    seed: int = 0
    feature_seed: int = 1234
    debug: bool = False


@dataclass
class TrainResult:
    log_rows: list[str]
    checkpoint: bytes
    baseline_l1_masked: float | None = None


def batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _prepare(batch: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: (v.astype(dtype) if k != "layout" else v) for k, v in batch.items()}


def train(dataset: Sequence[SceneSample], gen: Generator, disc: PatchDiscriminator,
          weights: LossWeights | None = None, cfg: TrainConfig | None = None,
          log_path: str | Path | None = None, single_thread: bool = False) -> TrainResult:
    """Alternate one generator update and one discriminator update per batch.

    The adversarial term joins the generator objective after
    ``adv_warmup_epochs``; the discriminator trains from the same point.
    Returns the CSV log lines and the final checkpoint bytes.
    """
    weights = weights or LossWeights()
    cfg = cfg or TrainConfig()
    if not dataset:
        raise ShapeError("training dataset is empty")
    h, w = dataset[0].shape
    if (h, w) != (gen.config.height, gen.config.width):
        raise ShapeError(f"dataset resolution {(h, w)} does not match model {(gen.config.height, gen.config.width)}")

    limiter = nullcontext()
    if single_thread:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=1)

    dtype = np.float32 if gen.config.dtype == "f32" else np.float64
    fx = FixedFeatureExtractor(cfg.feature_seed, dtype=gen.config.dtype)
    g_opt = Adam(gen.parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
    d_opt = Adam(disc.parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
    rng = Rng(cfg.seed).spawn(3)
    rows: list[str] = []
    step = 0

    with limiter:
        for epoch in range(cfg.epochs):
            use_adv = epoch >= cfg.adv_warmup_epochs and weights.w_adv > 0
            for idx in batches(len(dataset), cfg.batch_size, rng):
                batch = _prepare(stack_batch([dataset[i] for i in idx]), dtype)
                snapshot = (gen.state_dict(), disc.state_dict())
                # generator step; discriminator frozen
                disc.set_trainable(False)
                with Tape() as tape:
                    out = gen(batch["full"], batch["mask"])
                    d_fake_g = disc(out.refined, out.layout) if use_adv else None
                    total, report = total_generator_loss(out, batch, weights, fx, d_fake_g, cfg.supervise_coarse)
                if not np.isfinite(report["total"]):
                    raise _diverged(gen, disc, snapshot, rows, f"generator loss is non-finite at step {step}")
                g_opt.zero_grad()
                backward(tape, total)
                disc.set_trainable(True)
                if cfg.debug:
                    _assert_grad_flow(gen, disc)
                try:
                    g_opt.step()
                except NumericError as exc:
                    raise _diverged(gen, disc, snapshot, rows, f"step {step}: {exc}") from exc
                g_opt.zero_grad()

                adv_d = 0.0
                if use_adv:
                    gen.set_trainable(False)
                    fake, cond = out.refined.value, out.layout.value
                    with Tape() as tape:
                        loss_d = hinge_d_loss(disc(batch["empty"], cond), disc(fake, cond))
                    d_opt.zero_grad()
                    backward(tape, loss_d)
                    if cfg.debug and any(p.grad is not None for p in gen.parameters()):
                        raise AssertionError("discriminator step leaked gradients into the generator")
                    try:
                        d_opt.step()
                    except NumericError as exc:
                        raise _diverged(gen, disc, snapshot, rows, f"step {step}: {exc}") from exc
                    d_opt.zero_grad()
                    gen.set_trainable(True)
                    adv_d = float(loss_d.value)
                report["adv_d"] = adv_d
                rows.append(format_csv_row(step, report))
                step += 1
            log.info("epoch %d done, last row %s", epoch, rows[-1] if rows else "-")

    ckpt = checkpoint_bytes(gen, disc)
    if log_path is not None:
        write_log(log_path, rows)
    return TrainResult(rows, ckpt)


def _assert_grad_flow(gen: Generator, disc: PatchDiscriminator) -> None:
    dead = [n for n, p in gen.coarse.named_parameters() if p.grad is None or not np.any(p.grad)]
    if dead:
        raise AssertionError(f"no gradient reached coarse parameters: {dead}")
    if any(p.grad is not None for p in disc.parameters()):
        raise AssertionError("generator step leaked gradients into the discriminator")


class TrainingDiverged(NumericError):
    """Raised on a non-finite loss or gradient; carries the last good state."""

    def __init__(self, message: str, checkpoint: bytes, log_rows: list[str]):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.log_rows = log_rows


def _diverged(gen, disc, snapshot, rows, message) -> TrainingDiverged:
    gen.load_state_dict(snapshot[0])
    disc.load_state_dict(snapshot[1])
    gen.set_trainable(True)
    disc.set_trainable(True)
    return TrainingDiverged(message, checkpoint_bytes(gen, disc), list(rows))


def write_log(path: str | Path, rows: Sequence[str]) -> None:
    Path(path).write_text(",".join(CSV_HEADER) + "\n" + "".join(r + "\n" for r in rows))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Metrics:
    l1_masked: float
    psnr: float
    layout_pixel_acc: float
    layout_miou: float

    def as_table(self) -> str:
        rows = [("l1_masked", self.l1_masked), ("psnr_db", self.psnr),
                ("layout_pixel_acc", self.layout_pixel_acc), ("layout_miou", self.layout_miou)]
        return "\n".join(f"{k:<18}{v:>12.6f}" for k, v in rows)

    def as_csv(self) -> str:
        return ("l1_masked,psnr,layout_pixel_acc,layout_miou\n"
                f"{self.l1_masked!r},{self.psnr!r},{self.layout_pixel_acc!r},{self.layout_miou!r}\n")


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB on images rescaled from (-1, 1) to [0, 1], capped at 99 dB."""
    mse = float(np.mean(((pred - target) * 0.5) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def pixel_accuracy(pred_labels: np.ndarray, gt_labels: np.ndarray) -> float:
    return float(np.mean(pred_labels == gt_labels))


def mean_iou(pred_labels: np.ndarray, gt_labels: np.ndarray, n_classes: int = 3) -> float:
    """Mean IoU over classes present in prediction or ground truth."""
    ious = []
    for c in range(n_classes):
        p, g = pred_labels == c, gt_labels == c
        union = np.logical_or(p, g).sum()
        if union:
            ious.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


def masked_l1(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    m = np.broadcast_to(mask, pred.shape)
    if m.sum() == 0:
        return float(np.mean(np.abs(pred - target)))
    return float(np.abs(pred - target)[m > 0.5].mean())


def sample_metrics(refined: np.ndarray, empty: np.ndarray, mask: np.ndarray,
                   layout_probs: np.ndarray, gt_layout: np.ndarray) -> Metrics:
    """Metrics for one sample (``[3, H, W]`` images, ``[C, H, W]`` probabilities)."""
    pred_labels = np.argmax(layout_probs, axis=0)
    return Metrics(masked_l1(refined, empty, mask), psnr(refined, empty),
                   pixel_accuracy(pred_labels, gt_layout), mean_iou(pred_labels, gt_layout, layout_probs.shape[0]))


def average_metrics(items: Sequence[Metrics]) -> Metrics:
    return Metrics(*(float(np.mean([getattr(m, f) for m in items]))
                     for f in ("l1_masked", "psnr", "layout_pixel_acc", "layout_miou")))


def predict(gen: Generator, samples: Sequence[SceneSample], batch_size: int = 16):
    """Forward passes without a tape; yields (sample, GeneratorOutput arrays) pairs."""
    dtype = np.float32 if gen.config.dtype == "f32" else np.float64
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = _prepare(stack_batch(chunk), dtype)
        out = gen(batch["full"], batch["mask"])
        for j, s in enumerate(chunk):
            yield s, {"refined": out.refined.value[j], "coarse": out.coarse.value[j],
                      "layout": out.layout.value[j], "composite": out.composite.value[j]}


def evaluate(dataset: Sequence[SceneSample], gen: Generator, which: str = "refined") -> Metrics:
    items = [sample_metrics(o[which], s.empty, s.fg_mask, o["layout"], s.gt_layout) for s, o in predict(gen, dataset)]
    return average_metrics(items)


def baseline_masked_l1(dataset: Sequence[SceneSample], gen: Generator) -> float:
    return evaluate(dataset, gen).l1_masked
