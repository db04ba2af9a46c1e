"""Reconstruction, feature, adversarial and layout losses."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var, as_var
from .exceptions import ConfigError, LabelError, ShapeError
from .nn import Conv2d, Module, avg_pool2, conv2d, relu
from .tensor_core import Rng

CSV_HEADER = ("step", "total", "l1", "feat", "adv_g", "adv_d", "layout_ce")


@dataclass
class LossWeights:
    w_l1: float = 1.0
    w_feat: float = 0.1
    w_adv: float = 0.01
    w_layout: float = 1.0

    def __post_init__(self):
        ws = (self.w_l1, self.w_feat, self.w_adv, self.w_layout)
        if any(w < 0 for w in ws):
            raise ConfigError("loss weights must be >= 0")
        if not any(w > 0 for w in ws):
            raise ConfigError("at least one loss weight must be positive")

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ConfigError("weights must be four comma-separated values: l1,feat,adv,layout")
        return cls(*parts)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_l1, self.w_feat, self.w_adv, self.w_layout)

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(*(w * factor for w in self.as_tuple()))


def l1_loss(pred, target, region_mask=None) -> Var:
    """Mean absolute error, optionally restricted to ``region_mask`` (broadcast over channels)."""
    pred = as_var(pred)
    target = np.asarray(target.value if isinstance(target, Var) else target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = ad.abs_(pred - target)
    if region_mask is None:
        return diff.mean()
    m = np.broadcast_to(np.asarray(region_mask, dtype=pred.dtype), pred.shape)
    total = float(m.sum())
    if total == 0:
        warnings.warn("l1_loss: empty mask region, using the unmasked mean", RuntimeWarning, stacklevel=2)
        return diff.mean()
    return (diff * m).sum() * (1.0 / total)


class FixedFeatureExtractor(Module):
    """Frozen random conv features standing in for a perceptual network.

    Weights are drawn once from ``seed`` and never trained.
    """

    def __init__(self, seed: int = 1234, widths=(8, 16, 32), in_channels: int = 3, dtype="f32"):
        rng = Rng(seed)
        layers = []
        c = in_channels
        for w in widths:
            conv = Conv2d(c, w, 3, 1, rng=rng, dtype=dtype)
            conv.weight.requires_grad = conv.bias.requires_grad = False
            conv.weight.name = conv.bias.name = None
            layers.append(conv)
            c = w
        self._layers = layers

    @property
    def layers(self) -> list[Conv2d]:
        return self._layers

    def features(self, x) -> list[Var]:
        feats = []
        for conv in self._layers:
            x = avg_pool2(relu(conv2d(x, conv.params)))
            feats.append(x)
        return feats


def feature_loss(pred, target, fx: FixedFeatureExtractor) -> Var:
    target = np.asarray(target.value if isinstance(target, Var) else target)
    pred = as_var(pred)
    if pred.shape != target.shape:
        raise ShapeError("feature_loss shapes differ")
    total = None
    for fp, ft in zip(fx.features(pred), fx.features(target)):
        term = ad.abs_(fp - ft.value).mean()
        total = term if total is None else total + term
    return total


def hinge_d_loss(d_real, d_fake) -> Var:
    return ad.relu(1.0 - as_var(d_real)).mean() + ad.relu(1.0 + as_var(d_fake)).mean()


def hinge_g_loss(d_fake) -> Var:
    return -as_var(d_fake).mean()


def hinge_adv_losses(d_real, d_fake_for_d, d_fake_for_g) -> tuple[Var, Var]:
    return hinge_d_loss(d_real, d_fake_for_d), hinge_g_loss(d_fake_for_g)


def check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"layout labels must lie in [0, {n_classes})")
    return labels


def layout_ce(logits, gt_labels) -> Var:
    """Pixel-mean cross-entropy with the softmax fused in."""
    logits = as_var(logits)
    n, c, h, w = logits.shape
    labels = check_labels(gt_labels, c)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    onehot = np.moveaxis(np.eye(c, dtype=logits.dtype)[labels], -1, 1)
    return -(ad.log_softmax(logits, axis=1) * onehot).sum() * (1.0 / (n * h * w))


def total_generator_loss(outputs, targets: dict, weights: LossWeights, fx: FixedFeatureExtractor | None = None,
                         d_fake_for_g=None, supervise_coarse: bool = True) -> tuple[Var, dict[str, float]]:
    """Weighted generator objective and the unweighted value of each term.

    ``outputs`` is a :class:`~emptyroom.model.GeneratorOutput`; ``targets``
    holds ``empty`` images, the foreground ``mask`` and ``layout`` labels.
    The coarse image, when supervised, contributes to the L1 term only.
    """
    empty = targets["empty"]
    report: dict[str, float] = {}
    total = None

    def add(term, w):
        nonlocal total
        if w == 0:
            return
        scaled = term * w
        total = scaled if total is None else total + scaled

    l1 = l1_loss(outputs.refined, empty)
    report["l1"] = float(l1.value)
    add(l1, weights.w_l1)
    if supervise_coarse:
        l1c = l1_loss(outputs.coarse, empty)
        report["l1_coarse"] = float(l1c.value)
        add(l1c, weights.w_l1)
    if fx is not None and weights.w_feat > 0:
        feat = feature_loss(outputs.refined, empty, fx)
        report["feat"] = float(feat.value)
        add(feat, weights.w_feat)
    else:
        report["feat"] = 0.0
    if d_fake_for_g is not None and weights.w_adv > 0:
        adv = hinge_g_loss(d_fake_for_g)
        report["adv_g"] = float(adv.value)
        add(adv, weights.w_adv)
    else:
        report["adv_g"] = 0.0
    ce = layout_ce(outputs.layout_logits, targets["layout"])
    report["layout_ce"] = float(ce.value)
    add(ce, weights.w_layout)
    report["l1_masked"] = float(l1_loss(outputs.refined.value, empty, targets.get("mask")).value) \
        if targets.get("mask") is not None and np.asarray(targets["mask"]).sum() > 0 else report["l1"]
    report["total"] = float(total.value)
    return total, report


def format_csv_row(step: int, report: dict[str, float]) -> str:
    vals = [str(step)] + [repr(float(report.get(k, 0.0))) for k in CSV_HEADER[1:]]
    return ",".join(vals)
