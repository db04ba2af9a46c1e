"""Dense layout estimation as a linear map over coarse-decoder features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var, as_var, backward
from .exceptions import ShapeError
from .losses import layout_ce
from .nn import Module, parameter, softmax_channels, upsample_nearest
from .optim import Adam
from .tensor_core import Rng, resolve_dtype

CLASS_NAMES = ("ceiling", "wall", "floor")


@dataclass
class FeatureBank:
    """Decoder maps upsampled to a common resolution, in decoder order."""

    maps: list[Var]
    target_h: int
    target_w: int

    @property
    def n_channels(self) -> int:
        return sum(m.shape[1] for m in self.maps)

    def stacked(self) -> Var:
        return self.maps[0] if len(self.maps) == 1 else ad.concat(self.maps, axis=1)


def gather_features(decoder_maps, target: tuple[int, int] | None = None) -> FeatureBank:
    """Nearest-upsample every map to ``target`` (default: the largest map)."""
    maps = [as_var(m) for m in decoder_maps]
    if not maps:
        raise ShapeError("need at least one decoder map")
    if target is None:
        target = max((m.shape[2:] for m in maps), key=lambda s: s[0] * s[1])
    th, tw = target
    out = []
    for m in maps:
        h, w = m.shape[2:]
        if th % h or tw % w or th // h != tw // w:
            raise ShapeError(f"map of size {(h, w)} does not divide {target} by one integer factor")
        out.append(upsample_nearest(m, th // h))
    return FeatureBank(out, th, tw)


class LayoutTransform(Module):
    """Class logits ``T @ X + bias`` per pixel; ``use_bias=False`` is the pure linear form."""

    def __init__(self, n_features: int, n_classes: int = 3, *, use_bias: bool = True,
                 rng: Rng | None = None, dtype="f32", init_std: float | None = None):
        dt = resolve_dtype(dtype)
        if rng is None:
            t = np.zeros((n_classes, n_features), dtype=dt)
        else:
            std = init_std if init_std is not None else np.sqrt(1.0 / n_features)
            t = rng.normal((n_classes, n_features), 0.0, std).astype(dt)
        self.T = parameter(t)
        self.use_bias = use_bias
        if use_bias:
            self.bias = parameter(np.zeros(n_classes, dtype=dt))
        else:
            self.bias = Var(np.zeros(n_classes, dtype=dt))

    @property
    def n_features(self) -> int:
        return self.T.shape[1]

    def forward(self, bank: FeatureBank | Var) -> Var:
        return layout_head(bank, self)


def layout_logits(bank: FeatureBank | Var, t: LayoutTransform) -> Var:
    x = bank.stacked() if isinstance(bank, FeatureBank) else as_var(bank)
    n, k, h, w = x.shape
    if k != t.n_features:
        raise ShapeError(f"feature bank has {k} channels, transform expects {t.n_features}")
    m = t.T.shape[0]
    logits = t.T @ x.reshape(n, k, h * w)
    logits = logits + t.bias.reshape(1, m, 1)
    return logits.reshape(n, m, h, w)


def layout_head(bank: FeatureBank | Var, t: LayoutTransform) -> Var:
    return softmax_channels(layout_logits(bank, t))


def layout_to_pgm_levels(probs: np.ndarray) -> np.ndarray:
    """argmax class -> grey levels {0, 127, 254} for ``[C, H, W]`` or ``[H, W]`` labels."""
    labels = np.argmax(probs, axis=0) if probs.ndim == 3 else np.asarray(probs)
    return (labels.astype(np.uint8) * 127).astype(np.uint8)


def fit_layout_transform(features: np.ndarray, labels: np.ndarray, *, n_classes: int = 3, steps: int = 300,
                         lr: float = 0.05, use_bias: bool = True, seed: int = 0,
                         transform: LayoutTransform | None = None) -> LayoutTransform:
    """Fit ``T`` (and bias) by full-batch Adam on pixel cross-entropy.

    ``features`` is ``[N, n, H, W]`` and ``labels`` ``[N, H, W]``.
    """
    features = np.asarray(features)
    dtype = "f64" if features.dtype == np.float64 else "f32"
    t = transform or LayoutTransform(features.shape[1], n_classes, use_bias=use_bias, rng=Rng(seed),
                                     dtype=dtype, init_std=0.01)
    opt = Adam(t.parameters(), lr=lr, betas=(0.9, 0.999))
    x = Var(features)
    for _ in range(steps):
        with Tape() as tape:
            loss = layout_ce(layout_logits(x, t), labels)
        opt.zero_grad()
        backward(tape, loss)
        opt.step()
    return t
