"""Registry of finite-difference gradient checks run by ``emptyroom gradcheck``.

Each check builds small float64 inputs, reduces the op's output to a scalar
through fixed random weights (plain sums are degenerate for normalising ops)
and compares tape gradients with central differences.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses, nn, softsean
from .autodiff import GradcheckReport, Var, gradcheck
from .layout import LayoutTransform, gather_features, layout_head, layout_logits
from .nn import Conv2d
from .tensor_core import Rng

CheckFn = Callable[[float, float], GradcheckReport]
REGISTRY: dict[str, CheckFn] = {}


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn
    return deco


def _rng(name: str) -> Rng:
    return Rng(sum(map(ord, name)) * 7919)


def _var(rng: Rng, shape, scale: float = 1.0) -> Var:
    return Var(rng.normal(shape, 0.0, scale))


def _soft_map(rng: Rng, shape) -> Var:
    logits = rng.normal(shape, 0.0, 1.0)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return Var(e / e.sum(axis=1, keepdims=True))


def _project(out: Var, rng: Rng) -> Var:
    w = rng.normal(out.shape, 0.0, 1.0)
    return (out * w).sum()


@register("sharpen")
def check_sharpen(eps, tol):
    rng = _rng("sharpen")
    p = _soft_map(rng, (2, 3, 2, 3))
    w = rng.normal((2, 3, 2, 3), 0.0, 1.0)
    return gradcheck(lambda p: (softsean.sharpen(p, 0.1) * w).sum(), [p], eps, tol, "sharpen")


@register("region_pool")
def check_region_pool(eps, tol):
    rng = _rng("region_pool")
    s, m = _var(rng, (2, 4, 3, 4)), _soft_map(rng, (2, 3, 3, 4))
    w = rng.normal((2, 3, 4), 0.0, 1.0)
    return gradcheck(lambda s, m: (softsean.region_pool(s, m) * w).sum(), [s, m], eps, tol, "region_pool")


@register("soft_broadcast")
def check_soft_broadcast(eps, tol):
    rng = _rng("soft_broadcast")
    st, m = _var(rng, (2, 3, 4)), _soft_map(rng, (2, 3, 3, 4))
    w = rng.normal((2, 4, 3, 4), 0.0, 1.0)
    return gradcheck(lambda st, m: (softsean.soft_broadcast(st, m) * w).sum(), [st, m], eps, tol, "soft_broadcast")


@register("style_encode")
def check_style_encode(eps, tol):
    rng = _rng("style_encode")
    enc = softsean.StyleEncoder(4, hidden=4, rng=rng, dtype="f64")
    img, m = _var(rng, (1, 3, 4, 8), 0.5), _soft_map(rng, (1, 3, 4, 8))
    w = rng.normal((1, 3, 4), 0.0, 1.0)
    return gradcheck(lambda img, m: (softsean.style_encode(img, m, enc) * w).sum(), [img, m], eps, tol,
                     "style_encode")


def _block(rng, channels=4, style_dim=4, K=0.1):
    blk = softsean.SseanBlock(channels, style_dim, 3, k_sharpen=K, rng=rng, dtype="f64")
    # stronger random modulation than the near-identity init
    blk.gamma.weight.value = rng.normal(blk.gamma.weight.shape, 0.0, 0.3)
    blk.beta.weight.value = rng.normal(blk.beta.weight.shape, 0.0, 0.3)
    return blk


@register("ssean_block")
def check_ssean_block(eps, tol):
    rng = _rng("ssean_block")
    blk = _block(rng)
    act, st, m = _var(rng, (1, 4, 4, 8)), _var(rng, (1, 3, 4)), _soft_map(rng, (1, 3, 4, 8))
    w = rng.normal((1, 4, 4, 8), 0.0, 1.0)
    return gradcheck(lambda a, s, m: (blk(a, s, m) * w).sum(), [act, st, m], eps, tol, "ssean_block")


@register("ssean_block_params")
def check_ssean_block_params(eps, tol):
    rng = _rng("ssean_block_params")
    blk = _block(rng)
    act, st, m = _var(rng, (1, 4, 4, 8)).value, _var(rng, (1, 3, 4)).value, _soft_map(rng, (1, 3, 4, 8)).value
    w = rng.normal((1, 4, 4, 8), 0.0, 1.0)
    params = [blk.proj_weight, blk.proj_bias, blk.gamma.weight, blk.beta.bias]
    return gradcheck(lambda *_: (blk(act, st, m) * w).sum(), params, eps, tol, "ssean_block_params")


@register("layout_head")
def check_layout_head(eps, tol):
    rng = _rng("layout_head")
    a, b = _var(rng, (1, 4, 2, 4)), _var(rng, (1, 2, 4, 8))
    t = LayoutTransform(6, 3, rng=rng, dtype="f64")
    t.bias.value = rng.normal(3, 0.0, 0.5)
    w = rng.normal((1, 3, 4, 8), 0.0, 1.0)
    f = lambda a, b, T, bias: (layout_head(gather_features([a, b], (4, 8)), t) * w).sum()  # noqa: E731
    return gradcheck(f, [a, b, t.T, t.bias], eps, tol, "layout_head")


@register("conv2d")
def check_conv2d(eps, tol):
    rng = _rng("conv2d")
    x = _var(rng, (1, 2, 4, 4))
    wt, b = _var(rng, (3, 2, 3, 3)), _var(rng, (3,))
    wo = rng.normal((1, 3, 4, 4), 0.0, 1.0)
    f = lambda x, wt, b: (nn.conv2d(x, nn.Conv2dParams(wt, b, 1, 1)) * wo).sum()  # noqa: E731
    return gradcheck(f, [x, wt, b], eps, tol, "conv2d")


@register("conv2d_stride2")
def check_conv2d_stride2(eps, tol):
    rng = _rng("conv2d_stride2")
    x = _var(rng, (2, 2, 5, 6))
    wt, b = _var(rng, (3, 2, 3, 3)), _var(rng, (3,))
    wo = rng.normal((2, 3, 3, 3), 0.0, 1.0)
    f = lambda x, wt, b: (nn.conv2d(x, nn.Conv2dParams(wt, b, 2, 1)) * wo).sum()  # noqa: E731
    return gradcheck(f, [x, wt, b], eps, tol, "conv2d_stride2")


@register("instance_norm")
def check_instance_norm(eps, tol):
    rng = _rng("instance_norm")
    x = _var(rng, (1, 2, 3, 3))
    w = rng.normal((1, 2, 3, 3), 0.0, 1.0)
    return gradcheck(lambda x: (nn.instance_norm(x) * w).sum(), [x], eps, tol, "instance_norm")


@register("softmax_channels")
def check_softmax(eps, tol):
    rng = _rng("softmax_channels")
    x = _var(rng, (2, 4, 2, 2), 2.0)
    w = rng.normal((2, 4, 2, 2), 0.0, 1.0)
    return gradcheck(lambda x: (nn.softmax_channels(x) * w).sum(), [x], eps, tol, "softmax_channels")


@register("resampling")
def check_resampling(eps, tol):
    rng = _rng("resampling")
    x = _var(rng, (1, 2, 4, 4))
    w1 = rng.normal((1, 2, 8, 8), 0.0, 1.0)
    w2 = rng.normal((1, 2, 2, 2), 0.0, 1.0)
    w3 = rng.normal((1, 2, 2, 2), 0.0, 1.0)

    def f(x):
        return ((nn.upsample_nearest(x, 2) * w1).sum() + (nn.downsample_nearest(x, 2) * w2).sum()
                + (nn.avg_pool2(x) * w3).sum())

    return gradcheck(f, [x], eps, tol, "resampling")


@register("activations")
def check_activations(eps, tol):
    rng = _rng("activations")
    x = _var(rng, (3, 5))
    w = rng.normal((4, 3, 5), 0.0, 1.0)

    def f(x):
        return ((nn.relu(x) * w[0]).sum() + (nn.leaky_relu(x, 0.2) * w[1]).sum()
                + (nn.tanh(x) * w[2]).sum() + (nn.sigmoid(x) * w[3]).sum())

    skip = lambda i, v: np.abs(v) < 1e-6  # noqa: E731
    return gradcheck(f, [x], eps, tol, "activations", skip=skip)


@register("l1_loss")
def check_l1(eps, tol):
    rng = _rng("l1_loss")
    x, target = _var(rng, (1, 3, 4, 4)), rng.normal((1, 3, 4, 4), 0.0, 1.0)
    mask = (rng.uniform((1, 1, 4, 4)) > 0.5).astype(np.float64)
    skip = lambda i, v: np.abs(v - target) < 1e-6  # noqa: E731
    return gradcheck(lambda x: losses.l1_loss(x, target) + losses.l1_loss(x, target, mask), [x], eps, tol,
                     "l1_loss", skip=skip)


@register("feature_loss")
def check_feature_loss(eps, tol):
    rng = _rng("feature_loss")
    fx = losses.FixedFeatureExtractor(seed=5, widths=(4, 4, 4), dtype="f64")
    x, target = _var(rng, (1, 3, 8, 8), 0.5), rng.normal((1, 3, 8, 8), 0.0, 0.5)
    return gradcheck(lambda x: losses.feature_loss(x, target, fx), [x], eps, tol, "feature_loss")


@register("hinge_losses")
def check_hinge(eps, tol):
    rng = _rng("hinge_losses")
    real, fake = _var(rng, (2, 1, 2, 4)), _var(rng, (2, 1, 2, 4))

    def f(real, fake):
        d, g = losses.hinge_adv_losses(real, fake, fake)
        return d + g

    skip = lambda i, v: np.abs(np.abs(v) - 1.0) < 1e-6  # noqa: E731
    return gradcheck(f, [real, fake], eps, tol, "hinge_losses", skip=skip)


@register("layout_ce")
def check_layout_ce(eps, tol):
    rng = _rng("layout_ce")
    logits = _var(rng, (2, 4, 2, 3), 2.0)
    labels = rng.integers(0, 4, (2, 2, 3)).reshape(2, 2, 3)
    return gradcheck(lambda z: losses.layout_ce(z, labels), [logits], eps, tol, "layout_ce")


@register("micro_model")
def check_micro_model(eps, tol):
    """Two conv layers around a layout head and an SSEAN block, trained end to end."""
    rng = _rng("micro_model")
    conv1 = Conv2d(3, 4, 3, 1, rng=rng, dtype="f64")
    conv2 = Conv2d(4, 3, 3, 1, rng=rng, dtype="f64", gain=1.0)
    head = LayoutTransform(4, 3, rng=rng, dtype="f64")
    blk = _block(rng)
    x = rng.normal((1, 3, 4, 8), 0.0, 1.0)
    target = rng.normal((1, 3, 4, 8), 0.0, 0.5)
    labels = rng.integers(0, 3, (1, 4, 8)).reshape(1, 4, 8)

    def f(*_):
        feats = nn.tanh(conv1(x))
        logits = layout_logits(feats, head)
        m = nn.softmax_channels(logits)
        st = softsean.region_pool(feats, softsean.sharpen(m, 0.1))
        out = nn.tanh(conv2(nn.leaky_relu(blk(feats, st, m), 0.2)))
        return ((out - target) ** 2).mean() + losses.layout_ce(logits, labels)

    params = [conv1.weight, conv1.bias, head.T, head.bias, blk.proj_weight, blk.gamma.weight, conv2.weight]
    return gradcheck(f, params, eps, tol, "micro_model")


PRIMARY_CHECKS = ("sharpen", "region_pool", "soft_broadcast", "style_encode", "ssean_block", "layout_head",
                  "conv2d", "instance_norm", "softmax_channels", "l1_loss", "feature_loss", "hinge_losses",
                  "layout_ce", "micro_model")


def run_checks(names=None, eps: float = 1e-5, tol: float = 1e-4) -> list[GradcheckReport]:
    names = list(REGISTRY) if not names else list(names)
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown gradcheck op(s): {', '.join(unknown)}")
    return [REGISTRY[n](eps, tol) for n in names]
