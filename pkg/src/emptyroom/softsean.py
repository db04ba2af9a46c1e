"""Soft semantic region-adaptive normalisation.

A semantic map here is a ``[N, C, H, W]`` tensor of per-pixel class
probabilities, a style matrix is ``[N, C, D]`` (one code per class) and a
style map is ``[N, D, H, W]``.  Every function accepts soft maps and is
differentiable in all of its inputs, including the map itself; the hard-label
functions at the bottom are the reference the soft path must reproduce on
one-hot inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var, as_var
from .exceptions import LabelError, ParameterError, ShapeError
from .nn import Conv2d, Conv2dParams, Module, conv2d, instance_norm, leaky_relu, parameter, resize_nearest, tanh
from .tensor_core import Rng, resolve_dtype

DEFAULT_K = 0.1
POOL_EPS = 1e-8


def check_semantic_map(m, atol: float = 1e-5) -> np.ndarray:
    """Raise unless ``m`` holds per-pixel distributions over axis 1."""
    p = m.value if isinstance(m, Var) else np.asarray(m)
    if p.ndim != 4:
        raise ShapeError(f"semantic map must be [N, C, H, W], got {p.shape}")
    if np.any(p < -atol) or np.any(p > 1 + atol):
        raise ParameterError("semantic map probabilities must lie in [0, 1]")
    if not np.allclose(p.sum(axis=1), 1.0, atol=atol):
        raise ParameterError("semantic map channels must sum to 1 per pixel")
    return p


def one_hot(labels: np.ndarray, n_classes: int, dtype="f64") -> np.ndarray:
    """Integer map ``[N, H, W]`` -> one-hot ``[N, C, H, W]``."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"labels must lie in [0, {n_classes})")
    eye = np.eye(n_classes, dtype=resolve_dtype(dtype))
    return np.ascontiguousarray(np.moveaxis(eye[labels], -1, 1))


def sharpen(m, K: float = DEFAULT_K) -> Var:
    """Softmax over classes at temperature ``K``, pushing ``m`` towards one-hot."""
    if K is None or not K > 0:
        raise ParameterError(f"sharpening constant must be > 0, got {K}")
    m = as_var(m)
    return ad.softmax(m * (1.0 / K), axis=1)


def region_pool(styles, m, eps: float = POOL_EPS) -> Var:
    """Probability-weighted average of per-pixel styles for each class.

    styles ``[N, D, H, W]`` and m ``[N, C, H, W]`` -> ``[N, C, D]``.  A class
    with no probability mass anywhere gets a zero code.
    """
    styles, m = as_var(styles), as_var(m)
    n, d, h, w = styles.shape
    if m.ndim != 4 or m.shape[0] != n or m.shape[2:] != (h, w):
        raise ShapeError(f"style features {styles.shape} and map {m.shape} disagree")
    c = m.shape[1]
    p = m.reshape(n, c, h * w)
    weighted = p @ styles.reshape(n, d, h * w).transpose(0, 2, 1)
    mass = p.sum(axis=2, keepdims=True)
    return weighted / (mass + eps)


def soft_broadcast(st_prime, m) -> Var:
    """Each pixel receives the class codes mixed by its class probabilities."""
    st_prime, m = as_var(st_prime), as_var(m)
    n, c, d = st_prime.shape
    if m.ndim != 4 or m.shape[:2] != (n, c):
        raise ShapeError(f"style matrix {st_prime.shape} does not match map {m.shape}")
    h, w = m.shape[2:]
    sm = st_prime.transpose(0, 2, 1) @ m.reshape(n, c, h * w)
    return sm.reshape(n, d, h, w)


class StyleEncoder(Module):
    """Two-layer conv encoder producing per-pixel styles at half resolution,
    pooled into one code per class.

    ``sharpen_map`` controls whether the map is sharpened before pooling.
    """

    def __init__(self, style_dim: int = 16, hidden: int = 16, in_channels: int = 3, *,
                 k_sharpen: float | None = DEFAULT_K, sharpen_map: bool = True, rng: Rng, dtype="f32"):
        self.conv1 = Conv2d(in_channels, hidden, 3, 1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(hidden, style_dim, 3, 2, rng=rng, dtype=dtype, gain=1.0)
        self.style_dim = style_dim
        self.k_sharpen = k_sharpen
        self.sharpen_map = sharpen_map

    def features(self, image) -> Var:
        return tanh(self.conv2(leaky_relu(self.conv1(image), 0.2)))

    def forward(self, image, m) -> Var:
        return style_encode(image, m, self)


def style_encode(image, m, encoder: StyleEncoder) -> Var:
    image, m = as_var(image), as_var(m)
    feats = encoder.features(image)
    m_small = resize_nearest(m, feats.shape[2:])
    if m_small.shape[2:] != feats.shape[2:]:
        raise ShapeError("semantic map does not match style feature resolution")
    if encoder.sharpen_map and encoder.k_sharpen is not None:
        m_small = sharpen(m_small, encoder.k_sharpen)
    return region_pool(feats, m_small)


@dataclass
class SseanBlockParams:
    proj_weight: Var  # [D', D], shared across classes
    proj_bias: Var  # [D']
    gamma_conv: Conv2dParams  # (D' + C) -> C_a
    beta_conv: Conv2dParams
    K: float | None = DEFAULT_K  # None disables sharpening


class SseanBlock(Module):
    def __init__(self, channels: int, style_dim: int, n_classes: int = 3, *,
                 k_sharpen: float | None = DEFAULT_K, rng: Rng, dtype="f32"):
        dt = resolve_dtype(dtype)
        self.proj_weight = parameter(rng.normal((style_dim, style_dim), 0.0, np.sqrt(1.0 / style_dim)).astype(dt))
        self.proj_bias = parameter(np.zeros(style_dim, dtype=dt))
        cond = style_dim + n_classes
        # gamma starts near 1 so an untrained block is close to plain instance norm
        self.gamma = Conv2d(cond, channels, 3, 1, rng=rng, dtype=dtype, gain=0.1, bias_init=1.0)
        self.beta = Conv2d(cond, channels, 3, 1, rng=rng, dtype=dtype, gain=0.1)
        self.k_sharpen = k_sharpen

    @property
    def params(self) -> SseanBlockParams:
        return SseanBlockParams(self.proj_weight, self.proj_bias, self.gamma.params, self.beta.params, self.k_sharpen)

    def forward(self, activation, st, m) -> Var:
        return ssean_block(activation, st, m, self.params)


def project_styles(st, params: SseanBlockParams) -> Var:
    """Per-class 1x1 projection s'_c = W s_c + b."""
    return as_var(st) @ params.proj_weight.transpose() + params.proj_bias


def ssean_block(activation, st, m, params: SseanBlockParams, norm_eps: float = 1e-5) -> Var:
    activation, st, m = as_var(activation), as_var(st), as_var(m)
    if activation.ndim != 4 or st.ndim != 3:
        raise ShapeError("activation must be [N, C, h, w] and style matrix [N, C, D]")
    if st.shape[0] != activation.shape[0]:
        raise ShapeError("batch sizes of activation and style matrix differ")
    if params.gamma_conv.weight.shape[0] != activation.shape[1]:
        raise ShapeError("gamma conv output channels must match the activation")
    m = resize_nearest(m, activation.shape[2:])
    if params.K is not None:
        m = sharpen(m, params.K)
    s_prime = project_styles(st, params)
    style_map = soft_broadcast(s_prime, m)
    cond = ad.concat([style_map, m], axis=1)
    gamma = conv2d(cond, params.gamma_conv)
    beta = conv2d(cond, params.beta_conv)
    return gamma * instance_norm(activation, norm_eps) + beta


# ---------------------------------------------------------------------------
# hard-label reference path (plain numpy, no tape)


def _check_labels(hard_m: np.ndarray, n_classes: int) -> np.ndarray:
    hard_m = np.asarray(hard_m)
    if not np.issubdtype(hard_m.dtype, np.integer):
        raise LabelError("hard label map must be integer")
    if hard_m.min() < 0 or hard_m.max() >= n_classes:
        raise LabelError(f"labels must lie in [0, {n_classes})")
    return hard_m


def region_pool_hard(styles: np.ndarray, hard_m: np.ndarray, n_classes: int) -> np.ndarray:
    """Plain mean of the styles over each class's pixels; empty classes give 0."""
    styles = np.asarray(styles.value if isinstance(styles, Var) else styles)
    hard_m = _check_labels(hard_m, n_classes)
    n, d = styles.shape[:2]
    out = np.zeros((n, n_classes, d), dtype=styles.dtype)
    for b in range(n):
        for c in range(n_classes):
            sel = hard_m[b] == c
            if sel.any():
                out[b, c] = styles[b][:, sel].mean(axis=1)
    return out


def broadcast_hard(st_prime: np.ndarray, hard_m: np.ndarray) -> np.ndarray:
    """Copy each pixel's class code: ``[N, C, D]`` x ``[N, H, W]`` -> ``[N, D, H, W]``."""
    batch = np.arange(st_prime.shape[0])[:, None, None]
    return np.ascontiguousarray(np.moveaxis(st_prime[batch, hard_m], -1, 1))


def sean_block_onehot(activation, st, hard_m, params: SseanBlockParams, norm_eps: float = 1e-5) -> np.ndarray:
    """Original SEAN modulation driven by an integer label map.

    Not differentiable w.r.t. the labels and never sharpens.
    """
    act = np.asarray(activation.value if isinstance(activation, Var) else activation)
    st = np.asarray(st.value if isinstance(st, Var) else st)
    n_classes = st.shape[1]
    hard_m = _check_labels(hard_m, n_classes)
    if hard_m.shape != (act.shape[0],) + act.shape[2:]:
        raise ShapeError(f"label map {hard_m.shape} does not match activation {act.shape}")
    s_prime = st @ params.proj_weight.value.T + params.proj_bias.value
    style_map = broadcast_hard(s_prime, hard_m)
    seg = one_hot(hard_m, n_classes, dtype=act.dtype)
    cond = np.concatenate([style_map, seg], axis=1)
    gamma = conv2d(cond, params.gamma_conv).value
    beta = conv2d(cond, params.beta_conv).value
    mu = act.mean(axis=(2, 3), keepdims=True)
    var = ((act - mu) ** 2).mean(axis=(2, 3), keepdims=True)
    return gamma * (act - mu) / np.sqrt(var + norm_eps) + beta
