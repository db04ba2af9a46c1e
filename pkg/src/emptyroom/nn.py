"""Differentiable building blocks for the generator and discriminator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Var, as_var, make_op
from .exceptions import ParameterError, ShapeError
from .tensor_core import Rng, resolve_dtype

relu = ad.relu
leaky_relu = ad.leaky_relu
tanh = ad.tanh
sigmoid = ad.sigmoid


@dataclass
class Conv2dParams:
    weight: Var  # [C_out, C_in, k, k]
    bias: Var  # [C_out]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weight, self.bias = as_var(self.weight), as_var(self.bias)
        k = self.weight.shape[-1]
        if self.weight.ndim != 4 or self.weight.shape[-2] != k or k % 2 == 0:
            raise ShapeError(f"conv weight must be [O, I, k, k] with odd k, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("conv bias must have one entry per output channel")
        if self.stride < 1 or self.padding < 0:
            raise ParameterError("stride must be >= 1 and padding >= 0")

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, p: Conv2dParams) -> Var:
    """Zero-padded 2-D cross-correlation via im2col."""
    x = as_var(x)
    w, b = p.weight, p.bias
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N, C, H, W], got {x.shape}")
    n, c, h, wd = x.shape
    o, ci, k, _ = w.shape
    if c != ci:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    s, pad = p.stride, p.padding
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ShapeError("input smaller than kernel")
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    ho, wo = conv_output_size(h, k, s, pad), conv_output_size(wd, k, s, pad)
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    # cols: [N, C, Ho, Wo, k, k]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = w.value.reshape(o, c * k * k)
    out = (cols @ wmat.T + b.value).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for di in range(k):
                for dj in range(k):
                    gxp[:, :, di:di + s * ho:s, dj:dj + s * wo:s] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        return gx, gw, gb

    return make_op("conv2d", np.ascontiguousarray(out), (x, w, b), fn)


def upsample_nearest(x, factor: int) -> Var:
    x = as_var(x)
    if factor < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    f = factor
    out = x.value.repeat(f, axis=2).repeat(f, axis=3)
    n, c, h, w = x.shape

    def fn(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return make_op("upsample_nearest", out, (x,), fn)


def downsample_nearest(x, factor: int) -> Var:
    """Nearest-neighbour downsampling: keep the top-left pixel of each block."""
    x = as_var(x)
    if factor < 1:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by {factor}")
    shape, dtype = x.shape, x.dtype

    def fn(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[:, :, ::factor, ::factor] = g
        return (gx,)

    return make_op("downsample_nearest", np.ascontiguousarray(x.value[:, :, ::factor, ::factor]), (x,), fn)


def resize_nearest(x, size: tuple[int, int]) -> Var:
    """Integer-factor nearest resize to ``size`` (up or down)."""
    x = as_var(x)
    h, w = x.shape[2:]
    th, tw = size
    if (th, tw) == (h, w):
        return x
    if th > h:
        if th % h or tw % w or th // h != tw // w:
            raise ShapeError(f"cannot upsample {(h, w)} to {size} by an integer factor")
        return upsample_nearest(x, th // h)
    if h % th or w % tw or h // th != w // tw:
        raise ShapeError(f"cannot downsample {(h, w)} to {size} by an integer factor")
    return downsample_nearest(x, h // th)


def avg_pool2(x) -> Var:
    x = as_var(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("avg_pool2 needs even spatial dims")
    out = x.value.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def fn(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_op("avg_pool2", out, (x,), fn)


def instance_norm(x, eps: float = 1e-5) -> Var:
    """Per-sample, per-channel normalisation with population variance."""
    x = as_var(x)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects [N, C, H, W], got {x.shape}")
    if x.shape[2] * x.shape[3] < 2:
        raise ShapeError("instance_norm needs at least two pixels per plane")
    mu = x.value.mean(axis=(2, 3), keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(2, 3), keepdims=True) + eps)
    xhat = xc * inv

    def fn(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make_op("instance_norm", xhat, (x,), fn)


def softmax_channels(x) -> Var:
    x = as_var(x)
    if x.ndim < 2 or x.shape[1] < 2:
        raise ShapeError("softmax_channels needs at least two channels on axis 1")
    return ad.softmax(x, axis=1)


# ---------------------------------------------------------------------------
# parameter containers


class Module:
    """Minimal parameter container; attributes holding Vars, Modules or lists
    of Modules are discovered in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Var]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Var):
                if val.name == "param":
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Var]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ShapeError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.value = np.array(state[k], dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def parameter(value: np.ndarray) -> Var:
    """A trainable Var; only Vars made here are listed by ``named_parameters``."""
    return Var(value, requires_grad=True, name="param")


class Conv2d(Module):
    """3x3 / 1x1 convolution layer with He-normal initialised weights."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, *,
                 rng: Rng, dtype="f32", gain: float = 2.0, bias_init: float = 0.0):
        dt = resolve_dtype(dtype)
        std = np.sqrt(gain / (c_in * k * k))
        self.weight = parameter(rng.normal((c_out, c_in, k, k), 0.0, std).astype(dt))
        self.bias = parameter(np.full(c_out, bias_init, dtype=dt))
        self.stride = stride
        self.padding = (k - 1) // 2

    @property
    def params(self) -> Conv2dParams:
        return Conv2dParams(self.weight, self.bias, self.stride, self.padding)

    def forward(self, x) -> Var:
        return conv2d(x, self.params)
