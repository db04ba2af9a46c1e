"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .data_synth import SceneSample
from .exceptions import MaskError, ShapeError


def check_image_batch(images, n_channels: int = 3, name: str = "images") -> np.ndarray:
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != n_channels:
        raise ShapeError(f"{name} must be [N, {n_channels}, H, W], got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contain non-finite values")
    return arr


def check_fg_mask(mask, like: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[:, None] if m.shape[0] == like.shape[0] and m.shape[0] != 1 else m[None]
    if m.shape != (like.shape[0], 1) + like.shape[2:]:
        raise ShapeError(f"mask shape {m.shape} does not match images {like.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise MaskError("foreground mask must be binary {0, 1}")
    return m


def check_resolution(images: np.ndarray, height: int, width: int) -> None:
    if images.shape[2:] != (height, width):
        raise ShapeError(f"images are {images.shape[2]}x{images.shape[3]}, model expects {height}x{width}")


def split_inputs(X) -> tuple[np.ndarray, np.ndarray]:
    """Accept scene samples, a ``(images, masks)`` pair or a ``[N, 4, H, W]`` array (RGB + mask)."""
    if isinstance(X, SceneSample):
        X = [X]
    if isinstance(X, Sequence) and X and isinstance(X[0], SceneSample):
        return np.stack([s.full for s in X]), np.stack([s.fg_mask for s in X])
    if isinstance(X, tuple) and len(X) == 2:
        images = check_image_batch(X[0])
        return images, check_fg_mask(X[1], images)
    arr = check_image_batch(X, n_channels=4, name="X")
    images = arr[:, :3]
    return images, check_fg_mask(arr[:, 3:], images)


def as_samples(X) -> list[SceneSample]:
    if isinstance(X, SceneSample):
        return [X]
    samples = list(X)
    if not samples or not all(isinstance(s, SceneSample) for s in samples):
        raise TypeError("expected a non-empty sequence of SceneSample")
    return samples
