"""Dense tensors, a portable PRNG and the STNT checkpoint format.

Tensors are plain ``numpy.ndarray`` values restricted to float32/float64,
row-major, with image tensors laid out as ``[batch, channels, height, width]``.
"""
from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

from .exceptions import FormatError, NumericError, ParameterError, ShapeError

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}

MAGIC = b"STNT"
VERSION = 1
MAX_RANK = 8

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str) and dtype in DTYPES:
        return DTYPES[dtype]
    dt = np.dtype(dtype).newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise ParameterError(f"unsupported dtype {dtype!r}; use f32 or f64")
    return dt


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise NumericError(f"{what} contains non-finite values")
    return t


def tensor_new(shape: Sequence[int], fill: float = 0.0, dtype="f32") -> np.ndarray:
    shape = check_shape(shape)
    if not np.isfinite(fill):
        raise NumericError("fill value must be finite")
    return np.full(shape, fill, dtype=resolve_dtype(dtype))


def from_data(data, shape: Sequence[int] | None = None, dtype="f64", checked=True) -> np.ndarray:
    """Build a tensor from nested sequences or a flat row-major buffer."""
    arr = np.asarray(data, dtype=resolve_dtype(dtype))
    if shape is not None:
        shape = check_shape(shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    if checked:
        check_finite(arr)
    return np.ascontiguousarray(arr)


class Rng:
    """SplitMix64 counter-based generator.

    The i-th raw 64-bit output is ``mix(seed + (i + 1) * 0x9E3779B97F4A7C15)``
    with the standard SplitMix64 finalizer, so streams are reproducible on any
    platform and in any language.  Uniforms take the top 53 bits; normals use
    Box-Muller on consecutive uniform pairs.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def spawn(self, index: int) -> "Rng":
        """Derived generator for parallel work item ``index`` (seed xor index)."""
        return Rng(self.seed ^ (int(index) & _MASK64))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(shape)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ParameterError(f"std must be >= 0, got {std}")
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return (mean + std * z).reshape(shape)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high)."""
        if high <= low:
            raise ParameterError("empty integer range")
        n = 1 if size is None else size
        vals = low + np.floor(self.uniform(n) * (high - low)).astype(np.int64)
        vals = np.minimum(vals, high - 1)
        return int(vals[0]) if size is None else vals

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def tensor_rand_normal(shape, mean: float, std: float, rng: Rng, dtype="f32") -> np.ndarray:
    shape = check_shape(shape)
    if std < 0:
        raise ParameterError(f"std must be >= 0, got {std}")
    return rng.normal(shape, mean, std).astype(resolve_dtype(dtype))


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    dt = resolve_dtype(t.dtype)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.ndim > MAX_RANK:
        raise FormatError(f"rank {t.ndim} exceeds {MAX_RANK}")
    header = MAGIC + struct.pack("<BBB", VERSION, _DTYPE_CODES[dt], t.ndim)
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t, dtype=dt).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError("bad magic; not an STNT tensor")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported STNT version {version}")
    if code not in (0, 1):
        raise FormatError(f"unknown dtype code {code}")
    if rank == 0 or rank > MAX_RANK:
        raise FormatError(f"invalid rank {rank}")
    off = 7 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 7)
    if any(d == 0 for d in dims):
        raise FormatError("zero dimension")
    dt = np.dtype("<f4") if code == 0 else np.dtype("<f8")
    count = 1
    for d in dims:
        count *= d
        if count * dt.itemsize > len(buf):
            raise FormatError("dimension overflow or truncated payload")
    nbytes = count * dt.itemsize
    if len(buf) != off + nbytes:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {nbytes}")
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(dims).copy()


def tensor_save(t: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def tensor_load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
