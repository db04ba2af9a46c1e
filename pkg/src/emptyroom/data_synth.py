"""Procedural paired room scenes and their on-disk PPM/PGM layout.

A scene is three stacked horizontal bands (ceiling, wall, floor) with wavy,
width-periodic boundaries and per-band textures.  "Furniture" rectangles are
painted on top to make the furnished image; their union is the foreground
mask.  Pixel values are quantised to 8 bits at generation time, so what is
written to disk reads back exactly.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, FormatError, GenerationError
from .tensor_core import Rng

N_CLASSES = 3
MAX_RETRIES = 100

DEFAULT_BASE_COLORS = (
    (0.70, 0.68, 0.60),  # ceiling
    (0.15, -0.05, -0.25),  # wall
    (-0.35, -0.55, -0.70),  # floor
)


@dataclass
class SceneConfig:
    height: int = 32
    width: int = 64
    n_furniture: tuple[int, int] = (1, 4)
    band_jitter: float = 0.04
    base_colors: tuple = DEFAULT_BASE_COLORS
    color_jitter: float = 0.25
    noise_amplitude: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 32:
            raise ConfigError("scenes need height >= 16 and width >= 32")
        if self.width != 2 * self.height:
            raise ConfigError("scene width must be twice the height")
        lo, hi = self.n_furniture
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad furniture range {self.n_furniture}")
        if self.band_jitter < 0 or self.noise_amplitude < 0 or self.color_jitter < 0:
            raise ConfigError("jitter and noise amplitudes must be >= 0")

    def to_meta(self) -> dict[str, str]:
        d = asdict(self)
        d["n_furniture"] = f"{self.n_furniture[0]},{self.n_furniture[1]}"
        d["base_colors"] = ";".join(",".join(repr(float(v)) for v in c) for c in self.base_colors)
        return {k: str(v) for k, v in d.items()}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "SceneConfig":
        lo, hi = (int(v) for v in meta["n_furniture"].split(","))
        colors = tuple(tuple(float(v) for v in c.split(",")) for c in meta["base_colors"].split(";"))
        return cls(height=int(meta["height"]), width=int(meta["width"]), n_furniture=(lo, hi),
                   band_jitter=float(meta["band_jitter"]), base_colors=colors,
                   color_jitter=float(meta["color_jitter"]), noise_amplitude=float(meta["noise_amplitude"]),
                   seed=int(meta["seed"]))


@dataclass
class SceneSample:
    full: np.ndarray  # [3, H, W] float32 in (-1, 1)
    empty: np.ndarray  # [3, H, W]
    fg_mask: np.ndarray  # [1, H, W] in {0, 1}
    gt_layout: np.ndarray  # [H, W] int, 0=ceiling 1=wall 2=floor
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.gt_layout.shape


def quantize(img: np.ndarray) -> np.ndarray:
    """(-1, 1) floats -> uint8 in [1, 254]."""
    return np.clip(np.rint((img + 1.0) * 127.5), 1, 254).astype(np.uint8)


def dequantize(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def _boundary(rng: Rng, cfg: SceneConfig, lo: float, hi: float) -> np.ndarray:
    h, w = cfg.height, cfg.width
    base = rng.uniform(1, lo, hi)[0] * h
    amp = rng.uniform(2, 0.0, 1.0) * cfg.band_jitter * h
    phase = rng.uniform(2, 0.0, 2 * np.pi)
    x = np.arange(w) / w * 2 * np.pi
    return base + amp[0] * np.sin(x + phase[0]) + amp[1] * np.sin(2 * x + phase[1])


def _attempt(cfg: SceneConfig, rng: Rng) -> SceneSample | None:
    h, w = cfg.height, cfg.width
    top = _boundary(rng, cfg, 0.22, 0.38)
    bottom = _boundary(rng, cfg, 0.62, 0.78)
    rows = np.arange(h)[:, None] + 0.5
    layout = np.where(rows < top[None, :], 0, np.where(rows < bottom[None, :], 1, 2)).astype(np.int64)

    fractions = np.bincount(layout.ravel(), minlength=N_CLASSES) / layout.size
    if fractions.min() < 0.10 or fractions.max() > 0.80:
        return None

    base = np.asarray(cfg.base_colors, dtype=np.float64)
    colors = np.clip(base + rng.uniform((N_CLASSES, 3), -cfg.color_jitter, cfg.color_jitter), -0.95, 0.95)
    empty = np.moveaxis(colors[layout], -1, 0)
    shade = np.linspace(0.05, -0.05, h)[None, :, None]
    empty = empty + shade + rng.normal((3, h, w), 0.0, cfg.noise_amplitude)

    lo, hi = cfg.n_furniture
    # an empty mask can never meet the coverage floor
    n_rect = max(1, rng.integers(lo, hi + 1))
    full = empty.copy()
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(n_rect):
        rw = max(2, int(rng.uniform(1, 0.08, 0.30)[0] * w))
        rh = max(2, int(rng.uniform(1, 0.15, 0.55)[0] * h))
        x0 = rng.integers(0, w - rw + 1)
        y1 = int(np.clip(rng.uniform(1, bottom.mean() - 2, h)[0], rh, h))
        y0 = y1 - rh
        color = rng.uniform(3, -0.9, 0.9)
        full[:, y0:y1, x0:x0 + rw] = color[:, None, None] + rng.normal((3, rh, rw), 0.0, cfg.noise_amplitude)
        mask[y0:y1, x0:x0 + rw] = True

    coverage = mask.mean()
    if coverage < 0.05 or coverage > 0.40:
        return None
    empty_q = dequantize(quantize(empty))
    full_q = dequantize(quantize(full))
    full_q[:, ~mask] = empty_q[:, ~mask]
    return SceneSample(full=full_q, empty=empty_q, fg_mask=mask[None].astype(np.float32), gt_layout=layout)


def generate_scene(cfg: SceneConfig, rng: Rng | None = None) -> SceneSample:
    rng = Rng(cfg.seed) if rng is None else rng
    for _ in range(MAX_RETRIES):
        sample = _attempt(cfg, rng)
        if sample is not None:
            sample.meta = cfg.to_meta()
            sample.meta["rng_seed"] = str(rng.seed)
            return sample
    raise GenerationError(f"could not satisfy scene invariants in {MAX_RETRIES} attempts for {cfg}")


def generate_dataset(cfg: SceneConfig, n: int, seed: int | None = None) -> list[SceneSample]:
    """``n`` scenes; scene ``i`` draws from its own stream seeded ``seed ^ i``."""
    seed = cfg.seed if seed is None else seed
    root = Rng(seed)
    return [generate_scene(cfg, root.spawn(i)) for i in range(n)]


# ---------------------------------------------------------------------------
# PPM / PGM


def write_pnm(path: str | Path, pixels: np.ndarray) -> None:
    """uint8 ``[H, W]`` -> P5, ``[H, W, 3]`` -> P6."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    magic = b"P5" if pixels.ndim == 2 else b"P6"
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pnm(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    data = path.read_bytes()
    pos, tokens = 0, []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"{path}: only 8-bit images are supported")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    body = data[pos:]
    if len(body) != w * h * channels:
        raise FormatError(f"{path}: expected {w * h * channels} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def image_to_ppm_pixels(img: np.ndarray) -> np.ndarray:
    return np.moveaxis(quantize(img), 0, -1)


def ppm_pixels_to_image(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim != 3:
        raise FormatError("expected an RGB image")
    return np.ascontiguousarray(np.moveaxis(dequantize(pixels), -1, 0))


def mask_from_pgm(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim != 2:
        raise FormatError("expected a greyscale mask")
    return (pixels >= 128).astype(np.float32)[None]


def read_meta(path: Path) -> dict[str, str]:
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    meta = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            meta[key.strip()] = val.strip()
    return meta


def write_dataset(samples: Iterable[SceneSample], directory: str | Path) -> list[Path]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    dirs = []
    for i, s in enumerate(samples):
        d = root / f"sample_{i:05d}"
        d.mkdir(exist_ok=True)
        write_pnm(d / "full.ppm", image_to_ppm_pixels(s.full))
        write_pnm(d / "empty.ppm", image_to_ppm_pixels(s.empty))
        write_pnm(d / "mask.pgm", (s.fg_mask[0] > 0.5).astype(np.uint8) * 255)
        write_pnm(d / "layout.pgm", (s.gt_layout * 100).astype(np.uint8))
        (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in sorted(s.meta.items())))
        dirs.append(d)
    return dirs


def read_sample(d: str | Path) -> SceneSample:
    d = Path(d)
    full = ppm_pixels_to_image(read_pnm(d / "full.ppm"))
    empty = ppm_pixels_to_image(read_pnm(d / "empty.ppm"))
    mask = mask_from_pgm(read_pnm(d / "mask.pgm"))
    raw = read_pnm(d / "layout.pgm")
    if raw.ndim != 2 or np.any(raw % 100) or raw.max() >= 100 * N_CLASSES:
        raise FormatError(f"{d / 'layout.pgm'}: values must be class id x 100")
    meta = read_meta(d / "meta.txt")
    if full.shape != empty.shape or full.shape[1:] != raw.shape or mask.shape[1:] != raw.shape:
        raise FormatError(f"{d}: image sizes disagree")
    return SceneSample(full=full, empty=empty, fg_mask=mask, gt_layout=(raw // 100).astype(np.int64), meta=meta)


def read_dataset(directory: str | Path) -> list[SceneSample]:
    root = Path(directory)
    if not root.is_dir():
        raise FormatError(f"dataset directory not found: {root}")
    return [read_sample(d) for d in sorted(p for p in root.iterdir() if p.is_dir())]


def stack_batch(samples: Sequence[SceneSample]) -> dict[str, np.ndarray]:
    return {
        "full": np.stack([s.full for s in samples]),
        "empty": np.stack([s.empty for s in samples]),
        "mask": np.stack([s.fg_mask for s in samples]),
        "layout": np.stack([s.gt_layout for s in samples]),
    }
