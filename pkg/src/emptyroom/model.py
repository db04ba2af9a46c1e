"""Coarse-to-fine full-to-empty generator and the patch discriminator."""
from __future__ import annotations

import io
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var, as_var
from .exceptions import ConfigError, FormatError, MaskError, ShapeError
from .layout import LayoutTransform, gather_features, layout_logits
from .nn import Conv2d, Module, avg_pool2, leaky_relu, softmax_channels, tanh, upsample_nearest
from .softsean import DEFAULT_K, SseanBlock, StyleEncoder
from .tensor_core import Rng, tensor_from_bytes, tensor_to_bytes

SLOPE = 0.2
TOTAL_STRIDE = 8


@dataclass
class ModelConfig:
    height: int = 32
    width: int = 64
    style_dim: int = 16
    k_sharpen: float = DEFAULT_K
    n_classes: int = 3
    coarse_widths: tuple[int, int, int] = (16, 32, 64)
    refine_widths: tuple[int, int, int] = (32, 64, 128)
    disc_widths: tuple[int, int, int] = (32, 64, 128)
    sharpen_in_encoder: bool = True
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        if self.height % TOTAL_STRIDE or self.width % TOTAL_STRIDE:
            raise ConfigError(f"resolution {self.height}x{self.width} must be divisible by {TOTAL_STRIDE}")
        if not self.k_sharpen > 0:
            raise ConfigError("k_sharpen must be > 0")
        if self.style_dim < 1:
            raise ConfigError("style_dim must be >= 1")

    def to_meta(self) -> dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            out[k] = ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in meta:
                continue
            raw = meta[f.name]
            if f.name.endswith("_widths"):
                kwargs[f.name] = tuple(int(x) for x in raw.split(","))
            elif f.name == "sharpen_in_encoder":
                kwargs[f.name] = raw == "True"
            elif f.name in ("k_sharpen",):
                kwargs[f.name] = float(raw)
            elif f.name == "dtype":
                kwargs[f.name] = raw
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def check_binary_mask(mask: np.ndarray) -> None:
    if not np.all((mask == 0) | (mask == 1)):
        raise MaskError("foreground mask must be binary {0, 1}")


def mask_input(full_image, fg_mask, checked: bool = True) -> Var:
    """Zero out the foreground: ``full * (1 - mask)``."""
    full_image, fg_mask = as_var(full_image), as_var(fg_mask)
    if checked:
        check_binary_mask(fg_mask.value)
    return full_image * (1.0 - fg_mask.value)


def composite(i_f, i_c, fg_mask) -> Var:
    """Known pixels from ``i_f``, generated pixels from ``i_c`` inside the mask."""
    i_f, i_c = as_var(i_f), as_var(i_c)
    m = np.asarray(fg_mask.value if isinstance(fg_mask, Var) else fg_mask, dtype=i_f.dtype)
    if i_f.shape != i_c.shape or m.shape[0] != i_f.shape[0] or m.shape[2:] != i_f.shape[2:]:
        raise ShapeError(f"composite shapes disagree: {i_f.shape}, {i_c.shape}, {m.shape}")
    return i_f * (1.0 - m) + i_c * m


@dataclass
class CoarseOutput:
    image: Var  # working resolution, (-1, 1)
    layout: Var  # semantic map at working resolution
    logits: Var
    decoder_maps: list[Var]


class CoarseNet(Module):
    """Slim U-Net at half resolution with a linear layout head on its decoder."""

    def __init__(self, widths=(16, 32, 64), n_classes: int = 3, in_channels: int = 4, *, rng: Rng, dtype="f32"):
        w1, w2, w3 = widths
        self.enc1 = Conv2d(in_channels, w1, 3, 1, rng=rng, dtype=dtype)
        self.enc2 = Conv2d(w1, w2, 3, 2, rng=rng, dtype=dtype)
        self.enc3 = Conv2d(w2, w3, 3, 2, rng=rng, dtype=dtype)
        self.mid = Conv2d(w3, w3, 3, 1, rng=rng, dtype=dtype)
        self.dec1 = Conv2d(w3 + w2, w2, 3, 1, rng=rng, dtype=dtype)
        self.dec2 = Conv2d(w2 + w1, w1, 3, 1, rng=rng, dtype=dtype)
        self.out = Conv2d(w1, 3, 3, 1, rng=rng, dtype=dtype, gain=1.0)
        # every decoder layer except the image output feeds the layout head
        self.layout = LayoutTransform(w2 + w1, n_classes, rng=rng, dtype=dtype)

    def forward(self, i_f, fg_mask) -> CoarseOutput:
        i_f = as_var(i_f)
        h, w = i_f.shape[2:]
        if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
            raise ShapeError(f"input {h}x{w} not divisible by {TOTAL_STRIDE}")
        x = avg_pool2(ad.concat([i_f, np.asarray(fg_mask, dtype=i_f.dtype)], axis=1))
        e1 = leaky_relu(self.enc1(x), SLOPE)
        e2 = leaky_relu(self.enc2(e1), SLOPE)
        e3 = leaky_relu(self.enc3(e2), SLOPE)
        m = leaky_relu(self.mid(e3), SLOPE)
        d1 = leaky_relu(self.dec1(ad.concat([upsample_nearest(m, 2), e2], axis=1)), SLOPE)
        d2 = leaky_relu(self.dec2(ad.concat([upsample_nearest(d1, 2), e1], axis=1)), SLOPE)
        image = upsample_nearest(tanh(self.out(d2)), 2)
        bank = gather_features([d1, d2], (h, w))
        logits = layout_logits(bank, self.layout)
        return CoarseOutput(image, softmax_channels(logits), logits, [d1, d2])


class RefineNet(Module):
    """Context encoder plus a decoder whose every block is SSEAN-modulated."""

    def __init__(self, widths=(32, 64, 128), style_dim: int = 16, n_classes: int = 3, in_channels: int = 4, *,
                 k_sharpen: float = DEFAULT_K, sharpen_in_encoder: bool = True, rng: Rng, dtype="f32"):
        w1, w2, w3 = widths
        self.style = StyleEncoder(style_dim, rng=rng, dtype=dtype, k_sharpen=k_sharpen,
                                  sharpen_map=sharpen_in_encoder)
        self.enc1 = Conv2d(in_channels, w1, 3, 1, rng=rng, dtype=dtype)
        self.enc2 = Conv2d(w1, w2, 3, 2, rng=rng, dtype=dtype)
        self.enc3 = Conv2d(w2, w3, 3, 2, rng=rng, dtype=dtype)
        self.norm3 = SseanBlock(w3, style_dim, n_classes, k_sharpen=k_sharpen, rng=rng, dtype=dtype)
        self.dec3 = Conv2d(w3, w2, 3, 1, rng=rng, dtype=dtype)
        self.norm2 = SseanBlock(w2, style_dim, n_classes, k_sharpen=k_sharpen, rng=rng, dtype=dtype)
        self.dec2 = Conv2d(w2, w1, 3, 1, rng=rng, dtype=dtype)
        self.norm1 = SseanBlock(w1, style_dim, n_classes, k_sharpen=k_sharpen, rng=rng, dtype=dtype)
        self.dec1 = Conv2d(w1, 3, 3, 1, rng=rng, dtype=dtype, gain=1.0)

    def forward(self, comp, fg_mask, m_s, i_f) -> Var:
        comp = as_var(comp)
        if comp.shape != as_var(i_f).shape:
            raise ShapeError("composite and masked input shapes differ")
        mask = np.asarray(fg_mask, dtype=comp.dtype)
        st = self.style(i_f, m_s)
        e1 = leaky_relu(self.enc1(ad.concat([comp, mask], axis=1)), SLOPE)
        e2 = leaky_relu(self.enc2(e1), SLOPE)
        e3 = leaky_relu(self.enc3(e2), SLOPE)
        h = self.dec3(leaky_relu(self.norm3(e3, st, m_s), SLOPE))
        h = upsample_nearest(h, 2) + e2
        h = self.dec2(leaky_relu(self.norm2(h, st, m_s), SLOPE))
        h = upsample_nearest(h, 2) + e1
        out = tanh(self.dec1(leaky_relu(self.norm1(h, st, m_s), SLOPE)))
        return composite(i_f, out, mask)


@dataclass
class GeneratorOutput:
    masked: Var
    coarse: Var
    layout: Var
    layout_logits: Var
    composite: Var
    refined: Var


class Generator(Module):
    def __init__(self, config: ModelConfig, rng: Rng | None = None):
        rng = Rng(config.seed).spawn(1) if rng is None else rng
        self.config = config
        self.coarse = CoarseNet(config.coarse_widths, config.n_classes, rng=rng, dtype=config.dtype)
        self.refine = RefineNet(config.refine_widths, config.style_dim, config.n_classes,
                                k_sharpen=config.k_sharpen, sharpen_in_encoder=config.sharpen_in_encoder,
                                rng=rng, dtype=config.dtype)

    def coarse_forward(self, i_f, fg_mask) -> CoarseOutput:
        return self.coarse(i_f, fg_mask)

    def refine_forward(self, comp, fg_mask, m_s, i_f) -> Var:
        return self.refine(comp, fg_mask, m_s, i_f)

    def forward(self, full, fg_mask) -> GeneratorOutput:
        fg_mask = np.asarray(fg_mask.value if isinstance(fg_mask, Var) else fg_mask)
        i_f = mask_input(full, fg_mask)
        c = self.coarse(i_f, fg_mask)
        comp = composite(i_f, c.image, fg_mask)
        refined = self.refine(comp, fg_mask, c.layout, i_f)
        return GeneratorOutput(i_f, c.image, c.layout, c.logits, comp, refined)


class PatchDiscriminator(Module):
    """Three stride-2 convs and a 1-channel score head; conditioned on the layout map."""

    def __init__(self, widths=(32, 64, 128), in_channels: int = 6, *, rng: Rng, dtype="f32"):
        w1, w2, w3 = widths
        self.c1 = Conv2d(in_channels, w1, 3, 2, rng=rng, dtype=dtype)
        self.c2 = Conv2d(w1, w2, 3, 2, rng=rng, dtype=dtype)
        self.c3 = Conv2d(w2, w3, 3, 2, rng=rng, dtype=dtype)
        self.score = Conv2d(w3, 1, 3, 1, rng=rng, dtype=dtype, gain=1.0)

    def forward(self, img, m_s) -> Var:
        img, m_s = as_var(img), as_var(m_s)
        if img.shape[2:] != m_s.shape[2:] or img.shape[0] != m_s.shape[0]:
            raise ShapeError("image and layout map disagree")
        x = ad.concat([img, m_s], axis=1)
        x = leaky_relu(self.c1(x), SLOPE)
        x = leaky_relu(self.c2(x), SLOPE)
        x = leaky_relu(self.c3(x), SLOPE)
        return self.score(x)


def discriminate(disc: PatchDiscriminator, img, m_s) -> Var:
    return disc(img, m_s)


def build_model(config: ModelConfig) -> tuple[Generator, PatchDiscriminator]:
    root = Rng(config.seed)
    gen = Generator(config, root.spawn(1))
    disc = PatchDiscriminator(config.disc_widths, 3 + config.n_classes, rng=root.spawn(2), dtype=config.dtype)
    return gen, disc


# ---------------------------------------------------------------------------
# checkpoint archive


_EPOCH = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def checkpoint_bytes(gen: Generator, disc: PatchDiscriminator, extra: dict[str, str] | None = None) -> bytes:
    """manifest.txt (``index name file`` lines), config.txt and one STNT file per parameter."""
    buf = io.BytesIO()
    params = [("G." + k, v) for k, v in gen.named_parameters()] + [("D." + k, v) for k, v in disc.named_parameters()]
    meta = gen.config.to_meta()
    meta.update(extra or {})
    with zipfile.ZipFile(buf, "w") as zf:
        manifest = []
        for i, (name, var) in enumerate(params):
            fname = f"tensors/{i:05d}.stnt"
            manifest.append(f"{i} {name} {fname}\n")
            _zip_write(zf, fname, tensor_to_bytes(var.value))
        _zip_write(zf, "manifest.txt", "".join(manifest).encode())
        _zip_write(zf, "config.txt", "".join(f"{k}={v}\n" for k, v in sorted(meta.items())).encode())
    return buf.getvalue()


def save_checkpoint(path: str | Path, gen: Generator, disc: PatchDiscriminator,
                    extra: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(gen, disc, extra))


def load_checkpoint(path: str | Path) -> tuple[Generator, PatchDiscriminator, dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a checkpoint archive") from exc
    with zf:
        names = set(zf.namelist())
        if "manifest.txt" not in names or "config.txt" not in names:
            raise FormatError(f"{path}: missing manifest or config")
        meta = {}
        for line in zf.read("config.txt").decode().splitlines():
            if line:
                k, _, v = line.partition("=")
                meta[k] = v
        config = ModelConfig.from_meta(meta)
        gen, disc = build_model(config)
        g_state, d_state = {}, {}
        for line in zf.read("manifest.txt").decode().splitlines():
            if not line:
                continue
            _, name, fname = line.split(" ")
            if fname not in names:
                raise FormatError(f"{path}: manifest names missing tensor {fname}")
            arr = tensor_from_bytes(zf.read(fname))
            side, _, key = name.partition(".")
            (g_state if side == "G" else d_state)[key] = arr
    gen.load_state_dict(g_state)
    disc.load_state_dict(d_state)
    return gen, disc, meta
