"""Command-line entry point: ``emptyroom {gradcheck,gen-data,train,eval,infer}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, EmptyRoomError, FormatError
from .softsean import DEFAULT_K

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("emptyroom")


class UsageError(EmptyRoomError):
    """Bad flag value or missing input path; maps to exit code 2."""


@dataclass
class RunConfig:
    height: int = 32
    width: int = 64
    n_classes: int = 3
    style_dim: int = 16
    k_sharpen: float = DEFAULT_K
    seed: int = 0
    epochs: int = 30
    lr: float = 2e-4
    batch_size: int = 4
    weights: str = "1.0,0.1,0.01,1.0"
    n: int = 200
    out: str = "."
    ckpt: str = ""
    dataset: str = ""
    tol: float = 1e-4
    eps: float = 1e-5
    f64: bool = False
    single_thread: bool = False

    def validate(self) -> "RunConfig":
        if not self.k_sharpen > 0:
            raise UsageError("--k-sharpen must be > 0")
        if self.height % 8 or self.width % 8:
            raise UsageError(f"--res {self.height}x{self.width} must be divisible by 8")
        if self.n_classes != 3:
            raise UsageError("only three layout classes are supported")
        for name in ("style_dim", "batch_size", "n"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
        if self.epochs < 0 or self.lr <= 0 or self.tol <= 0 or self.eps <= 0:
            raise UsageError("--epochs must be >= 0 and --lr, --tol, --eps positive")
        try:
            self.loss_weights()
        except (ConfigError, ValueError) as exc:
            raise UsageError(f"--weights: {exc}") from exc
        return self

    def loss_weights(self):
        from .losses import LossWeights
        return LossWeights.parse(self.weights)

    def model_config(self):
        from .model import ModelConfig
        return ModelConfig(height=self.height, width=self.width, style_dim=self.style_dim, k_sharpen=self.k_sharpen,
                           n_classes=self.n_classes, seed=self.seed, dtype="f64" if self.f64 else "f32")

    def echo(self) -> str:
        return "config: " + " ".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))


def parse_res(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    return h, w


def _coerce(name: str, raw: str):
    kind = {f.name: str(f.type) for f in fields(RunConfig)}[name]
    if kind == "bool":
        if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise UsageError(f"config key {name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("1", "true", "yes")
    caster = {"int": int, "float": float}.get(kind, str)
    try:
        return caster(raw)
    except ValueError as exc:
        raise UsageError(f"config key {name}: bad value {raw!r}") from exc


def read_config_file(path: str | Path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment; ``res=HxW`` is accepted."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"--config: file not found: {path}")
    known = {f.name for f in fields(RunConfig)}
    out: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"--config: {path}:{lineno}: expected key=value")
        val = val.strip()
        if key == "res":
            try:
                out["height"], out["width"] = parse_res(val)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(f"--config: {path}:{lineno}: {exc}") from exc
        elif key in known:
            out[key] = _coerce(key, val)
        else:
            raise UsageError(f"--config: {path}:{lineno}: unknown key {key!r}")
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < command-line flags."""
    values = dataclasses.asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    if getattr(args, "res", None) is not None:
        values["height"], values["width"] = args.res
    for name in values:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--single-thread", action="store_const", const=True, default=None,
                   help="pin BLAS to one thread for bit-exact reruns")
    opts = {
        "res": dict(type=parse_res, metavar="HxW"),
        "style_dim": dict(type=int),
        "k_sharpen": dict(type=float),
        "epochs": dict(type=int),
        "lr": dict(type=float),
        "batch_size": dict(type=int),
        "weights": dict(metavar="L1,FEAT,ADV,LAYOUT"),
        "n": dict(type=int, help="number of scenes"),
        "out": dict(),
        "ckpt": dict(),
        "dataset": dict(),
        "tol": dict(type=float),
        "eps": dict(type=float),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, **opts[name])
    if "f64" in names or "res" in names:
        p.add_argument("--f64", action="store_const", const=True, default=None, help="float64 model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emptyroom", description="Furniture removal with soft semantic modulation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _common(p, "tol", "eps")
    p.add_argument("--op", action="append", help="run only this op (repeatable)")
    p.add_argument("--list", action="store_true", help="list registered ops and exit")

    p = sub.add_parser("gen-data", help="write a synthetic scene dataset")
    _common(p, "res", "n", "out")

    p = sub.add_parser("train", help="train generator and discriminator")
    _common(p, "res", "style_dim", "k_sharpen", "epochs", "lr", "batch_size", "weights", "dataset", "out")
    p.add_argument("--debug", action="store_true", help="assert gradient flow every step")

    p = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    _common(p, "ckpt", "dataset", "out")

    p = sub.add_parser("infer", help="run one furnished image and mask through a checkpoint")
    _common(p, "ckpt", "out")
    p.add_argument("full", help="furnished image (PPM)")
    p.add_argument("mask", help="foreground mask (PGM, >=128 is foreground)")
    return parser


# ---------------------------------------------------------------------------
# commands


def _require(path: str, flag: str, kind: str = "file") -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    ok = p.is_file() if kind == "file" else p.is_dir()
    if not ok:
        raise UsageError(f"{flag}: {kind} not found: {p}")
    return p


def _load_dataset(cfg: RunConfig):
    from .data_synth import read_dataset
    try:
        data = read_dataset(_require(cfg.dataset, "--dataset", "dir"))
    except FormatError as exc:
        raise UsageError(f"--dataset: {exc}") from exc
    if not data:
        raise UsageError(f"--dataset: no samples in {cfg.dataset}")
    return data


def _load_generator(cfg: RunConfig):
    """Load ``--ckpt``; the archive's model settings replace the resolved ones."""
    from .model import load_checkpoint
    try:
        gen, _, _ = load_checkpoint(_require(cfg.ckpt, "--ckpt"))
    except FormatError as exc:
        raise UsageError(f"--ckpt: {exc}") from exc
    c = gen.config
    cfg = dataclasses.replace(cfg, height=c.height, width=c.width, style_dim=c.style_dim, k_sharpen=c.k_sharpen,
                              seed=c.seed, f64=c.dtype == "f64")
    print(cfg.echo())
    return gen


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .checks import REGISTRY, run_checks
    if args.list:
        print("\n".join(REGISTRY))
        return EXIT_OK
    try:
        reports = run_checks(args.op, eps=cfg.eps, tol=cfg.tol)
    except KeyError as exc:
        raise UsageError(f"--op: {exc.args[0]}") from exc
    print(f"{'op':<22}{'max_rel_err':>14}{'tol':>10}{'checked':>9}  result")
    for r in reports:
        print(r)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_FAIL
    print(f"all {len(reports)} ops passed")
    return EXIT_OK


def cmd_gen_data(cfg: RunConfig, args) -> int:
    from .data_synth import SceneConfig, generate_dataset, write_dataset
    try:
        scene = SceneConfig(height=cfg.height, width=cfg.width, seed=cfg.seed)
    except ConfigError as exc:
        raise UsageError(f"--res: {exc}") from exc
    dirs = write_dataset(generate_dataset(scene, cfg.n, cfg.seed), cfg.out)
    print(f"wrote {len(dirs)} scenes to {cfg.out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from .model import build_model
    from .trainer import TrainConfig, TrainingDiverged, evaluate, train, write_log
    data = _load_dataset(cfg)
    if data[0].shape != (cfg.height, cfg.width):
        raise UsageError(f"--res {cfg.height}x{cfg.width} does not match dataset {data[0].shape[0]}x{data[0].shape[1]}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    gen, disc = build_model(cfg.model_config())
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed, debug=args.debug)
    try:
        result = train(data, gen, disc, cfg.loss_weights(), tcfg, log_path=out / "log.csv",
                       single_thread=cfg.single_thread)
    except TrainingDiverged as exc:
        (out / "checkpoint.zip").write_bytes(exc.checkpoint)
        write_log(out / "log.csv", exc.log_rows)
        print(f"training diverged; last good state saved to {out / 'checkpoint.zip'}", file=sys.stderr)
        raise
    (out / "checkpoint.zip").write_bytes(result.checkpoint)
    print(f"trained {len(result.log_rows)} steps; checkpoint {out / 'checkpoint.zip'}, log {out / 'log.csv'}")
    print(evaluate(data, gen).as_table())
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .trainer import evaluate
    gen = _load_generator(cfg)
    data = _load_dataset(cfg)
    if data[0].shape != (gen.config.height, gen.config.width):
        raise UsageError("--dataset resolution does not match the checkpoint")
    metrics = evaluate(data, gen)
    print(metrics.as_table())
    if cfg.out != ".":
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics.as_csv())
    return EXIT_OK


def cmd_infer(cfg: RunConfig, args) -> int:
    from .data_synth import image_to_ppm_pixels, mask_from_pgm, ppm_pixels_to_image, read_pnm, write_pnm
    from .layout import layout_to_pgm_levels
    gen = _load_generator(cfg)
    try:
        full = ppm_pixels_to_image(read_pnm(_require(args.full, "full")))
        mask = mask_from_pgm(read_pnm(_require(args.mask, "mask")))
    except FormatError as exc:
        raise UsageError(str(exc)) from exc
    if full.shape[1:] != mask.shape[1:] or full.shape[1:] != (gen.config.height, gen.config.width):
        raise UsageError(f"image {full.shape[1:]} and mask {mask.shape[1:]} must match the model "
                         f"{gen.config.height}x{gen.config.width}")
    dtype = np.float64 if gen.config.dtype == "f64" else np.float32
    out = gen(full[None].astype(dtype), mask[None].astype(dtype))
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    write_pnm(d / "coarse.ppm", image_to_ppm_pixels(out.coarse.value[0]))
    write_pnm(d / "refined.ppm", image_to_ppm_pixels(out.refined.value[0]))
    write_pnm(d / "composite.ppm", image_to_ppm_pixels(out.composite.value[0]))
    write_pnm(d / "layout.pgm", layout_to_pgm_levels(out.layout.value[0]))
    print(f"wrote coarse.ppm refined.ppm composite.ppm layout.pgm to {d}")
    return EXIT_OK


COMMANDS = {"gradcheck": cmd_gradcheck, "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command not in ("eval", "infer"):
            print(cfg.echo())
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"emptyroom {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyRoomError as exc:
        print(f"emptyroom {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
