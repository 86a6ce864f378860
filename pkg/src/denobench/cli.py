"""Command-line front end: experiment grid, single-image denoise, phantom
generation, and summary-table rendering.

Exit codes: 0 success, 1 configuration or input error, 2 partial grid
failure (some cells trained, some raised).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (ImageSample, NoiseConfig, add_gaussian_noise, decode_image,
                   generate_phantoms, load_images, resize_bilinear, split_dataset,
                   write_image_png)
from .metrics import aggregate
from .models import ARCHITECTURES, ModelGraph, build_model, param_count, forward
from .reporting import (SummaryRow, read_summary_csv, render_summary_markdown,
                        summary_row, write_history_csv, write_per_image_csv,
                        write_summary_csv)
from .tensor import ShapeError, Tensor
from .training import (ArchitectureMismatchError, CheckpointError, TrainConfig,
                       TrainingDivergedError, evaluate, load_checkpoint,
                       restore_weights, save_checkpoint, train)

__all__ = ["ExperimentConfig", "ConfigError", "run_experiment", "main",
           "DISPLAY_NAMES", "NOISY_METHOD"]

log = logging.getLogger(__name__)

DISPLAY_NAMES = {"cnn_dae": "CNN-DAE", "cadtra": "CADTra", "dcmiednet": "DCMIEDNet"}
NOISY_METHOD = "Noisy"

DESK_PRESET = {"image_size": 64, "width_scale": 0.25, "phantoms": 200, "max_epochs": 10}

ENV_OUT = "DENOBENCH_OUT"


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 1)."""


@dataclasses.dataclass
class ExperimentConfig:
    """Full grid description. Exactly one data source must be set."""

    data_dir: str | None = None
    phantoms: int | None = None
    image_size: int = 224
    sigmas: tuple[int, ...] = (10, 15, 25)
    architectures: tuple[str, ...] = ARCHITECTURES
    max_epochs: int = 100
    batch_size: int = 5
    learning_rate: float = 0.001
    patience: int = 5
    seed: int = 42
    width_scale: float = 1.0
    out_dir: str = "results"
    strict: bool = False
    jobs: int = 1

    def validate(self) -> None:
        if (self.data_dir is None) == (self.phantoms is None):
            raise ConfigError("exactly one data source required: data_dir or phantoms")
        if self.phantoms is not None and self.phantoms < 10:
            raise ConfigError(f"phantom count must be >= 10, got {self.phantoms}")
        if self.image_size % 4 != 0 or self.image_size < 16:
            raise ConfigError(
                f"image_size must be >= 16 and divisible by 4, got {self.image_size}")
        if not self.sigmas:
            raise ConfigError("sigma list must be non-empty")
        for s in self.sigmas:
            if not isinstance(s, int) or s <= 0:
                raise ConfigError(f"sigmas must be positive integers, got {s!r}")
        if not self.architectures:
            raise ConfigError("architecture list must be non-empty")
        for arch in self.architectures:
            if arch not in ARCHITECTURES:
                raise ConfigError(
                    f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(max_epochs=self.max_epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, patience=self.patience,
                           seed=self.seed if seed is None else seed,
                           width_scale=self.width_scale)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config_json(path) -> dict:
    """Read a config file; unknown keys are rejected rather than ignored."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("sigmas", "architectures"):
        if key in raw:
            if not isinstance(raw[key], list):
                raise ConfigError(f"config key {key} must be a list")
            raw[key] = tuple(raw[key])
    return raw


def _load_corpus(cfg: ExperimentConfig) -> list[ImageSample]:
    if cfg.data_dir is not None:
        return load_images(cfg.data_dir, cfg.image_size)
    return generate_phantoms(cfg.phantoms, cfg.image_size, cfg.seed)


def _pairs_for(samples: list[ImageSample], ids, sigma: int, cfg: ExperimentConfig) -> list:
    by_id = {s.id: s for s in samples}
    noise = NoiseConfig(sigma_raw=sigma, clip=True, seed=cfg.seed)
    return [add_gaussian_noise(by_id[i], noise) for i in ids]


def _cell_seeds(cfg: ExperimentConfig, arch: str, sigma: int) -> tuple[int, int]:
    """Independent init/shuffle seeds per grid cell, derived from the run seed."""
    arch_index = ARCHITECTURES.index(arch)
    state = np.random.SeedSequence([cfg.seed, arch_index, int(sigma)]).generate_state(
        2, dtype=np.uint64)
    return int(state[0]), int(state[1])


@dataclasses.dataclass
class CellResult:
    arch: str
    sigma: int
    psnr_stats: object
    ssim_stats: object
    best_epoch: int
    epochs_run: int


def _run_cell(cfg: ExperimentConfig, arch: str, sigma: int) -> CellResult:
    """Train and evaluate one (architecture, sigma) grid cell, writing its files."""
    limiter = threadpool_limits(limits=1) if cfg.strict else nullcontext()
    with limiter:
        samples = _load_corpus(cfg)
        split = split_dataset([s.id for s in samples], seed=cfg.seed)
        train_pairs = _pairs_for(samples, split.train, sigma, cfg)
        val_pairs = _pairs_for(samples, split.val, sigma, cfg)
        test_pairs = _pairs_for(samples, split.test, sigma, cfg)

        init_seed, train_seed = _cell_seeds(cfg, arch, sigma)
        model = build_model(arch, cfg.width_scale, seed=init_seed)
        total, _ = param_count(model)
        log.info("cell %s sigma=%d: %d parameters", arch, sigma, total)

        snapshot, history = train(model, train_pairs, val_pairs,
                                  cfg.train_config(seed=train_seed))
        for name, tensor in model.params.items():
            tensor.data = snapshot[name].copy()
        report = evaluate(model, test_pairs, sigma_raw=sigma)

        out = Path(cfg.out_dir)
        stem = f"{arch}_sigma{sigma}"
        save_checkpoint(model, out / f"{stem}.ckpt")
        write_history_csv(out / f"{stem}_history.csv", history)
        write_per_image_csv(out / f"{stem}_per_image.csv", report)
        return CellResult(arch=arch, sigma=sigma, psnr_stats=report.psnr_stats,
                          ssim_stats=report.ssim_stats, best_epoch=history.best_epoch,
                          epochs_run=len(history.epochs))


def _noisy_baseline_rows(cfg: ExperimentConfig) -> list[SummaryRow]:
    """Noisy-input metrics per sigma over the test split (model-independent)."""
    from .metrics import psnr, ssim  # local to keep module import light

    samples = _load_corpus(cfg)
    split = split_dataset([s.id for s in samples], seed=cfg.seed)
    rows = []
    for sigma in cfg.sigmas:
        pairs = _pairs_for(samples, split.test, sigma, cfg)
        ps = aggregate([psnr(p.clean, p.noisy) for p in pairs])
        ss = aggregate([ssim(p.clean, p.noisy) for p in pairs])
        rows.append(summary_row(sigma, NOISY_METHOD, ps, ss))
    return rows


def run_experiment(cfg: ExperimentConfig) -> int:
    """Execute the grid; write checkpoints, per-cell CSVs, and the summary."""
    cfg.validate()
    if cfg.data_dir is not None and not Path(cfg.data_dir).is_dir():
        raise ConfigError(f"data directory not found: {cfg.data_dir}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = [(arch, sigma) for sigma in cfg.sigmas for arch in cfg.architectures]
    results: list[CellResult] = []
    failures: list[tuple[str, int, str]] = []

    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {pool.submit(_run_cell, cfg, arch, sigma): (arch, sigma)
                       for arch, sigma in cells}
            for future, (arch, sigma) in futures.items():
                try:
                    results.append(future.result())
                except Exception as exc:  # cell isolation: grid continues
                    failures.append((arch, sigma, f"{type(exc).__name__}: {exc}"))
    else:
        for arch, sigma in cells:
            try:
                results.append(_run_cell(cfg, arch, sigma))
            except Exception as exc:
                failures.append((arch, sigma, f"{type(exc).__name__}: {exc}"))

    limiter = threadpool_limits(limits=1) if cfg.strict else nullcontext()
    with limiter:
        rows = _noisy_baseline_rows(cfg)
    for res in results:
        rows.append(summary_row(res.sigma, DISPLAY_NAMES[res.arch],
                                res.psnr_stats, res.ssim_stats))
    write_summary_csv(out / "summary.csv", rows)
    (out / "summary.md").write_text(render_summary_markdown(rows), encoding="utf-8")

    for arch, sigma, message in failures:
        print(f"FAILED {arch} sigma={sigma}: {message}", file=sys.stderr)
    print(f"wrote {out / 'summary.csv'} ({len(results)}/{len(cells)} cells trained)")
    return 2 if failures else 0


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_run(args) -> int:
    values: dict = {}
    if args.config:
        values.update(load_config_json(args.config))
    if args.preset == "desk":
        values.update(DESK_PRESET)
        values.setdefault("data_dir", None)  # preset supplies phantoms
        if values.get("data_dir") is not None:
            values["phantoms"] = None
    flag_map = {
        "data_dir": args.data_dir, "phantoms": args.phantoms, "image_size": args.size,
        "width_scale": args.width_scale, "seed": args.seed, "out_dir": args.out,
        "max_epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr, "patience": args.patience, "jobs": args.jobs,
    }
    for key, value in flag_map.items():
        if value is not None:
            values[key] = value
    if args.sigmas is not None:
        values["sigmas"] = tuple(args.sigmas)
    if args.archs is not None:
        values["architectures"] = tuple(args.archs)
    if args.strict:
        values["strict"] = True
    if args.data_dir is not None:
        values["phantoms"] = None
    if args.phantoms is not None:
        values["data_dir"] = None
    if values.get("out_dir") is None or "out_dir" not in values:
        values["out_dir"] = os.environ.get(ENV_OUT, "results")

    unknown = set(values) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**values)
    return run_experiment(cfg)


def _cmd_denoise(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = build_model(ckpt.arch_id, ckpt.width_scale, seed=0)
    restore_weights(model, ckpt)
    image = decode_image(Path(args.input))
    if args.size is not None:
        image = resize_bilinear(image, args.size, args.size)
    batch = Tensor(image[None, None])
    out = forward(model, batch, mode="eval")
    write_image_png(args.output, np.clip(out.data[0, 0], 0.0, 1.0))
    print(f"wrote {args.output}")
    return 0


def _cmd_gen_phantoms(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_phantoms(args.count, args.size, args.seed)
    for sample in samples:
        write_image_png(out / f"{sample.id}.png", sample.pixels)
    print(f"wrote {len(samples)} phantoms to {out}")
    return 0


def _reference_csv_path():
    return resources.files("denobench") / "reference" / "reference_summary.csv"


def _cmd_report(args) -> int:
    if args.input is not None:
        rows = read_summary_csv(args.input)
    else:
        with resources.as_file(_reference_csv_path()) as path:
            rows = read_summary_csv(path)
    text = render_summary_markdown(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [part for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="denobench",
        description="Benchmark suite for convolutional grayscale denoisers "
                    "(CNN-DAE, CADTra, DCMIEDNet).")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate the architecture x sigma grid")
    run.add_argument("--config", help="JSON config file (ExperimentConfig fields)")
    run.add_argument("--preset", choices=["desk"],
                     help="desk = 200 phantoms, 64px, width 1/4, 10 epochs")
    run.add_argument("--data-dir", help="directory of PNG/PGM images")
    run.add_argument("--phantoms", type=int, help="generate N synthetic phantoms instead")
    run.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./results)")
    run.add_argument("--seed", type=int, help="experiment seed (default 42)")
    run.add_argument("--size", type=int, help="image size (default 224)")
    run.add_argument("--width-scale", type=float, help="channel width multiplier in (0,1]")
    run.add_argument("--sigmas", type=_int_list, help="comma-separated sigma list")
    run.add_argument("--archs", type=_str_list,
                     help=f"comma-separated subset of {','.join(ARCHITECTURES)}")
    run.add_argument("--epochs", type=int, help="max epochs (default 100)")
    run.add_argument("--batch-size", type=int, help="mini-batch size (default 5)")
    run.add_argument("--lr", type=float, help="learning rate (default 0.001)")
    run.add_argument("--patience", type=int, help="early-stopping patience (default 5)")
    run.add_argument("--strict", action="store_true",
                     help="single-threaded BLAS for bit-reproducible runs")
    run.add_argument("--jobs", type=int, help="parallel grid cells (default 1)")
    run.set_defaults(func=_cmd_run)

    den = sub.add_parser("denoise", help="run a checkpoint on one image")
    den.add_argument("checkpoint", help="path to a .ckpt file")
    den.add_argument("input", help="input PNG/PGM image")
    den.add_argument("output", help="output PNG path")
    den.add_argument("--size", type=int, help="resize input before denoising")
    den.set_defaults(func=_cmd_denoise)

    gen = sub.add_parser("gen-phantoms", help="write a synthetic phantom corpus as PNGs")
    gen.add_argument("--count", type=int, default=200)
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=_cmd_gen_phantoms)

    rep = sub.add_parser("report", help="render a summary CSV as Markdown")
    rep.add_argument("--input", help="summary CSV (default: bundled reference values)")
    rep.add_argument("--out", help="write Markdown here instead of stdout")
    rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ArchitectureMismatchError, ShapeError,
            TrainingDivergedError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
