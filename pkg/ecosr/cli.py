import argparse
import asyncio
import csv
import io
import sys
import traceback
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (PSNR_CAP, band_fraction, gradient_spectrum, landscape_probe, log_heatmap,
                       probe_percentile, psnr_at)
from .config import RESOLVED, ExperimentConfig, parse_assignment
from .errors import (ConfigError, DatasetError, EcoError, MissingCentroidError, NonFiniteGradientError,
                     NonFiniteLossError, OverwriteError, ScaleMismatchError, UsageError)
from .logger import DEFAULT_LOGGER as logging
from .messages import Message
from .model import ModelParams
from .objectives import ObjectiveMode, blend, build_pair
from .oracle import oracle_report
from .pipeline import (BatchSampler, DatasetManifest, generate_centroids, prepare_dataset,
                       synthesize_corpus)
from .resample import ResizeSpec, read_png, resize, write_png
from .storage import CentroidCache, write_ecot, write_json
from .trainer import CHECKPOINT, Trainer, evaluate
from .utils import OutputGuard, atomic_write, guarded_outputs, parse_list, sha256_file

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# argparse dest -> dotted config key; flags win over the config file
FLAG_KEYS = {
    "scale": "dataset.scale",
    "antialias": "dataset.antialias",
    "val_count": "dataset.val_count",
    "val_dir": "dataset.val_dir",
    "hr_dir": "dataset.hr_dir",
    "steps": "train.total_steps",
    "batch_size": "train.batch_size",
    "lr": "train.lr0",
    "loss": "train.loss",
    "eval_every": "train.eval_every",
    "probe_every": "train.probe_every",
    "budget_fraction": "train.budget_fraction",
    "objective": "objective.mode",
    "seed": "seed",
    "data": "paths.data_dir",
    "cache": "paths.cache_dir",
    "teacher": "paths.teacher",
    "out_dir": "paths.out_dir",
}


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def resolve_config(args, default_config: Optional[str] = None) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config or default_config)
    overrides = [parse_assignment(text) for text in args.set]
    overrides += [(key, getattr(args, dest)) for dest, key in FLAG_KEYS.items()
                  if getattr(args, dest, None) is not None]
    return config.apply(overrides)


def _refuse_existing(path: Path, force: bool):
    if path.exists() and not force:
        raise OverwriteError(path)


def record_config(config: ExperimentConfig, out, guard: OutputGuard, beside: bool = False) -> Path:
    """Writes the resolved config into the output directory ``out``; with ``beside``, ``out`` is a
    file and the config lands next to it as ``<stem>.config.json``."""
    out = Path(out)
    if not beside:
        return config.save(out)
    path = guard.track(out.with_name(f"{out.stem}.{RESOLVED}"))
    return config.save(out.parent, name=path.name)


def _write_csv(path: Path, columns: Sequence[str], rows: List[dict]):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode())


def load_data(config: ExperimentConfig) -> Tuple[DatasetManifest, Optional[DatasetManifest]]:
    manifest = DatasetManifest.load(config.paths.data_dir)
    if manifest.scale != config.dataset.scale:
        raise ScaleMismatchError(config.dataset.scale, manifest.scale, what="prepared dataset scale")
    if config.dataset.val_dir:
        return manifest, DatasetManifest.load(config.dataset.val_dir)
    if config.dataset.val_count <= 0:
        return manifest, None
    return manifest.split(config.dataset.val_count)


def open_cache(config: ExperimentConfig, required: bool) -> Optional[CentroidCache]:
    cache = CentroidCache(config.paths.cache_dir)
    if not cache.exists():
        if required:
            raise MissingCentroidError(cache_dir=cache.root)
        return None
    return cache


# ----- Training runs ----

async def run_training(config: ExperimentConfig, objective: str, out_dir, force: bool,
                       guard: OutputGuard) -> Trainer:
    out = Path(out_dir)
    _refuse_existing(out / CHECKPOINT, force)
    train_config = config.train_config(objective)
    cache = open_cache(config, required=train_config.objective.needs_centroids)
    train_set, val_set = load_data(config)
    guard.track(out)
    out.mkdir(parents=True, exist_ok=True)
    record_config(config.override("objective.mode", train_config.objective.value), out, guard)
    meta = {"teacher_hash": cache.checkpoint_hash} if train_config.objective.needs_centroids else {}
    params = ModelParams.init(config.model_config(), config.seed)
    trainer = Trainer(train_config, train_set, params, cache, val_set, out, extra_meta=meta)
    try:
        log = await trainer.run()
    except (NonFiniteLossError, NonFiniteGradientError, asyncio.CancelledError):
        guard.keep()
        raise
    last = log.rows[-1]
    psnr = float(last["val_psnr"]) if last["val_psnr"] else None
    logging.info(Message.run_summary(train_config.objective.value, int(last["step"]),
                                     float(last["train_loss"]), psnr, trainer.checkpoint_hash), color="green")
    return trainer


async def cmd_pretrain(args, config: ExperimentConfig, guard: OutputGuard):
    out = Path(args.out_dir) if args.out_dir else Path(config.paths.teacher).parent
    await run_training(config, ObjectiveMode.VANILLA.value, out, args.force, guard)


async def cmd_train(args, config: ExperimentConfig, guard: OutputGuard):
    await run_training(config, config.objective.mode, config.paths.out_dir, args.force, guard)


def _summarize(runs: List[dict], at_step: int, window: int) -> dict:
    groups = {}
    for run in runs:
        groups.setdefault(run["group"], []).append(run)
    aggregates = {}
    for group, members in groups.items():
        values = [m["psnr_at"] for m in members if m["psnr_at"] is not None]
        p95 = [m["probe_p95"] for m in members if m["probe_p95"] is not None]
        aggregates[group] = {
            "psnr_mean": float(np.mean(values)) if values else None,
            "psnr_std": float(np.std(values)) if values else None,
            "probe_p95_mean": float(np.mean(p95)) if p95 else None,
        }
    return {"at_step": at_step, "window": window, "runs": runs, "groups": aggregates}


async def _run_grid(config: ExperimentConfig, grid, out: Path, args, guard: OutputGuard) -> dict:
    summary_path = out / "summary.json"
    _refuse_existing(summary_path, args.force)
    at_step = args.at_step or config.train.total_steps
    window = args.window or config.train.total_steps
    runs = []
    for group, objective, seed, run_config, run_dir in grid:
        trainer = await run_training(run_config.override("seed", seed), objective, run_dir, args.force, guard)
        rows = trainer.log.rows
        runs.append({"group": group, "objective": objective, "seed": seed, "dir": str(run_dir),
                     "psnr_at": psnr_at(rows, at_step), "probe_p95": probe_percentile(rows, window, 95.0),
                     "checkpoint_hash": trainer.checkpoint_hash})
    summary = _summarize(runs, at_step, window)
    write_json(summary_path, summary)
    record_config(config, out, guard)
    logging.info(Message.comparison(summary), color="green")
    return summary


async def cmd_compare(args, config: ExperimentConfig, guard: OutputGuard):
    out = Path(config.paths.out_dir)
    grid = [(objective, objective, seed, config, out / objective / f"seed{seed}")
            for objective in parse_list(args.objectives, str) for seed in parse_list(args.seeds, int)]
    await _run_grid(config, grid, out, args, guard)


async def cmd_sweep_batch(args, config: ExperimentConfig, guard: OutputGuard):
    out = Path(config.paths.out_dir)
    grid = []
    for size in parse_list(args.sizes, int):
        sized = config.override("train.batch_size", size)
        for objective in parse_list(args.objectives, str):
            for seed in parse_list(args.seeds, int):
                grid.append((f"bs{size}/{objective}", objective, seed, sized,
                             out / f"bs{size}" / objective / f"seed{seed}"))
    await _run_grid(config, grid, out, args, guard)


# ----- Data ----

async def cmd_synth_data(args, config: ExperimentConfig, guard: OutputGuard):
    out = Path(args.out)
    if out.exists() and any(out.glob("*.png")) and not args.force:
        raise OverwriteError(out)
    guard.track(out)
    synthesize_corpus(out, count=args.count, size=args.size, seed=config.seed)
    record_config(config, out, guard)


async def cmd_prepare_data(args, config: ExperimentConfig, guard: OutputGuard):
    if not config.dataset.hr_dir:
        raise ConfigError("dataset.hr_dir", "pass --hr-dir or set it in the config")
    out = Path(config.paths.data_dir)
    guard.track(out)
    prepare_dataset(config.dataset.hr_dir, out, config.dataset.scale, config.resize_spec(), force=args.force)
    record_config(config, out, guard)


async def cmd_gen_centroids(args, config: ExperimentConfig, guard: OutputGuard):
    teacher = Path(config.paths.teacher)
    params, _ = ModelParams.load(teacher)
    manifest = DatasetManifest.load(config.paths.data_dir)
    cache = CentroidCache(config.paths.cache_dir)
    guard.track(cache.root)
    generate_centroids(manifest, params, cache, sha256_file(teacher), force=args.force)
    record_config(config, cache.root, guard)


# ----- Analysis ----

def _checkpoint_objective(meta: dict, requested: Optional[str]) -> ObjectiveMode:
    if requested:
        return ObjectiveMode(requested)
    return ObjectiveMode(meta.get("train", {}).get("objective", ObjectiveMode.VANILLA.value))


async def cmd_eval(args, config: ExperimentConfig, guard: OutputGuard):
    out = Path(args.out) if args.out else Path(config.paths.out_dir) / "eval.csv"
    _refuse_existing(out, args.force)
    params, meta = ModelParams.load(args.ckpt)
    manifest = DatasetManifest.load(args.val_dir or config.paths.data_dir)
    residual = _checkpoint_objective(meta, None) is ObjectiveMode.RESIDUAL
    scores = evaluate(params, manifest, open_cache(config, required=residual), residual=residual)
    logging.info(Message.eval_table(scores, title=f"eval {args.ckpt}"), on="blue")
    guard.track(out)
    rows = [{"id": r["id"], "psnr": repr(min(r["psnr"], PSNR_CAP)), "ssim": repr(r["ssim"])}
            for r in scores["items"]]
    rows.append({"id": "mean", "psnr": repr(min(scores["psnr"], PSNR_CAP)), "ssim": repr(scores["ssim"])})
    _write_csv(out, ("id", "psnr", "ssim"), rows)
    record_config(config, out, guard, beside=True)


async def cmd_probe(args, config: ExperimentConfig, guard: OutputGuard):
    params, meta = ModelParams.load(args.ckpt)
    mode = _checkpoint_objective(meta, args.objective)
    manifest = DatasetManifest.load(config.paths.data_dir)
    cache = open_cache(config, required=True) if mode.needs_centroids else None
    out = Path(args.out) if args.out else Path(config.paths.out_dir) / "probe.csv"
    _refuse_existing(out, args.force)
    sampler = BatchSampler(manifest, config.probe.batch_size, config.train.lr_patch, config.seed, cache=cache)
    batch = sampler.batch(args.step)
    pairs = [build_pair(mode, p.lr, p.hr, p.centroid, args.alpha, manifest.spec) for p in batch]
    report = landscape_probe(params, pairs, config.probe_etas(), config.train.loss, step=args.step)
    logging.info(Message.probe(report), on="blue")
    guard.track(out)
    _write_csv(out, ("step", "eta", "loss", "grad_diff"),
               [{k: repr(v) if isinstance(v, float) else v for k, v in row.items()} for row in report.rows()])
    record_config(config, out, guard, beside=True)


async def cmd_spectrum(args, config: ExperimentConfig, guard: OutputGuard):
    params, meta = ModelParams.load(args.ckpt)
    mode = ObjectiveMode(args.objective)
    manifest = DatasetManifest.load(config.paths.data_dir)
    cache = open_cache(config, required=True) if mode.needs_centroids else None
    images = manifest.images(args.item, cache)
    pair = build_pair(mode, images.lr, images.hr, images.centroid, args.alpha, manifest.spec)
    report = gradient_spectrum(params, pair, config.train.loss)
    out = Path(args.out) if args.out else Path(config.paths.out_dir) / f"spectrum_{args.item}_{mode.value}"
    _refuse_existing(out, args.force)
    guard.track(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "profile.csv", ("band", "magnitude"),
               [{"band": i, "magnitude": repr(float(v))} for i, v in enumerate(report.profile)])
    write_ecot(out / "magnitude.ecot", report.magnitude.astype(np.float32)[:, :, None])
    write_png(out / "magnitude.png", log_heatmap(report.magnitude))
    record_config(config, out, guard)
    logging.info(Message.spectrum(args.item, args.alpha, band_fraction(report.profile)), on="blue")


async def cmd_target_dump(args, config: ExperimentConfig, guard: OutputGuard):
    manifest = DatasetManifest.load(config.paths.data_dir)
    cache = open_cache(config, required=True)
    hr, mu = manifest.hr(args.item), cache.get(args.item)
    alphas = parse_list(args.alphas, float)
    out = Path(args.out) if args.out else Path(config.paths.out_dir) / f"targets_{args.item}.png"
    _refuse_existing(out, args.force)
    gap = np.ones((hr.shape[0], 2, 3), dtype=np.float32)
    tiles = []
    for alpha in alphas:
        tiles += [np.clip(blend(hr, mu, alpha), 0, 1), gap]
    guard.track(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(out, np.concatenate(tiles[:-1], axis=1))
    record_config(config, out, guard, beside=True)
    logging.info(f"Wrote {len(alphas)} blended targets for {args.item} to {out}", color="green")


async def cmd_oracle_check(args, config: ExperimentConfig, guard: OutputGuard):
    report = oracle_report(args.k, args.trials, noise_amp=args.noise_amp, seed=config.seed,
                           scale=config.dataset.scale, steps=args.fit_steps, model_config=config.model_config())
    logging.info(Message.oracle(report), color="green" if report["violations"] == 0 else "red")
    if args.out:
        out = Path(args.out)
        _refuse_existing(out, args.force)
        guard.track(out)
        write_json(out, report)
        record_config(config, out, guard, beside=True)


async def cmd_resize(args, config: ExperimentConfig, guard: OutputGuard):
    try:
        ratio = Fraction(args.ratio)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"invalid scale {args.ratio!r}")
    if ratio <= 0:
        raise UsageError(f"scale must be positive, got {args.ratio}")
    src = Path(args.input)
    if not src.exists():
        raise DatasetError(src, "input image not found")
    out = Path(args.out)
    _refuse_existing(out, args.force)
    img = resize(read_png(src), ResizeSpec(ratio, antialias=args.resize_antialias))
    guard.track(out)
    write_png(out, img)
    logging.info(f"Resized {src} by {ratio} to {img.shape[1]}x{img.shape[0]}: {out}", color="green")


# ----- Parser ----

def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (default: $ECOSR_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. train.lr0=2e-4")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--seed", type=int)

    data = ArgumentParser(add_help=False)
    data.add_argument("--data", help="prepared dataset directory")
    data.add_argument("--cache", help="centroid cache directory")

    run = ArgumentParser(add_help=False)
    run.add_argument("--steps", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--loss", choices=["l1", "l2"])
    run.add_argument("--eval-every", type=int)
    run.add_argument("--probe-every", type=int)
    run.add_argument("--budget-fraction", type=float)
    run.add_argument("--val-count", type=int)
    run.add_argument("--val-dir")
    run.add_argument("--out-dir")

    sweep = ArgumentParser(add_help=False)
    sweep.add_argument("--seeds", default="0")
    sweep.add_argument("--at-step", type=int, help="step at which validation PSNR is compared")
    sweep.add_argument("--window", type=int, help="early window for the probe percentile")

    parser = ArgumentParser(prog="ecosr", description="Empirical-centroid super-resolution training lab")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name, handler, parents, help):
        p = sub.add_parser(name, parents=parents, help=help)
        p.set_defaults(handler=handler)
        return p

    p = command("synth-data", cmd_synth_data, [common], "write a procedural toy HR corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--size", type=int, default=96)

    p = command("prepare-data", cmd_prepare_data, [common, data], "crop HR images and write LR counterparts")
    p.add_argument("--hr-dir")
    p.add_argument("--scale", type=int)
    p.add_argument("--antialias", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--out", dest="data")

    command("pretrain", cmd_pretrain, [common, data, run], "train the teacher network with the vanilla objective")

    p = command("gen-centroids", cmd_gen_centroids, [common, data], "cache teacher outputs for every item")
    p.add_argument("--teacher", help="teacher checkpoint")

    p = command("train", cmd_train, [common, data, run], "train with a given objective")
    p.add_argument("--objective", choices=[m.value for m in ObjectiveMode])

    p = command("eval", cmd_eval, [common, data], "PSNR/SSIM on the Y channel")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--val-dir")
    p.add_argument("--out", help="CSV output")

    p = command("probe", cmd_probe, [common, data], "loss/gradient change along the gradient ray")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--objective", choices=[m.value for m in ObjectiveMode])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--step", type=int, default=0, help="batch index to probe on")
    p.add_argument("--out")

    p = command("spectrum", cmd_spectrum, [common, data], "spectrum of the loss gradient w.r.t. the target")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--objective", choices=[m.value for m in ObjectiveMode], default=ObjectiveMode.ECO.value)
    p.add_argument("--out")

    p = command("sweep-batch", cmd_sweep_batch, [common, data, run, sweep], "runs per batch size and seed")
    p.add_argument("--sizes", default="2,4,8,16")
    p.add_argument("--objectives", default="vanilla,eco")

    p = command("compare", cmd_compare, [common, data, run, sweep], "runs per objective and seed")
    p.add_argument("--objectives", default="vanilla,kd,eco")

    p = command("target-dump", cmd_target_dump, [common, data], "strip of blended targets for one item")
    p.add_argument("--item", required=True)
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--out")

    p = command("oracle-check", cmd_oracle_check, [common], "Jensen and centroid checks on an explicit posterior")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--noise-amp", type=float, default=0.2)
    p.add_argument("--steps", dest="fit_steps", type=int, default=0,
                   help="posterior fitting steps (0 skips fitting)")
    p.add_argument("--out")

    p = command("resize", cmd_resize, [common], "bicubic resampler")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", dest="ratio", required=True, help="ratio such as 1/2, 0.5 or 2")
    p.add_argument("--antialias", dest="resize_antialias", action=argparse.BooleanOptionalAction, default=False)
    return parser


async def run(argv: Sequence[str], default_config: Optional[str] = None) -> int:
    try:
        args = build_parser().parse_args(list(argv))
        config = resolve_config(args, default_config)
    except (UsageError, ConfigError) as err:
        logging.error(str(err))
        return EXIT_USAGE

    try:
        with guarded_outputs() as guard:
            await args.handler(args, config, guard)
    except (UsageError, ConfigError) as err:
        logging.error(str(err))
        return EXIT_USAGE
    except EcoError as err:
        logging.error(str(err))
        return EXIT_RUNTIME
    except Exception as err:
        logging.error(f"{args.command} failed: {err}")
        logging.debug(traceback.format_exc())
        return EXIT_RUNTIME
    return EXIT_OK
