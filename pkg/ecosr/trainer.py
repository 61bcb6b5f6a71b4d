"""Adam training loop over ObjectiveMode pairs with periodic evaluation and probing."""
import asyncio
import csv
import io
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import PSNR_CAP, ProbeReport, default_etas, landscape_probe, score_pair
from .autodiff import LOSSES
from .errors import (ConfigError, MissingCentroidError, NonFiniteGradientError, NonFiniteLossError,
                     ScaleMismatchError)
from .logger import DEFAULT_LOGGER as logging
from .model import ModelParams
from .objectives import ObjectiveMode, TrainingPair, build_pair, decode_residual
from .pipeline import AlphaSchedule, BatchPrefetcher, BatchSampler, DatasetManifest, PatchTuple, alpha_at
from .storage import CentroidCache
from .utils import atomic_write

LR_SCHEDULES = ("cosine", "step")
CHECKPOINT = "model.ecot"
RUNLOG = "runlog.csv"


@dataclass
class TrainConfig:
    total_steps: int
    batch_size: int = 16
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: str = "cosine"
    lr_step_every: int = 0
    loss: str = "l1"
    objective: ObjectiveMode = ObjectiveMode.VANILLA
    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)
    seed: int = 0
    eval_every: int = 0
    probe_every: int = 0
    log_every: int = 0
    budget_fraction: float = 1.0
    lr_patch: int = 48
    augment: bool = True
    prefetch: int = 4
    probe_etas: Optional[List[float]] = None

    def __post_init__(self):
        self.objective = ObjectiveMode(self.objective)
        if isinstance(self.alpha, dict):
            self.alpha = AlphaSchedule(**self.alpha)
        if self.total_steps <= 0:
            raise ConfigError("train.total_steps", f"must be > 0, got {self.total_steps}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", f"must be >= 1, got {self.batch_size}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError("train.lr_schedule", f"expected one of {LR_SCHEDULES}")
        if self.loss not in LOSSES:
            raise ConfigError("train.loss", f"expected one of {sorted(LOSSES)}")
        if not 0 < self.budget_fraction <= 1:
            raise ConfigError("train.budget_fraction", "must lie in (0, 1]")

    @property
    def stop_step(self) -> int:
        return int(math.ceil(self.budget_fraction * self.total_steps))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["objective"] = self.objective.value
        return doc


# ----- Optimizer ----

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(OrderedDict((n, np.zeros_like(p)) for n, p in params.items()),
                   OrderedDict((n, np.zeros_like(p)) for n, p in params.items()))


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              step: Optional[int] = None) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state, inputs untouched."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(state.t if step is None else step, name)
    t = state.t + 1
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    m, v, updated = OrderedDict(), OrderedDict(), OrderedDict()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient {name} has shape {g.shape}, parameter {p.shape}")
        m[name] = (beta1 * state.m[name] + (1 - beta1) * g).astype(p.dtype)
        v[name] = (beta2 * state.v[name] + (1 - beta2) * g * g).astype(p.dtype)
        update = lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)
        updated[name] = (p - update).astype(p.dtype)
    return ModelParams(params.config, updated), AdamState(m, v, t)


def cosine_lr(step: int, total: int, lr0: float) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr0 * 0.5 * (1 + math.cos(math.pi * step / total))


def step_lr(step: int, lr0: float, every: int) -> float:
    return lr0 * 0.5 ** (step // every)


# ----- Run log ----

RUNLOG_COLUMNS = ("step", "alpha", "train_loss", "lr", "val_psnr", "val_ssim",
                  "probe_loss_min", "probe_loss_max", "probe_max_grad_diff")


def _cell(key: str, value) -> str:
    if value is None:
        return ""
    if key == "step":
        return str(int(value))
    value = float(value)
    if key == "val_psnr":
        value = min(value, PSNR_CAP)
    return repr(value)


class RunLog:
    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.rows: List[dict] = []

    def append(self, **row) -> dict:
        unknown = set(row) - set(RUNLOG_COLUMNS)
        if unknown:
            raise KeyError(f"unknown run log columns {sorted(unknown)}")
        if self.rows and int(row["step"]) <= int(self.rows[-1]["step"]):
            raise ValueError(f"run log steps must increase: {row['step']} after {self.rows[-1]['step']}")
        cells = {key: _cell(key, row.get(key)) for key in RUNLOG_COLUMNS}
        self.rows.append(cells)
        return cells

    def dumps(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=RUNLOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def write(self):
        if self.path is not None:
            atomic_write(self.path, self.dumps().encode())

    @classmethod
    def read(cls, path) -> "RunLog":
        log = cls(path)
        with open(path, newline="") as fd:
            log.rows = [dict(row) for row in csv.DictReader(fd)]
        return log

    def column(self, key: str) -> List[Optional[float]]:
        return [float(r[key]) if r[key] != "" else None for r in self.rows]


# ----- Evaluation ----

def evaluate(params: ModelParams, manifest: DatasetManifest, cache: Optional[CentroidCache] = None,
             residual: bool = False) -> dict:
    """Per-item and mean Y-channel PSNR/SSIM with a border of ``scale`` pixels ignored."""
    border = manifest.scale
    items = []
    for item_id in manifest.ids:
        sr = params.forward(manifest.lr(item_id))
        if residual:
            if cache is None:
                raise MissingCentroidError(item_id=item_id)
            sr = decode_residual(sr, cache.get(item_id))
        scores = score_pair(sr, manifest.hr(item_id), border)
        items.append({"id": item_id, **scores})
    if not items:
        return {"items": [], "psnr": math.nan, "ssim": math.nan}
    return {
        "items": items,
        "psnr": float(np.mean([r["psnr"] for r in items])),
        "ssim": float(np.mean([r["ssim"] for r in items])),
    }


# ----- Training loop ----

class Trainer:
    def __init__(self, config: TrainConfig, manifest: DatasetManifest, params: ModelParams,
                 cache: Optional[CentroidCache] = None, val_manifest: Optional[DatasetManifest] = None,
                 out_dir=None, extra_meta: Optional[dict] = None):
        mode = config.objective
        if mode.needs_centroids:
            if cache is None or not cache.exists():
                raise MissingCentroidError(cache_dir=cache.root if cache is not None else None)
            if cache.scale != manifest.scale:
                raise ScaleMismatchError(manifest.scale, cache.scale, what="centroid cache scale")
        if params.config.scale != manifest.scale:
            raise ScaleMismatchError(manifest.scale, params.config.scale, what="model scale")
        self.config = config
        self.manifest = manifest
        self.val_manifest = val_manifest
        self.params = params
        self.cache = cache if mode.needs_centroids else None
        self.state = AdamState.zeros(params)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.log = RunLog(self.out_dir / RUNLOG if self.out_dir else None)
        self.extra_meta = extra_meta or {}
        self.sampler = BatchSampler(manifest, config.batch_size, config.lr_patch, config.seed,
                                    cache=self.cache, use_augment=config.augment)
        self.etas = config.probe_etas or default_etas(config.lr0)
        self.checkpoint_hash: Optional[str] = None
        self.probes: List[ProbeReport] = []

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return self.out_dir / CHECKPOINT if self.out_dir else None

    def lr_at(self, step: int) -> float:
        cfg = self.config
        if cfg.lr_schedule == "step":
            return step_lr(step, cfg.lr0, cfg.lr_step_every or max(1, cfg.total_steps // 4))
        return cosine_lr(step, cfg.total_steps, cfg.lr0)

    def alpha_at(self, step: int) -> float:
        mode = self.config.objective
        if mode is ObjectiveMode.ECO:
            return alpha_at(self.config.alpha, step, self.config.total_steps)
        return 0.0 if mode is ObjectiveMode.KD else 1.0

    def pairs(self, batch: Sequence[PatchTuple], alpha: float) -> List[TrainingPair]:
        return [build_pair(self.config.objective, p.lr, p.hr, p.centroid, alpha, self.manifest.spec)
                for p in batch]

    def train_step(self, step: int, batch: Sequence[PatchTuple]) -> Tuple[float, List[TrainingPair]]:
        alpha = self.alpha_at(step)
        pairs = self.pairs(batch, alpha)
        loss, grads = self.params.loss_and_grad([p.input for p in pairs], [p.target for p in pairs],
                                                self.config.loss)
        if not math.isfinite(loss):
            raise NonFiniteLossError(step, loss)
        cfg = self.config
        self.params, self.state = adam_step(self.params, grads, self.state, self.lr_at(step),
                                            cfg.beta1, cfg.beta2, cfg.eps, step=step)
        return loss, pairs

    def _due(self, every: int, done: int) -> bool:
        return every > 0 and done % every == 0

    def save(self, done: int):
        if self.checkpoint_path is None:
            return
        meta = {"train": self.config.to_dict(), **self.extra_meta}
        self.checkpoint_hash = self.params.save(self.checkpoint_path, done, **meta)

    async def run(self) -> RunLog:
        cfg = self.config
        stop = cfg.stop_step
        logging.info(f"Training {cfg.objective.value} for {stop}/{cfg.total_steps} steps, "
                     f"batch {cfg.batch_size}, lr0 {cfg.lr0}, {cfg.loss} loss", color="cyan")
        if cfg.objective.uses_alpha:
            logging.info(f"Alpha schedule: {cfg.alpha.describe()}", color="cyan")
        try:
            async with BatchPrefetcher(self.sampler, 0, stop, depth=cfg.prefetch) as feed:
                for _ in range(stop):
                    step, batch = await feed.get()
                    lr = self.lr_at(step)
                    try:
                        loss, pairs = self.train_step(step, batch)
                    except (NonFiniteLossError, NonFiniteGradientError) as err:
                        logging.error(f"Aborting: {err}", color="red")
                        raise
                    self._record(step, step + 1, loss, lr, pairs)
                    await asyncio.sleep(0)
        except asyncio.CancelledError:
            logging.info(f"Training cancelled after {len(self.log.rows)} log rows", color="yellow")
            raise
        finally:
            self.log.write()
        return self.log

    def _record(self, step: int, done: int, loss: float, lr: float, pairs: List[TrainingPair]):
        cfg = self.config
        row = {}
        if self._due(cfg.probe_every, done):
            report = landscape_probe(self.params, pairs, self.etas, cfg.loss, step=done)
            self.probes.append(report)
            row.update(probe_loss_min=report.loss_min, probe_loss_max=report.loss_max,
                       probe_max_grad_diff=report.max_grad_diff)
        final = done == cfg.stop_step
        if self._due(cfg.eval_every, done) or final:
            if self.val_manifest is not None:
                scores = evaluate(self.params, self.val_manifest, self.cache,
                                  residual=cfg.objective is ObjectiveMode.RESIDUAL)
                row.update(val_psnr=scores["psnr"], val_ssim=scores["ssim"])
                logging.info(f"Step {done}: loss {loss:.5f}, val PSNR {scores['psnr']:.3f} dB, "
                             f"SSIM {scores['ssim']:.4f}", on="blue")
            self.save(done)
        if row or self._due(cfg.log_every, done) or final:
            self.log.append(step=done, alpha=self.alpha_at(step), train_loss=loss, lr=lr, **row)
            logging.debug(f"Step {done}: loss {loss:.6f}, lr {lr:.3g}")


def train(config: TrainConfig, manifest: DatasetManifest, params: ModelParams,
          cache: Optional[CentroidCache] = None, val_manifest: Optional[DatasetManifest] = None,
          out_dir=None) -> Tuple[ModelParams, RunLog]:
    """Blocking wrapper around :meth:`Trainer.run` for scripts and tests."""
    trainer = Trainer(config, manifest, params, cache, val_manifest, out_dir)
    log = asyncio.run(trainer.run())
    return trainer.params, log
