"""Explicit posterior over HR images for a fixed LR image.

The degradation is average pooling, whose null space is exactly the set of images with
zero per-block mean, so every sample downsamples to the same LR image. All arrays here
are float64.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ScaleMismatchError, ShapeError
from .logger import DEFAULT_LOGGER as logging
from .model import ModelConfig, ModelParams
from .trainer import AdamState, adam_step, cosine_lr


def _blocks(img: np.ndarray, s: int, op: str) -> np.ndarray:
    h, w = img.shape[:2]
    if h % s or w % s:
        raise ShapeError(op, f"extents divisible by {s}", img.shape)
    return img.reshape(h // s, s, w // s, s, *img.shape[2:])


def avg_pool(y: np.ndarray, s: int) -> np.ndarray:
    return _blocks(np.asarray(y, dtype=np.float64), s, "avg_pool").mean(axis=(1, 3))


def nn_upsample(x: np.ndarray, s: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(np.repeat(x, s, axis=0), s, axis=1)


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Per-pixel mean absolute difference."""
    if a.shape != b.shape:
        raise ShapeError("l1_distance", a.shape, b.shape)
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - b)))


def hull_excursion(pred: np.ndarray, samples: np.ndarray) -> float:
    """Mean distance from ``pred`` to the per-pixel [min, max] range of ``samples``; zero inside it.

    For two samples the range is exactly the set of per-pixel L1 minimizers.
    """
    pred = np.asarray(pred, dtype=np.float64)
    lo, hi = samples.min(axis=0), samples.max(axis=0)
    if pred.shape != lo.shape:
        raise ShapeError("hull_excursion", lo.shape, pred.shape)
    return float(np.mean(np.maximum(lo - pred, 0) + np.maximum(pred - hi, 0)))


@dataclass
class PosteriorSample:
    x: np.ndarray
    samples: np.ndarray  # K x H x W x C
    mu_true: np.ndarray
    eps: np.ndarray
    scale: int

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    def eps_norms(self) -> np.ndarray:
        return np.mean(np.abs(self.eps.reshape(self.k, -1)), axis=1)

    @property
    def farthest(self) -> int:
        return int(np.argmax(self.eps_norms()))


def make_posterior(x: np.ndarray, k: int, noise_amp: float, rng: np.random.Generator,
                   scale: int = 2) -> PosteriorSample:
    if k < 1:
        raise ValueError(f"posterior needs at least one sample, got K={k}")
    x = np.asarray(x, dtype=np.float64)
    base = nn_upsample(x, scale)
    samples = np.empty((k,) + base.shape)
    for i in range(k):
        v = rng.uniform(-noise_amp, noise_amp, size=base.shape)
        v -= nn_upsample(avg_pool(v, scale), scale)
        samples[i] = base + v
    mu = samples.mean(axis=0)
    return PosteriorSample(x, samples, mu, samples - mu, scale)


def check_jensen(sample: PosteriorSample, c: np.ndarray) -> Tuple[float, float]:
    """(mean_i ||y_i - c||_1, ||mu_true - c||_1); the first never falls below the second."""
    if c.shape != sample.mu_true.shape:
        raise ShapeError("check_jensen", sample.mu_true.shape, c.shape)
    lhs = float(np.mean([l1_distance(y, c) for y in sample.samples]))
    return lhs, l1_distance(sample.mu_true, c)


def jensen_trials(sample: PosteriorSample, trials: int, rng: np.random.Generator,
                  spread: float = 0.5, slack: float = 1e-6) -> dict:
    violations, worst = 0, math.inf
    for _ in range(trials):
        c = sample.mu_true + rng.uniform(-spread, spread, size=sample.mu_true.shape)
        lhs, rhs = check_jensen(sample, c)
        worst = min(worst, lhs - rhs)
        if lhs < rhs - slack:
            violations += 1
    return {"trials": trials, "violations": violations, "min_gap": worst if trials else 0.0}


@dataclass
class PosteriorFitReport:
    distance_curve: List[Tuple[int, float]] = field(default_factory=list)
    initial_distance: float = 0.0
    final_distance: float = 0.0
    farthest_distance: float = 0.0
    initial_excursion: float = 0.0
    final_excursion: float = 0.0
    passed: bool = False

    def to_dict(self) -> dict:
        return {
            "distance_curve": [[s, d] for s, d in self.distance_curve],
            "initial_distance": self.initial_distance,
            "final_distance": self.final_distance,
            "farthest_distance": self.farthest_distance,
            "initial_excursion": self.initial_excursion,
            "final_excursion": self.final_excursion,
            "passed": self.passed,
        }


def posterior_training_check(sample: PosteriorSample, model_config: ModelConfig, steps: int,
                             seed: int = 0, lr: float = 5e-3, loss: str = "l1",
                             record_every: int = 10,
                             params: Optional[ModelParams] = None) -> PosteriorFitReport:
    """Fits a model on the single LR image with targets drawn uniformly from the samples."""
    if model_config.scale != sample.scale:
        raise ScaleMismatchError(sample.scale, model_config.scale, what="oracle model scale")
    if sample.x.ndim != 3 or sample.x.shape[2] != 3:
        raise ShapeError("posterior_training_check", "H x W x 3 LR image", sample.x.shape)
    params = (params or ModelParams.init(model_config, seed)).astype(np.float64)
    state = AdamState.zeros(params)
    rng = np.random.default_rng(seed)
    report = PosteriorFitReport()
    report.initial_excursion = hull_excursion(params.forward(sample.x), sample.samples)

    def record(step):
        report.distance_curve.append((step, l1_distance(params.forward(sample.x), sample.mu_true)))

    record(0)
    for step in range(steps):
        target = sample.samples[int(rng.integers(sample.k))]
        _, grads = params.loss_and_grad([sample.x], [target], loss)
        params, state = adam_step(params, grads, state, cosine_lr(step, steps, lr), step=step)
        if (step + 1) % record_every == 0 or step + 1 == steps:
            record(step + 1)

    pred = params.forward(sample.x)
    report.initial_distance = report.distance_curve[0][1]
    report.final_distance = report.distance_curve[-1][1]
    report.farthest_distance = l1_distance(pred, sample.samples[sample.farthest])
    report.final_excursion = hull_excursion(pred, sample.samples)
    if sample.eps_norms().max() > 0:
        report.passed = report.final_distance < report.farthest_distance
    else:
        report.passed = report.final_distance <= report.initial_distance
    logging.info(f"Posterior fit: |f(x) - mu| {report.initial_distance:.4f} -> {report.final_distance:.4f}, "
                 f"|f(x) - y_far| {report.farthest_distance:.4f}",
                 color="green" if report.passed else "yellow")
    return report


def oracle_report(k: int, trials: int, noise_amp: float = 0.2, seed: int = 0, lr_size: int = 8,
                  scale: int = 2, steps: int = 0, model_config: Optional[ModelConfig] = None) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.2, 0.8, size=(lr_size, lr_size, 3))
    sample = make_posterior(x, k, noise_amp, rng, scale)
    jensen = jensen_trials(sample, trials, rng)
    report = {
        "k": k,
        "noise_amp": noise_amp,
        "seed": seed,
        "jensen_trials": jensen["trials"],
        "violations": jensen["violations"],
        "min_jensen_gap": jensen["min_gap"],
        "mean_eps_norm": float(sample.eps_norms().mean()),
        "max_abs_eps_mean": float(np.abs(sample.eps.mean(axis=0)).max()),
        "training_distance_curve": [],
    }
    if steps > 0:
        config = model_config or ModelConfig(scale=scale, channels=16, n_blocks=1)
        fit = posterior_training_check(sample, config, steps, seed=seed)
        report["training_distance_curve"] = fit.to_dict()["distance_curve"]
        report["training_passed"] = fit.passed
    return report
