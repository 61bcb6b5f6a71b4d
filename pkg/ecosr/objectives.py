"""Training-pair construction for each objective mode.

ECO blends the target first and derives the input from it, so its pairs are spatially
consistent for every alpha. KD keeps the dataset input and therefore is not.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import MissingCentroidError, ShapeError
from .resample import Image, ResizeSpec, resize


class ObjectiveMode(str, Enum):
    VANILLA = "vanilla"
    KD = "kd"
    ECO = "eco"
    RESIDUAL = "residual"

    @property
    def needs_centroids(self) -> bool:
        return self is not ObjectiveMode.VANILLA

    @property
    def uses_alpha(self) -> bool:
        return self is ObjectiveMode.ECO


@dataclass
class TrainingPair:
    input: Image
    target: Image
    alpha: float
    mode: ObjectiveMode


def _check_scale(lr: Image, hr: Image, s: int, op: str):
    h, w = hr.shape[:2]
    if h % s or w % s:
        raise ShapeError(op, f"HR extents divisible by {s}", hr.shape)
    if lr.shape[:2] != (h // s, w // s):
        raise ShapeError(op, (h // s, w // s), lr.shape[:2])


def vanilla_pair(x: Image, y_star: Image, s: int) -> TrainingPair:
    _check_scale(x, y_star, s, "vanilla_pair")
    return TrainingPair(x, y_star, 1.0, ObjectiveMode.VANILLA)


def kd_pair(x: Image, mu_emp: Optional[Image], s: int) -> TrainingPair:
    if mu_emp is None:
        raise MissingCentroidError()
    _check_scale(x, mu_emp, s, "kd_pair")
    return TrainingPair(x, mu_emp, 0.0, ObjectiveMode.KD)


def blend(y_star: Image, mu_emp: Image, alpha: float) -> Image:
    if y_star.shape != mu_emp.shape:
        raise ShapeError("blend", y_star.shape, mu_emp.shape)
    if alpha == 0:
        return mu_emp.astype(np.float32, copy=True)
    if alpha == 1:
        return y_star.astype(np.float32, copy=True)
    return (mu_emp + np.float32(alpha) * (y_star - mu_emp)).astype(np.float32)


def eco_pair(y_star: Image, mu_emp: Optional[Image], alpha: float, spec: ResizeSpec) -> TrainingPair:
    if mu_emp is None:
        raise MissingCentroidError()
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    s = spec.factor
    h, w = y_star.shape[:2]
    if h % s or w % s:
        raise ShapeError("eco_pair", f"HR extents divisible by {s}", y_star.shape)
    target = blend(y_star, mu_emp, alpha)
    return TrainingPair(resize(target, spec), target, float(alpha), ObjectiveMode.ECO)


def encode_residual(y_star: Image, mu_emp: Image) -> Image:
    return (0.5 + (y_star - mu_emp) / 2).astype(np.float32)


def decode_residual(pred: Image, mu_emp: Image) -> Image:
    return (mu_emp + 2 * (pred - 0.5)).astype(np.float32)


def residual_pair(x: Image, y_star: Image, mu_emp: Optional[Image], s: int) -> TrainingPair:
    if mu_emp is None:
        raise MissingCentroidError()
    if y_star.shape != mu_emp.shape:
        raise ShapeError("residual_pair", y_star.shape, mu_emp.shape)
    _check_scale(x, y_star, s, "residual_pair")
    return TrainingPair(x, encode_residual(y_star, mu_emp), 1.0, ObjectiveMode.RESIDUAL)


def spatial_consistency_residual(pair: TrainingPair, spec: ResizeSpec) -> float:
    down = resize(pair.target, spec)
    return float(np.mean(np.abs(down.astype(np.float64) - pair.input.astype(np.float64))))


def build_pair(mode: ObjectiveMode, lr: Image, hr: Image, centroid: Optional[Image],
               alpha: float, spec: ResizeSpec) -> TrainingPair:
    s = spec.factor
    if mode is ObjectiveMode.VANILLA:
        return vanilla_pair(lr, hr, s)
    if mode is ObjectiveMode.KD:
        return kd_pair(lr, centroid, s)
    if mode is ObjectiveMode.ECO:
        return eco_pair(hr, centroid, alpha, spec)
    return residual_pair(lr, hr, centroid, s)
