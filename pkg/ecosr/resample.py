"""Antialiased bicubic resizing, luminance conversion and PNG I/O.

Images are ``H x W x C`` float32 arrays in [0, 1], row-major, channel-last.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np
from PIL import Image as PILImage

from .errors import ShapeError

Image = np.ndarray

Y_OFFSET = 16.0
Y_WEIGHTS = (65.481, 128.553, 24.966)


@dataclass(frozen=True)
class ResizeSpec:
    scale: Union[Fraction, float]
    antialias: bool = True
    kernel_a: float = -0.5

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def down(cls, s: int, antialias=True, kernel_a=-0.5) -> "ResizeSpec":
        return cls(Fraction(1, s), antialias=antialias, kernel_a=kernel_a)

    @property
    def factor(self) -> int:
        """Integer downscale factor s for a 1/s spec."""
        return int(round(1 / float(self.scale)))

    def to_dict(self) -> dict:
        return {"scale": str(Fraction(self.scale).limit_denominator(1000)),
                "antialias": self.antialias, "kernel_a": self.kernel_a}

    @classmethod
    def from_dict(cls, data: dict) -> "ResizeSpec":
        return cls(Fraction(data["scale"]), antialias=data.get("antialias", True),
                   kernel_a=data.get("kernel_a", -0.5))


def cubic_kernel(t, a: float = -0.5):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    out = np.where(t <= 1, near, np.where(t < 2, far, 0.0))
    return float(out) if out.ndim == 0 else out


def output_extent(n: int, scale) -> int:
    return int(math.floor(n * float(scale) + 0.5))


def resize_weights(n_in: int, n_out: int, spec: ResizeSpec) -> np.ndarray:
    """Dense (n_out, n_in) matrix of normalized taps with edge-clamped sources."""
    scale = float(spec.scale)
    stretch = scale if (scale < 1 and spec.antialias) else 1.0
    support = 2.0 / stretch
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for dst in range(n_out):
        center = (dst + 0.5) / scale - 0.5
        taps = np.arange(math.floor(center - support), math.ceil(center + support) + 1)
        w = cubic_kernel((center - taps) * stretch, spec.kernel_a)
        src = np.clip(taps, 0, n_in - 1)
        np.add.at(weights[dst], src, w)
        weights[dst] /= weights[dst].sum()
    return weights


def resize(img: Image, spec: ResizeSpec, clamp: bool = True) -> Image:
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    oh, ow = output_extent(h, spec.scale), output_extent(w, spec.scale)
    if oh < 1 or ow < 1:
        raise ShapeError("resize", "output extents >= 1", (oh, ow))
    rows = resize_weights(h, oh, spec)
    cols = resize_weights(w, ow, spec)
    data = img.astype(np.float64)
    out = np.einsum("oh,hwc->owc", rows, data)
    out = np.einsum("pw,owc->opc", cols, out)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def rgb_to_y(img: Image) -> Image:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError("rgb_to_y", "H x W x 3", img.shape)
    r, g, b = (img[:, :, i].astype(np.float64) for i in range(3))
    y = Y_OFFSET + Y_WEIGHTS[0] * r + Y_WEIGHTS[1] * g + Y_WEIGHTS[2] * b
    return (y / 255.0).astype(np.float32)[:, :, None]


def read_png(path) -> Image:
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        data = np.asarray(im, dtype=np.float32)
    return data / 255.0


def to_uint8(img: Image) -> np.ndarray:
    return np.clip(np.round(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img: Image):
    data = to_uint8(img)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path, format="PNG")
