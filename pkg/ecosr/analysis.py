"""Metrics, landscape probing along the gradient ray, and spectral diagnostics."""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .logger import DEFAULT_LOGGER as logging
from .model import ModelParams
from .objectives import TrainingPair
from .resample import Image, rgb_to_y

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _plane(img: Image) -> np.ndarray:
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ShapeError("metric", "single-channel image", img.shape)
        img = img[:, :, 0]
    return img.astype(np.float64)


def crop_border(img: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return img
    return img[border:-border, border:-border]


# ----- Metrics ----

def psnr(a: Image, b: Image, border: int = 0) -> float:
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ShapeError("psnr", a.shape, b.shape)
    if 2 * border >= min(a.shape):
        raise ShapeError("psnr", f"border below half of {a.shape}", border)
    mse = np.mean(np.square(crop_border(a, border) - crop_border(b, border)))
    if mse == 0:
        return math.inf
    return 10 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _valid_filter(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = sliding_window_view(img, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim_map(a: Image, b: Image) -> np.ndarray:
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ShapeError("ssim", a.shape, b.shape)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError("ssim", f"extents >= {SSIM_WINDOW}", a.shape)
    window = gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _valid_filter(a, window), _valid_filter(b, window)
    var_a = _valid_filter(a * a, window) - mu_a * mu_a
    var_b = _valid_filter(b * b, window) - mu_b * mu_b
    cov = _valid_filter(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: Image, b: Image) -> float:
    return float(np.mean(ssim_map(a, b)))


def score_pair(sr: Image, hr: Image, border: int) -> Dict[str, float]:
    """PSNR/SSIM on the luminance of clamped RGB images with a shaved border."""
    sr_y = crop_border(rgb_to_y(np.clip(sr, 0, 1))[:, :, 0], border)
    hr_y = crop_border(rgb_to_y(hr)[:, :, 0], border)
    return {"psnr": psnr(sr_y, hr_y), "ssim": ssim(sr_y, hr_y)}


# ----- Landscape probe ----

@dataclass
class ProbeReport:
    step: int
    etas: List[float]
    losses_along_ray: List[float]
    grad_diffs: List[float]
    max_grad_diff: float
    baseline_loss: float
    baseline_grad_norm: float

    @property
    def loss_min(self) -> float:
        return min(self.losses_along_ray) if self.losses_along_ray else self.baseline_loss

    @property
    def loss_max(self) -> float:
        return max(self.losses_along_ray) if self.losses_along_ray else self.baseline_loss

    def rows(self) -> List[dict]:
        return [{"step": self.step, "eta": eta, "loss": loss, "grad_diff": diff}
                for eta, loss, diff in zip(self.etas, self.losses_along_ray, self.grad_diffs)]


def default_etas(lr: float, count: int = 8, low: float = 0.1, high: float = 10.0) -> List[float]:
    return [float(e) for e in np.geomspace(low * lr, high * lr, count)]


def grad_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def landscape_probe(params: ModelParams, pairs: Sequence[TrainingPair], etas: Sequence[float],
                    loss: str = "l1", step: int = 0) -> ProbeReport:
    """Loss and gradient change along theta - eta * g on one fixed batch.

    ``params`` is never modified; every displaced point is a fresh copy.
    """
    if any(e < 0 for e in etas) or list(etas) != sorted(etas):
        raise ValueError("probe etas must be non-negative and ascending")
    inputs = [p.input for p in pairs]
    targets = [p.target for p in pairs]
    base_loss, base_grad = params.loss_and_grad(inputs, targets, loss)
    losses, diffs = [], []
    for eta in etas:
        with np.errstate(all="ignore"):
            moved = params.displaced(base_grad, eta)
            value, grad = moved.loss_and_grad(inputs, targets, loss)
            finite = math.isfinite(value) and all(np.isfinite(g).all() for g in grad.values())
            diff = grad_norm({n: grad[n].astype(np.float64) - base_grad[n] for n in grad}) if finite else math.inf
        if not finite:
            logging.info(f"Probe step {step}: non-finite point at eta={eta:.3g}", color="yellow")
            value = math.inf
        losses.append(value)
        diffs.append(diff)
    return ProbeReport(step, list(etas), losses, diffs, max(diffs) if diffs else 0.0,
                       base_loss, grad_norm(base_grad))


# ----- Spectra ----

def dft2(img: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT of a single plane."""
    return np.fft.fft2(_plane(img) if img.ndim == 3 else img.astype(np.float64))


def idft2(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(spectrum)


def radial_profile(magnitude: np.ndarray) -> np.ndarray:
    """Mean magnitude per integer radius band around the centred DC bin.

    Radii beyond the last band (the spectrum corners) fold into the last band.
    """
    h, w = magnitude.shape
    bands = min(h, w) // 2
    if bands == 0:
        return np.zeros(0)
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.floor(np.hypot(yy - h // 2, xx - w // 2)).astype(int)
    r = np.minimum(r, bands - 1)
    sums = np.bincount(r.ravel(), weights=magnitude.ravel(), minlength=bands)
    counts = np.bincount(r.ravel(), minlength=bands)
    return sums / np.maximum(counts, 1)


def band_fraction(profile: np.ndarray, top: float = 0.25) -> float:
    total = float(np.sum(profile))
    if total == 0 or len(profile) == 0:
        return 0.0
    start = int(math.floor(len(profile) * (1 - top)))
    return float(np.sum(profile[start:])) / total


@dataclass
class SpectrumReport:
    magnitude: np.ndarray
    profile: np.ndarray
    gradient: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def top_quartile_fraction(self) -> float:
        return band_fraction(self.profile, 0.25)


def spectrum_of(plane: np.ndarray) -> SpectrumReport:
    magnitude = np.fft.fftshift(np.abs(dft2(plane)))
    return SpectrumReport(magnitude, radial_profile(magnitude), plane)


def target_gradient(pred: Image, target: Image, loss: str = "l1") -> np.ndarray:
    """dL/d(target) per pixel, averaged over channels to one plane."""
    diff = target.astype(np.float64) - pred.astype(np.float64)
    if loss == "l1":
        grad = np.sign(diff) / diff.size
    else:
        grad = 2 * diff / diff.size
    return grad.mean(axis=2) if grad.ndim == 3 else grad


def gradient_spectrum(params: ModelParams, pair: TrainingPair, loss: str = "l1") -> SpectrumReport:
    pred = params.forward(pair.input)
    return spectrum_of(target_gradient(pred, pair.target, loss))


# ----- Edges ----

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def sobel_magnitude(img: Image) -> np.ndarray:
    plane = img.astype(np.float64)
    if plane.ndim == 3:
        plane = plane.mean(axis=2)
    padded = np.pad(plane, 1, mode="edge")
    views = sliding_window_view(padded, (3, 3))
    gx = np.tensordot(views, SOBEL_X, axes=([2, 3], [0, 1]))
    gy = np.tensordot(views, SOBEL_X.T, axes=([2, 3], [0, 1]))
    return np.hypot(gx, gy)


def residual_edge_concentration(y_star: Image, mu_emp: Image, quantile: float = 0.8):
    """Mean |y* - mu| on the strongest Sobel edges of y* and on the rest."""
    residual = np.abs(y_star.astype(np.float64) - mu_emp.astype(np.float64))
    if residual.ndim == 3:
        residual = residual.mean(axis=2)
    edges = sobel_magnitude(y_star)
    mask = edges >= np.quantile(edges, quantile)
    if mask.all() or not mask.any():
        return float(residual.mean()), float(residual.mean())
    return float(residual[mask].mean()), float(residual[~mask].mean())


# ----- Run summaries ----

def _value(row: dict, key: str) -> Optional[float]:
    raw = row.get(key)
    if raw in (None, ""):
        return None
    return float(raw)


def psnr_at(rows: Sequence[dict], step: int) -> Optional[float]:
    """Validation PSNR of the last evaluated row at or before ``step``."""
    best = None
    for row in rows:
        if int(row["step"]) > step:
            break
        value = _value(row, "val_psnr")
        if value is not None:
            best = value
    return best


def probe_percentile(rows: Sequence[dict], upto: int, q: float = 95.0) -> Optional[float]:
    values = [_value(r, "probe_max_grad_diff") for r in rows if int(r["step"]) <= upto]
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.percentile(values, q))


def log_heatmap(magnitude: np.ndarray) -> np.ndarray:
    """log(1 + |X|) min-max normalized to [0, 1]."""
    logged = np.log1p(magnitude)
    lo, hi = float(logged.min()), float(logged.max())
    if hi <= lo:
        return np.zeros_like(logged)
    return (logged - lo) / (hi - lo)
