import asyncio
import math
import os
import queue
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import janus
import numpy as np
from cachetools import LRUCache

from .errors import (DatasetError, ImageTooSmallError, MissingCentroidError, OverwriteError,
                     ScaleMismatchError, ShapeError)
from .logger import DEFAULT_LOGGER as logging
from .model import ModelParams
from .resample import Image, ResizeSpec, read_png, resize, write_png
from .storage import CentroidCache, PersistentDict, read_ecot, read_json, write_ecot
from .utils import rng_for

MANIFEST = "manifest.json"


# ----- Dataset manifest ----

@dataclass
class ManifestItem:
    id: str
    hr_path: str
    lr_path: str
    lr_raw_path: Optional[str] = None
    centroid_path: Optional[str] = None


@dataclass
class ItemImages:
    id: str
    hr: Image
    lr: Image
    centroid: Optional[Image] = None


class DatasetManifest:
    def __init__(self, root, items: List[ManifestItem], scale: int, spec: ResizeSpec):
        self.root = Path(root)
        self.items = items
        self.scale = scale
        self.spec = spec
        self._images = LRUCache(maxsize=256)
        self._lock = threading.Lock()  # the prefetch thread reads through the same cache

    @property
    def ids(self) -> List[str]:
        return [item.id for item in self.items]

    def item(self, item_id: str) -> ManifestItem:
        for item in self.items:
            if item.id == item_id:
                return item
        raise DatasetError(self.root, f"unknown item {item_id}")

    def _read(self, rel: str) -> Image:
        with self._lock:
            if rel in self._images:
                return self._images[rel]
        path = self.root / rel
        try:
            arr = read_ecot(path) if path.suffix == ".ecot" else read_png(path)
        except OSError as err:
            raise DatasetError(path, f"unreadable image ({err})")
        arr.setflags(write=False)
        with self._lock:
            self._images[rel] = arr
        return arr

    def hr(self, item_id: str) -> Image:
        return self._read(self.item(item_id).hr_path)

    def lr(self, item_id: str) -> Image:
        item = self.item(item_id)
        return self._read(item.lr_raw_path or item.lr_path)

    def images(self, item_id: str, cache: Optional[CentroidCache] = None) -> ItemImages:
        centroid = cache.get(item_id) if cache is not None else None
        return ItemImages(item_id, self.hr(item_id), self.lr(item_id), centroid)

    def subset(self, ids: List[str]) -> "DatasetManifest":
        """View over some items of the same root, sharing the decoded-image cache."""
        view = DatasetManifest(self.root, [self.item(i) for i in ids], self.scale, self.spec)
        view._images, view._lock = self._images, self._lock
        return view

    def split(self, n_val: int) -> Tuple["DatasetManifest", "DatasetManifest"]:
        """Last ``n_val`` items (in manifest order) are held out for validation."""
        if not 0 < n_val < len(self.items):
            raise DatasetError(self.root, f"cannot hold out {n_val} of {len(self.items)} items")
        ids = self.ids
        return self.subset(ids[:-n_val]), self.subset(ids[-n_val:])

    def check(self):
        """Structure-only checks run on every load: ids, scale and referenced files."""
        if not isinstance(self.scale, int) or self.scale < 1:
            raise DatasetError(self.root, f"invalid scale {self.scale!r}")
        if self.spec.factor != self.scale:
            raise ScaleMismatchError(self.scale, self.spec.factor, what="manifest resize spec")
        seen = set()
        for item in self.items:
            if item.id in seen:
                raise DatasetError(self.root, f"duplicate item {item.id}")
            seen.add(item.id)
            for rel in (item.hr_path, item.lr_path, item.lr_raw_path):
                if rel is not None and not (self.root / rel).exists():
                    raise DatasetError(self.root / rel, f"missing file for item {item.id}")

    def validate(self):
        """Decodes every item and checks HR is exactly ``scale`` times LR."""
        self.check()
        s = self.scale
        for item in self.items:
            hr, lr = self.hr(item.id), self.lr(item.id)
            if hr.shape[0] != s * lr.shape[0] or hr.shape[1] != s * lr.shape[1]:
                raise ShapeError(f"manifest item {item.id}", (hr.shape[0] // s, hr.shape[1] // s), lr.shape)

    def save(self):
        with PersistentDict(self.root / MANIFEST) as doc:
            doc["scale"] = self.scale
            doc["spec"] = self.spec.to_dict()
            doc["items"] = [asdict(item) for item in self.items]

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST
        if not path.exists():
            raise DatasetError(root, f"no {MANIFEST}; run `prepare-data` first")
        doc = read_json(path)
        try:
            items = [ManifestItem(**item) for item in doc["items"]]
            manifest = cls(root, items, doc["scale"], ResizeSpec.from_dict(doc["spec"]))
        except (KeyError, TypeError, ValueError) as err:
            raise DatasetError(path, f"malformed manifest ({err!r})")
        manifest.check()
        return manifest


def prepare_dataset(hr_dir, out_dir, scale: int, spec: Optional[ResizeSpec] = None,
                    force: bool = False) -> DatasetManifest:
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    spec = spec or ResizeSpec.down(scale)
    if spec.factor != scale:
        raise ScaleMismatchError(scale, spec.factor, what="resize spec")
    sources = sorted(hr_dir.glob("*.png")) if hr_dir.is_dir() else []
    if not sources:
        raise DatasetError(hr_dir, "no PNG images found")
    if (out_dir / MANIFEST).exists() and not force:
        raise OverwriteError(out_dir / MANIFEST)
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    (out_dir / "lr").mkdir(parents=True, exist_ok=True)

    items = []
    for src in sources:
        try:
            hr = read_png(src)
        except OSError as err:
            raise DatasetError(src, f"unreadable image ({err})")
        h, w = hr.shape[0] - hr.shape[0] % scale, hr.shape[1] - hr.shape[1] % scale
        if h < scale or w < scale:
            raise ImageTooSmallError(src.stem, hr.shape[:2], scale)
        hr = hr[:h, :w]
        lr = resize(hr, spec)
        item = ManifestItem(src.stem, f"hr/{src.stem}.png", f"lr/{src.stem}.png", f"lr/{src.stem}.ecot")
        write_png(out_dir / item.hr_path, hr)
        write_png(out_dir / item.lr_path, lr)
        write_ecot(out_dir / item.lr_raw_path, lr)
        items.append(item)
        logging.debug(f"Prepared {src.stem}: HR {h}x{w}, LR {lr.shape[0]}x{lr.shape[1]}")

    manifest = DatasetManifest(out_dir, items, scale, spec)
    manifest.save()
    logging.info(f"Prepared {len(items)} items at x{scale} in {out_dir}", color="green")
    return manifest


def synthesize_corpus(out_dir, count: int = 32, size: int = 96, seed: int = 0) -> List[Path]:
    """Procedural RGB images mixing smooth ramps, oriented stripes, discs and grain."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    paths = []
    for i in range(count):
        rng = rng_for(seed, i)
        img = np.empty((size, size, 3))
        for c in range(3):
            gx, gy = rng.uniform(-0.5, 0.5, size=2)
            img[:, :, c] = rng.uniform(0.3, 0.7) + gx * (xx - 0.5) + gy * (yy - 0.5)
        for _ in range(rng.integers(1, 4)):
            theta = rng.uniform(0, math.pi)
            freq = rng.uniform(3, 0.35 * size)
            phase = xx * math.cos(theta) + yy * math.sin(theta)
            amp = rng.uniform(0.05, 0.2)
            img += (amp * np.sign(np.sin(2 * math.pi * freq * phase)))[:, :, None] * rng.uniform(0.3, 1, 3)
        for _ in range(rng.integers(2, 6)):
            cx, cy, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.25)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
            img[mask] = rng.uniform(0, 1, 3)
        for _ in range(rng.integers(1, 4)):
            x0, y0 = rng.integers(0, size, 2)
            x1, y1 = x0 + rng.integers(4, size // 2), y0 + rng.integers(4, size // 2)
            img[y0:y1, x0:x1] = 0.5 * img[y0:y1, x0:x1] + 0.5 * rng.uniform(0, 1, 3)
        img += rng.normal(0, 0.02, img.shape)
        path = out_dir / f"toy{i:03d}.png"
        write_png(path, np.clip(img, 0, 1))
        paths.append(path)
    logging.info(f"Synthesized {count} images of {size}x{size} in {out_dir}", color="green")
    return paths


def generate_centroids(manifest: DatasetManifest, pretrained: ModelParams, cache: CentroidCache,
                       checkpoint_hash: str, force: bool = False) -> CentroidCache:
    """Runs the pretrained network on every full LR image; values stay unclamped."""
    if pretrained.config.scale != manifest.scale:
        raise ScaleMismatchError(manifest.scale, pretrained.config.scale, what="teacher scale")
    with cache.writer(checkpoint_hash, manifest.scale, force=force) as writer:
        for item in manifest.items:
            mu = pretrained.forward(manifest.lr(item.id))
            writer.put(item.id, mu)
            item.centroid_path = os.path.relpath(cache.root / writer.items[item.id], manifest.root)
    manifest.save()
    return cache


# ----- Patches and augmentation ----

@dataclass
class PatchTuple:
    hr: Image
    lr: Image
    centroid: Optional[Image] = None
    item_id: str = ""
    offset: Tuple[int, int] = (0, 0)
    transform: int = 0


def sample_patch(images: ItemImages, scale: int, lr_patch: int, rng: np.random.Generator,
                 offset: Optional[Tuple[int, int]] = None, margin: int = 0) -> PatchTuple:
    lh, lw = images.lr.shape[:2]
    if lh < lr_patch + 2 * margin or lw < lr_patch + 2 * margin:
        raise ImageTooSmallError(images.id, (lh, lw), lr_patch)
    if offset is None:
        top = int(rng.integers(margin, lh - lr_patch - margin + 1))
        left = int(rng.integers(margin, lw - lr_patch - margin + 1))
    else:
        top, left = offset
    hp = lr_patch * scale
    ht, hl = top * scale, left * scale
    centroid = None
    if images.centroid is not None:
        centroid = images.centroid[ht:ht + hp, hl:hl + hp]
    return PatchTuple(
        hr=images.hr[ht:ht + hp, hl:hl + hp],
        lr=images.lr[top:top + lr_patch, left:left + lr_patch],
        centroid=centroid,
        item_id=images.id,
        offset=(top, left),
    )


def dihedral(img: Image, k: int) -> Image:
    """k in 0..7: rotation by 90 * (k % 4) degrees, then a horizontal flip when k >= 4."""
    out = np.rot90(img, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(patch: PatchTuple, rng: np.random.Generator, k: Optional[int] = None) -> PatchTuple:
    if k is None:
        k = int(rng.integers(8))
    centroid = dihedral(patch.centroid, k) if patch.centroid is not None else None
    return replace(patch, hr=dihedral(patch.hr, k), lr=dihedral(patch.lr, k), centroid=centroid, transform=k)


# ----- Alpha schedule ----

ALPHA_KINDS = ("constant", "linear_ramp", "step", "cosine_ramp")


@dataclass
class AlphaSchedule:
    kind: str = "linear_ramp"
    ramp_end_fraction: float = 0.5
    alpha_start: float = 0.0
    alpha_end: float = 1.0

    def __post_init__(self):
        if self.kind not in ALPHA_KINDS:
            raise ValueError(f"unknown alpha schedule {self.kind!r}; expected one of {ALPHA_KINDS}")
        if not 0 < self.ramp_end_fraction <= 1:
            raise ValueError(f"ramp_end_fraction must lie in (0, 1], got {self.ramp_end_fraction}")
        if not 0 <= self.alpha_start <= self.alpha_end <= 1:
            raise ValueError("need 0 <= alpha_start <= alpha_end <= 1")

    def describe(self) -> str:
        return (f"{self.kind} {self.alpha_start}->{self.alpha_end} "
                f"(ramp ends at {self.ramp_end_fraction:.0%} of the run)")


def alpha_at(schedule: AlphaSchedule, step: int, total_steps: int) -> float:
    if schedule.kind == "constant":
        return schedule.alpha_start
    progress = min(max(step / (schedule.ramp_end_fraction * total_steps), 0.0), 1.0)
    if schedule.kind == "step":
        progress = 1.0 if progress >= 1.0 else 0.0
    elif schedule.kind == "cosine_ramp":
        progress = 0.5 * (1 - math.cos(math.pi * progress))
    return schedule.alpha_start + (schedule.alpha_end - schedule.alpha_start) * progress


# ----- Batch assembly ----

@dataclass
class BatchSampler:
    """Reproducible batches: item order from a per-epoch permutation, offsets and
    transforms from a generator keyed on the global sample index."""

    manifest: DatasetManifest
    batch_size: int
    lr_patch: int = 48
    seed: int = 0
    cache: Optional[CentroidCache] = None
    use_augment: bool = True
    margin: int = 0
    _perms: dict = field(default_factory=dict, repr=False)

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: rng_for(self.seed, 0, epoch).permutation(len(self.manifest.items))}
        return self._perms[epoch]

    def batch(self, step: int) -> List[PatchTuple]:
        n = len(self.manifest.items)
        out = []
        for j in range(self.batch_size):
            g = step * self.batch_size + j
            item_id = self.manifest.items[self._permutation(g // n)[g % n]].id
            rng = rng_for(self.seed, 1, g)
            images = self.manifest.images(item_id, self.cache)
            if self.cache is not None and images.centroid is None:
                raise MissingCentroidError(item_id=item_id, cache_dir=self.cache.root)
            patch = sample_patch(images, self.manifest.scale, self.lr_patch, rng, margin=self.margin)
            out.append(augment(patch, rng) if self.use_augment else patch)
        return out


class BatchPrefetcher:
    """Producer thread feeding a janus queue; the consumer awaits batches in step order."""

    def __init__(self, sampler: BatchSampler, start: int, stop: int, depth: int = 4):
        self.sampler = sampler
        self.start = start
        self.stop = stop
        self.depth = max(1, depth)
        self._queue: Optional[janus.Queue] = None
        self._halt = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _produce(self):
        for step in range(self.start, self.stop):
            if self._halt.is_set():
                return
            try:
                item = (step, self.sampler.batch(step))
            except Exception as err:
                item = (step, err)
            while not self._halt.is_set():
                try:
                    self._queue.sync_q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if self._halt.is_set() or isinstance(item[1], Exception):
                return

    async def __aenter__(self):
        self._queue = janus.Queue(maxsize=self.depth)
        self._thread = threading.Thread(target=self._produce, name="batch-prefetch", daemon=True)
        self._thread.start()
        return self

    async def get(self) -> Tuple[int, List[PatchTuple]]:
        step, batch = await self._queue.async_q.get()
        if isinstance(batch, Exception):
            raise batch
        return step, batch

    async def __aexit__(self, exc_type, exc, tb):
        self._halt.set()
        await asyncio.get_running_loop().run_in_executor(None, self._thread.join)
        self._queue.close()
        await self._queue.wait_closed()
