import json
import shutil
import struct
import threading
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from cachetools import LRUCache

from .errors import ContainerFormatError, MissingCentroidError, OverwriteError
from .logger import DEFAULT_LOGGER as logging
from .utils import atomic_write, sha256_file

MAGIC = b"ECOT"
HEADER = struct.Struct("<4sIII")


# ----- ECOT raw tensor container ----

def encode_ecot(arr: np.ndarray) -> bytes:
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"ECOT records are H x W x C, got shape {arr.shape}")
    h, w, c = arr.shape
    return HEADER.pack(MAGIC, h, w, c) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_ecot(buf: bytes, offset: int = 0, path="<buffer>") -> Tuple[np.ndarray, int]:
    if len(buf) - offset < HEADER.size:
        raise ContainerFormatError(path, "truncated header")
    magic, h, w, c = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ContainerFormatError(path, f"bad magic {magic!r}")
    count = h * w * c
    start = offset + HEADER.size
    end = start + 4 * count
    if end > len(buf):
        raise ContainerFormatError(path, f"expected {count} values, file is truncated")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=start)
    return data.astype(np.float32).reshape(h, w, c), end


def write_ecot(path, arr: np.ndarray):
    atomic_write(path, encode_ecot(arr))


def read_ecot(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_ecot(buf, path=path)
    if end != len(buf):
        raise ContainerFormatError(path, "trailing bytes after record")
    return arr


# ----- JSON documents ----

class PersistentDict:
    """JSON document loaded on enter and written back atomically on a clean exit."""

    def __init__(self, path, create: bool = True):
        self.path = Path(path)
        self.create = create
        self._state = {}

    def __enter__(self):
        if self.path.exists():
            with open(self.path, "r") as fd:
                self._state = json.load(fd)
        elif not self.create:
            raise FileNotFoundError(self.path)
        return self._state

    def __exit__(self, exc_type, exc_value, tb):
        if exc_type is None:
            atomic_write(self.path, json.dumps(self._state, indent=2, sort_keys=True).encode())


def read_json(path) -> dict:
    with open(path, "r") as fd:
        return json.load(fd)


def write_json(path, doc: dict):
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True).encode())


# ----- Checkpoints ----

def _as_record(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 4:
        o, i, kh, kw = arr.shape
        return arr.reshape(o, i, kh * kw)
    if arr.ndim == 1:
        return arr.reshape(-1, 1, 1)
    return arr.reshape(arr.shape[0], -1, 1)


def save_checkpoint(path, params: Dict[str, np.ndarray], meta: dict) -> str:
    """Writes concatenated ECOT records plus a JSON sidecar; returns the content hash."""
    path = Path(path)
    names = sorted(params)
    blob = b"".join(encode_ecot(_as_record(params[name])) for name in names)
    sidecar = dict(meta)
    sidecar["format"] = "ECOT"
    sidecar["params"] = [{"name": name, "shape": list(params[name].shape)} for name in names]
    atomic_write(path, blob)
    write_json(sidecar_path(path), sidecar)
    digest = sha256_file(path)
    logging.info(f"Saved checkpoint {path} ({len(names)} tensors, step {meta.get('step')})", color="magenta")
    return digest


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise ContainerFormatError(path, "checkpoint not found")
    sidecar = read_json(sidecar_path(path))
    buf = path.read_bytes()
    params, offset = {}, 0
    for entry in sidecar["params"]:
        record, offset = decode_ecot(buf, offset, path=path)
        params[entry["name"]] = record.reshape(entry["shape"])
    if offset != len(buf):
        raise ContainerFormatError(path, "trailing bytes after last record")
    return params, sidecar


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


# ----- Centroid cache ----

class CentroidCache:
    """Directory of per-item ECOT records plus ``index.json`` bound to the teacher hash."""

    INDEX = "index.json"

    def __init__(self, root, cache_size: int = 64):
        self.root = Path(root)
        self._cache = LRUCache(maxsize=cache_size)
        self._lock = threading.Lock()
        self._index: Optional[dict] = None

    @property
    def index_path(self) -> Path:
        return self.root / self.INDEX

    def exists(self) -> bool:
        return self.index_path.exists()

    @property
    def index(self) -> dict:
        if self._index is None:
            if not self.exists():
                raise MissingCentroidError(cache_dir=self.root)
            self._index = read_json(self.index_path)
        return self._index

    @property
    def checkpoint_hash(self) -> str:
        return self.index["checkpoint_hash"]

    @property
    def scale(self) -> int:
        return self.index["scale"]

    def ids(self) -> List[str]:
        return sorted(self.index["items"])

    def get(self, item_id: str) -> np.ndarray:
        with self._lock:
            if item_id in self._cache:
                return self._cache[item_id]
        fname = self.index["items"].get(item_id)
        if fname is None:
            raise MissingCentroidError(item_id=item_id, cache_dir=self.root)
        arr = read_ecot(self.root / fname)
        arr.setflags(write=False)
        with self._lock:
            self._cache[item_id] = arr
        return arr

    def writer(self, checkpoint_hash: str, scale: int, force: bool = False) -> "CacheWriter":
        if self.exists():
            if not force:
                raise OverwriteError(self.root)
            shutil.rmtree(self.root)
        self._index = None
        self._cache.clear()
        return CacheWriter(self, checkpoint_hash, scale)


class CacheWriter:
    """Items go in first, the index is written last so a partial cache has no index."""

    def __init__(self, cache: CentroidCache, checkpoint_hash: str, scale: int):
        self.cache = cache
        self.checkpoint_hash = checkpoint_hash
        self.scale = scale
        self.items = {}

    def __enter__(self):
        self.cache.root.mkdir(parents=True, exist_ok=True)
        return self

    def put(self, item_id: str, centroid: np.ndarray):
        fname = f"{item_id}.ecot"
        write_ecot(self.cache.root / fname, centroid)
        self.items[item_id] = fname

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            return
        with PersistentDict(self.cache.index_path) as index:
            index["checkpoint_hash"] = self.checkpoint_hash
            index["scale"] = self.scale
            index["items"] = self.items
        logging.info(f"Centroid cache {self.cache.root}: {len(self.items)} items "
                     f"(teacher {self.checkpoint_hash[:12]})", color="magenta")
