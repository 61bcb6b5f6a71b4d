import hashlib
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .logger import DEFAULT_LOGGER as logging


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed on (seed, *keys); independent of call order elsewhere."""
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fd:
        for chunk in iter(lambda: fd.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as out:
            out.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def parse_list(text: str, cast=float):
    return [cast(part) for part in str(text).split(",") if part.strip()]


class OutputGuard:
    """Tracks paths a command creates and removes them if the command fails."""

    def __init__(self):
        self._paths = []

    def track(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            self._paths.append(path)
        return path

    def keep(self):
        """Stops tracking; whatever was written so far stays on disk."""
        self._paths = []

    def cleanup(self):
        for path in reversed(self._paths):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()
            logging.info(f"Removed partial output {path}", color="yellow")
        self._paths = []


@contextmanager
def guarded_outputs():
    guard = OutputGuard()
    try:
        yield guard
    except BaseException:
        guard.cleanup()
        raise
