
class EcoError(Exception):
    """Base class; ``str()`` is the one-line cause printed by the CLI."""


class ShapeError(EcoError):
    def __init__(self, op, expected, got):
        self.op = op
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: expected shape {expected}, got {got}")


class ScaleMismatchError(EcoError):
    def __init__(self, expected, got, what="scale"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what} mismatch: expected x{expected}, got x{got}")


# ----- Autodiff graph ----

class GraphConsumedError(EcoError):
    def __init__(self):
        super().__init__("backward() already ran on this graph; call reset() before running it again")


class NonScalarRootError(EcoError):
    def __init__(self, shape):
        self.shape = shape
        super().__init__(f"backward() needs a scalar root, got shape {shape}")


# ----- Storage and datasets ----

class ContainerFormatError(EcoError):
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class DatasetError(EcoError):
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ImageTooSmallError(EcoError):
    def __init__(self, item_id, size, patch):
        self.item_id = item_id
        self.size = size
        self.patch = patch
        super().__init__(f"item {item_id} of size {size} is smaller than patch {patch}")


class MissingCentroidError(EcoError):
    def __init__(self, item_id=None, cache_dir=None):
        self.item_id = item_id
        self.cache_dir = cache_dir
        where = f" for item {item_id}" if item_id is not None else ""
        at = f" at {cache_dir}" if cache_dir else ""
        super().__init__(f"no centroid cache entry{where}{at}; run `gen-centroids` first")


class OverwriteError(EcoError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"{path} already exists; pass --force to overwrite")


# ----- Training ----

class NonFiniteGradientError(EcoError):
    def __init__(self, step, name):
        self.step = step
        self.name = name
        super().__init__(f"non-finite gradient at step {step} in parameter {name}")


class NonFiniteLossError(EcoError):
    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}; last good checkpoint kept")


# ----- Configuration ----

class ConfigError(EcoError):
    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"config {key}: {reason}")


class UsageError(EcoError):
    def __init__(self, message):
        super().__init__(message)
