"""Tiny EDSR-baseline network: conv head, residual body, pixel-shuffle tail.

The map uses only conv, ReLU, addition and pixel shuffle, so it is piecewise linear in
its input. Outputs are never clamped here.
"""
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Dict, Sequence, Tuple

import numpy as np

from .autodiff import LOSSES, TensorNode, add, backward, conv2d, pixel_shuffle, relu, scale
from .errors import ConfigError, ShapeError
from .resample import Image
from .storage import load_checkpoint, save_checkpoint


@dataclass
class ModelConfig:
    scale: int
    channels: int = 16
    n_blocks: int = 4
    residual_scaling: float = 1.0
    kernel_size: int = 3
    bypass_relu: bool = False  # linearized variant for landscape diagnostics

    def __post_init__(self):
        if self.scale < 1:
            raise ConfigError("model.scale", f"must be >= 1, got {self.scale}")
        if self.channels < 1:
            raise ConfigError("model.channels", f"must be >= 1, got {self.channels}")
        if self.n_blocks < 0:
            raise ConfigError("model.n_blocks", f"must be >= 0, got {self.n_blocks}")
        if self.kernel_size % 2 == 0:
            raise ConfigError("model.kernel_size", "must be odd")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def param_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    c, k, s = config.channels, config.kernel_size, config.scale
    shapes = OrderedDict()

    def conv(name, o, i):
        shapes[f"{name}.weight"] = (o, i, k, k)
        shapes[f"{name}.bias"] = (o,)

    conv("head", c, 3)
    for i in range(config.n_blocks):
        conv(f"blocks.{i}.conv1", c, c)
        conv(f"blocks.{i}.conv2", c, c)
    conv("body", c, c)
    conv("tail", 3 * s * s, c)
    conv("final", 3, 3)
    return shapes


def to_nchw(batch: np.ndarray) -> np.ndarray:
    if batch.ndim == 3:
        batch = batch[None]
    return np.ascontiguousarray(batch.transpose(0, 3, 1, 2))


def to_nhwc(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch.transpose(0, 2, 3, 1))


class ModelParams:
    def __init__(self, config: ModelConfig, tensors: Dict[str, np.ndarray]):
        self.config = config
        expected = param_shapes(config)
        missing = set(expected) - set(tensors)
        if missing:
            raise ShapeError("model params", sorted(expected), sorted(tensors))
        self.tensors = OrderedDict()
        for name, shape in expected.items():
            arr = np.asarray(tensors[name])
            if arr.shape != shape:
                raise ShapeError(name, shape, arr.shape)
            self.tensors[name] = arr

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name, shape in param_shapes(config).items():
            if name.endswith(".weight"):
                bound = math.sqrt(1.0 / (shape[1] * shape[2] * shape[3]))
                tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            else:
                tensors[name] = np.zeros(shape, dtype=np.float32)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, {n: np.zeros(s, dtype=np.float32) for n, s in param_shapes(config).items()})

    @classmethod
    def nearest_upsampler(cls, config: ModelConfig) -> "ModelParams":
        """Hand-built net computing nearest-neighbour upsampling (identity at s=1).

        Needs ``channels == 3``; the residual body is zeroed so only the global skip
        carries the signal.
        """
        if config.channels != 3:
            raise ShapeError("nearest_upsampler", "channels == 3", config.channels)
        params = cls.zeros(config)
        k, s = config.kernel_size, config.scale
        mid = k // 2
        t = params.tensors
        for c in range(3):
            t["head.weight"][c, c, mid, mid] = 1.0
            t["final.weight"][c, c, mid, mid] = 1.0
            for sub in range(s * s):
                t["tail.weight"][c * s * s + sub, c, mid, mid] = 1.0
        return params

    @property
    def names(self):
        return list(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {n: t.astype(dtype) for n, t in self.tensors.items()})

    def displaced(self, direction: Dict[str, np.ndarray], eta: float) -> "ModelParams":
        """theta - eta * direction, as a new parameter set."""
        return ModelParams(self.config, {
            n: (t - eta * direction[n]).astype(t.dtype) for n, t in self.tensors.items()})

    def nodes(self) -> "OrderedDict[str, TensorNode]":
        return OrderedDict((n, TensorNode.param(t)) for n, t in self.tensors.items())

    def graph(self, x: TensorNode, nodes: Dict[str, TensorNode]) -> TensorNode:
        cfg = self.config

        def conv(inp, name):
            return conv2d(inp, nodes[f"{name}.weight"], nodes[f"{name}.bias"])

        act = (lambda n: n) if cfg.bypass_relu else relu
        head = conv(x, "head")
        res = head
        for i in range(cfg.n_blocks):
            t = act(conv(res, f"blocks.{i}.conv1"))
            t = conv(t, f"blocks.{i}.conv2")
            res = add(res, scale(t, cfg.residual_scaling))
        body = add(conv(res, "body"), head)
        up = pixel_shuffle(conv(body, "tail"), cfg.scale)
        return conv(up, "final")

    def forward_batch(self, batch: np.ndarray) -> np.ndarray:
        x = TensorNode(to_nchw(batch.astype(self.dtype, copy=False)))
        return to_nhwc(self.graph(x, self.nodes()).value)

    def forward(self, lr: Image) -> Image:
        if lr.ndim != 3 or lr.shape[2] != 3:
            raise ShapeError("forward", "H x W x 3", lr.shape)
        return self.forward_batch(lr[None])[0]

    @property
    def dtype(self):
        return self.tensors["head.weight"].dtype

    def loss_and_grad(self, inputs: Sequence[Image], targets: Sequence[Image], loss: str = "l1"):
        """Mean loss over the batch and the gradient for every named parameter."""
        nodes = self.nodes()
        x = TensorNode(to_nchw(np.stack(inputs).astype(self.dtype, copy=False)))
        target = to_nchw(np.stack(targets).astype(self.dtype, copy=False))
        pred = self.graph(x, nodes)
        root = LOSSES[loss](pred, target)
        backward(root)
        grads = OrderedDict((n, node.grad) for n, node in nodes.items())
        return float(root.value), grads

    def save(self, path, step: int = 0, **extra) -> str:
        meta = {"config": self.config.to_dict(), "step": step}
        meta.update(extra)
        return save_checkpoint(path, self.tensors, meta)

    @classmethod
    def load(cls, path) -> Tuple["ModelParams", dict]:
        tensors, meta = load_checkpoint(path)
        return cls(ModelConfig.from_dict(meta["config"]), tensors), meta


def init(config: ModelConfig, seed: int) -> ModelParams:
    return ModelParams.init(config, seed)


def forward(params: ModelParams, lr: Image) -> Image:
    return params.forward(lr)
