from .graph import Function, Tensor, TensorNode, as_tensor, backward, toposort
from .ops import LOSSES, add, conv2d, l1_loss, l2_loss, pixel_shuffle, relu, reshape, scale, total

__all__ = [
    "Function", "Tensor", "TensorNode", "as_tensor", "backward", "toposort",
    "LOSSES", "add", "conv2d", "l1_loss", "l2_loss", "pixel_shuffle", "relu", "reshape", "scale",
    "total",
]
