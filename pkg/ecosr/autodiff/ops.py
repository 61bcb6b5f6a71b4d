import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .graph import Function, Tensor, TensorNode, as_tensor


def _windows(x: Tensor, k: int) -> Tensor:
    # (N, C, H, W) -> zero-padded (N, C, H, W, k, k) view
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))


class Conv2d(Function):
    """Stride-1 cross-correlation with (K-1)/2 zero padding."""

    def forward(self, x, w, b=None):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError("conv2d", "NCHW input and OIKhKw kernel", (x.shape, w.shape))
        o, i, kh, kw = w.shape
        if kh != kw or kh % 2 == 0:
            raise ShapeError("conv2d", "odd square kernel", w.shape)
        if x.shape[1] != i:
            raise ShapeError("conv2d", f"input with {i} channels", x.shape)
        if b is not None and b.shape != (o,):
            raise ShapeError("conv2d", (o,), b.shape)
        self.k = kh
        self.x = x
        self.w = w
        self.cols = _windows(x, kh)
        out = np.tensordot(self.cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, H, W, O
        out = out.transpose(0, 3, 1, 2)
        if b is not None:
            out = out + b.reshape(1, o, 1, 1)
        return np.ascontiguousarray(out, dtype=x.dtype)

    def backward(self, grad):
        x_node = self.parents[0]
        grad_w = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3])).astype(self.w.dtype)
        grad_x = None
        if x_node.requires_grad:
            flipped = self.w[:, :, ::-1, ::-1]
            gcols = _windows(grad, self.k)  # N, O, H, W, k, k
            grad_x = np.tensordot(gcols, flipped, axes=([1, 4, 5], [0, 2, 3]))
            grad_x = np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2), dtype=self.x.dtype)
        if len(self.parents) == 3:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3)).astype(self.w.dtype)
        return grad_x, grad_w


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros_like(x))

    def backward(self, grad):
        # subgradient at 0 is 0
        return (np.where(self.mask, grad, np.zeros_like(grad)),)


class PixelShuffle(Function):
    def forward(self, x, s=1):
        n, c, h, w = x.shape
        if c % (s * s):
            raise ShapeError("pixel_shuffle", f"channels divisible by {s * s}", x.shape)
        self.s = s
        self.in_shape = x.shape
        c0 = c // (s * s)
        out = x.reshape(n, c0, s, s, h, w).transpose(0, 1, 4, 2, 5, 3)
        return np.ascontiguousarray(out.reshape(n, c0, h * s, w * s))

    def backward(self, grad):
        n, c, h, w = self.in_shape
        s = self.s
        g = grad.reshape(n, c // (s * s), h, s, w, s).transpose(0, 1, 3, 5, 2, 4)
        return (np.ascontiguousarray(g.reshape(self.in_shape)),)


class Add(Function):
    def forward(self, x, y):
        if x.shape != y.shape:
            raise ShapeError("add", x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return grad, grad


class Scale(Function):
    def forward(self, x, factor=1.0):
        self.factor = factor
        return (x * factor).astype(x.dtype)

    def backward(self, grad):
        return ((grad * self.factor).astype(grad.dtype),)


class Reshape(Function):
    def forward(self, x, shape=None):
        self.in_shape = x.shape
        if int(np.prod(shape)) != x.size:
            raise ShapeError("reshape", f"{x.size} elements", shape)
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Sum(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum(dtype=np.float64), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.in_shape, grad, dtype=grad.dtype),)


class L1Loss(Function):
    def forward(self, pred, target=None):
        if pred.shape != target.shape:
            raise ShapeError("l1_loss", pred.shape, target.shape)
        self.diff = pred - target.astype(pred.dtype)
        return np.asarray(np.abs(self.diff).mean(dtype=np.float64), dtype=pred.dtype)

    def backward(self, grad):
        # np.sign(0) == 0 fixes the subgradient at zero residual
        return ((np.sign(self.diff) * (grad / self.diff.size)).astype(self.diff.dtype),)


class L2Loss(Function):
    def forward(self, pred, target=None):
        if pred.shape != target.shape:
            raise ShapeError("l2_loss", pred.shape, target.shape)
        self.diff = pred - target.astype(pred.dtype)
        return np.asarray(np.square(self.diff).mean(dtype=np.float64), dtype=pred.dtype)

    def backward(self, grad):
        return ((self.diff * (2 * grad / self.diff.size)).astype(self.diff.dtype),)


def conv2d(x: TensorNode, kernel: TensorNode, bias: TensorNode = None) -> TensorNode:
    if bias is None:
        return Conv2d.apply(x, kernel)
    return Conv2d.apply(x, kernel, bias)


def relu(x: TensorNode) -> TensorNode:
    return ReLU.apply(x)


def pixel_shuffle(x: TensorNode, s: int) -> TensorNode:
    return PixelShuffle.apply(x, s=s)


def add(x: TensorNode, y: TensorNode) -> TensorNode:
    return Add.apply(x, y)


def scale(x: TensorNode, factor: float) -> TensorNode:
    if factor == 1.0:
        return x
    return Scale.apply(x, factor=factor)


def reshape(x: TensorNode, shape) -> TensorNode:
    return Reshape.apply(x, shape=tuple(shape))


def total(x: TensorNode) -> TensorNode:
    return Sum.apply(x)


def l1_loss(pred: TensorNode, target: Tensor) -> TensorNode:
    return L1Loss.apply(pred, target=as_tensor(target))


def l2_loss(pred: TensorNode, target: Tensor) -> TensorNode:
    return L2Loss.apply(pred, target=as_tensor(target))


LOSSES = {"l1": l1_loss, "l2": l2_loss}
