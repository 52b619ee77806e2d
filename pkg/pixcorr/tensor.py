"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a float64 numpy array.  Every differentiable operation is a
``Function`` subclass: ``Function.apply`` runs the forward pass on the raw
arrays and, when any input requires a gradient, records itself as the creator
of the output.  ``Tensor.backward`` walks the recorded graph in reverse
topological order and accumulates ``grad`` on every tensor that requires one.

Shapes used throughout the package:

    image        ch x H x W
    logits z     h x w x C      (flattened to hw x C inside the SAM)
    probs p      H x W x C
"""

from __future__ import annotations

import contextlib
import struct
from typing import BinaryIO, Callable, Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, FormatError

EPS = 1e-12
MAGIC = b"PCT1"

Operand = Union["Tensor", np.ndarray, float, int]
Axis = Optional[Union[int, tuple[int, ...]]]

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording a graph (evaluation, pseudo-labeling)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Function:
    """Base class for differentiable operations.

    ``forward`` receives the input arrays and returns the output array;
    ``backward`` receives dL/d(output) and returns one gradient (or None)
    per input tensor, in input order.
    """

    def __init__(self, *tensors: Tensor) -> None:
        self.tensors: tuple[Tensor, ...] = tensors

    def forward(self, *arrays: np.ndarray, **kwargs: object) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: object) -> Tensor:
        """Run the forward pass and record the op when a gradient is needed."""
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = _grad_enabled and any(t.requires_grad for t in tensors)
        creator = func if requires_grad else None
        return Tensor(out_data, requires_grad=requires_grad, creator=creator)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        """Sum ``grad`` over the axes numpy broadcasting expanded to reach ``shape``."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """An n-dimensional float64 array with an optional gradient.

    Attributes:
        data: Row-major float64 buffer; never mutated by operations.
        requires_grad: Whether backward should populate ``grad``.
        grad: dL/d(self) after a backward pass, same shape as ``data``.
        creator: The Function that produced this tensor, None for leaves
            and for tensors outside any recorded graph.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: Operand | Sequence[float],
        requires_grad: bool = False,
        creator: Optional[Function] = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    # ------------------------------------------------------------------ info

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> Tensor:  # noqa: N802
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying array."""
        return self.data.copy()

    def grad_or_zeros(self) -> np.ndarray:
        """Gradient, with an unreached tensor reading as exactly zero."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return detach(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -------------------------------------------------------------- autodiff

    def backward(self, grad: Optional[np.ndarray] = None, retain_graph: bool = False) -> None:
        """Backpropagate from this tensor through the recorded graph.

        Args:
            grad: dL/d(self). Defaults to 1 and then requires a scalar tensor.
            retain_graph: Keep creators after the pass so the same graph can
                be differentiated again; otherwise the graph is freed.
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.size != 1:
                raise DimensionError(
                    f"backward without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = topological_order(self)
        for node in order:
            if node.creator is not None:
                node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.shape).copy()

        for node in reversed(order):
            func = node.creator
            if func is None or node.grad is None:
                continue
            grads = func.backward(node.grad)
            for inp, g in zip(func.tensors, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=np.float64).reshape(inp.shape)
                else:
                    inp.grad = inp.grad + g

        if not retain_graph:
            for node in order:
                node.creator = None

    # ------------------------------------------------------------- operators

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return self.__mul__(other)

    def __truediv__(self, other: Operand) -> Tensor:
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self) -> Tensor:
        return mul_scalar(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def sum(self, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes or None)


def as_tensor(value: Operand | Sequence[float]) -> Tensor:
    """Wrap a constant in a Tensor; tensors pass through unchanged."""
    return value if isinstance(value, Tensor) else Tensor(value)


def topological_order(root: Tensor) -> list[Tensor]:
    """Return the recorded graph under ``root``, each tensor after all its inputs.

    Only tensors that require a gradient are visited, so a detached tensor
    (which never requires one) cuts the walk.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.tensors:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


# ---------------------------------------------------------------- elementwise


class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x + y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.tensors
        return self.unbroadcast(grad, x.shape), self.unbroadcast(grad, y.shape)


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x - y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.tensors
        return self.unbroadcast(grad, x.shape), self.unbroadcast(-grad, y.shape)


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x * y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.tensors
        return (
            self.unbroadcast(grad * y.data, x.shape),
            self.unbroadcast(grad * x.data, y.shape),
        )


class Div(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x / y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.tensors
        return (
            self.unbroadcast(grad / y.data, x.shape),
            self.unbroadcast(-grad * x.data / (y.data * y.data), y.shape),
        )


class MulScalar(Function):
    def forward(self, x: np.ndarray, scalar: float = 1.0) -> np.ndarray:
        self.scalar = scalar
        return x * scalar

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.scalar,)


class Relu(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        # NaN propagates
        return np.maximum(x, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.where(self.mask, grad, 0.0),)


class Log(Function):
    """Natural log guarded from below: log(max(x, floor))."""

    def forward(self, x: np.ndarray, floor: float = EPS) -> np.ndarray:
        self.active = x > floor
        return np.log(np.maximum(x, floor))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.tensors[0].data
        safe = np.where(self.active, x, 1.0)
        return (np.where(self.active, grad / safe, 0.0),)


class AbsMean(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(np.abs(x).mean())

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.tensors[0].data
        return (np.sign(x) * (grad / x.size),)


# ----------------------------------------------------------------- reductions


def _normalize_axes(axis: Optional[int | tuple[int, ...]], ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Sum(Function):
    def forward(
        self,
        x: np.ndarray,
        axis: Optional[int | tuple[int, ...]] = None,
        keepdims: bool = False,
    ) -> np.ndarray:
        self.axes = _normalize_axes(axis, x.ndim)
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        shape = self.tensors[0].shape
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Sum):
    def forward(
        self,
        x: np.ndarray,
        axis: Optional[int | tuple[int, ...]] = None,
        keepdims: bool = False,
    ) -> np.ndarray:
        total = super().forward(x, axis=axis, keepdims=keepdims)
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if x.ndim else 1
        return total / self.count

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        (spread,) = super().backward(grad)
        return (spread / self.count,)


class RowL2Norm(Function):
    """Euclidean norm of every row of a 2-D tensor, shape n x 1."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        return self.norms

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.tensors[0].data
        safe = np.where(self.norms > 0, self.norms, 1.0)
        return (grad * x / safe,)


class RowL1Normalize(Function):
    """Divide every row by its L1 norm plus EPS; all-zero rows stay zero."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.denom = np.abs(x).sum(axis=-1, keepdims=True) + EPS
        return x / self.denom

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.tensors[0].data
        inner = (grad * x).sum(axis=-1, keepdims=True)
        return (grad / self.denom - np.sign(x) * inner / (self.denom * self.denom),)


class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        self.probs = np.exp(out)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad - self.probs * grad.sum(axis=self.axis, keepdims=True),)


# -------------------------------------------------------------------- shaping


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: tuple[int, ...] = ()) -> np.ndarray:
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.tensors[0].shape),)


class Transpose(Function):
    def forward(self, x: np.ndarray, axes: Optional[tuple[int, ...]] = None) -> np.ndarray:
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(grad, np.argsort(self.axes)),)


# ---------------------------------------------------------------- linear maps


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a @ b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.tensors
        return grad @ b.data.T, a.data.T @ grad


class Conv2d(Function):
    """Cross-correlation of a c_in x H x W input with c_out x c_in x kh x kw weights."""

    def forward(
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: Optional[np.ndarray] = None,
        stride: int = 1,
        padding: int = 0,
    ) -> np.ndarray:
        self.stride = stride
        self.padding = padding
        kh, kw = weight.shape[2:]
        padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
        self.windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        out = np.tensordot(weight, self.windows, axes=([1, 2, 3], [0, 3, 4]))
        if bias is not None:
            out = out + bias[:, None, None]
        return out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        x, weight = self.tensors[0], self.tensors[1]
        c_in, height, width = x.shape
        _, _, kh, kw = weight.shape
        s, p = self.stride, self.padding
        out_h, out_w = grad.shape[1:]

        grad_w = np.tensordot(grad, self.windows, axes=([1, 2], [1, 2]))
        grad_windows = np.tensordot(weight.data, grad, axes=([0], [0]))
        grad_padded = np.zeros((c_in, height + 2 * p, width + 2 * p))
        for k in range(kh):
            for j in range(kw):
                grad_padded[
                    :, k : k + s * (out_h - 1) + 1 : s, j : j + s * (out_w - 1) + 1 : s
                ] += grad_windows[:, k, j]
        grad_x = grad_padded[:, p : p + height, p : p + width]
        if len(self.tensors) == 3:
            return grad_x, grad_w, grad.sum(axis=(1, 2))
        return grad_x, grad_w


def _align_corners_matrix(out_size: int, in_size: int) -> np.ndarray:
    """Row i holds the align-corners interpolation weights of output index i."""
    weights = np.zeros((out_size, in_size))
    if in_size == 1 or out_size == 1:
        weights[:, 0] = 1.0
        return weights
    source = np.arange(out_size) * ((in_size - 1) / (out_size - 1))
    low = np.minimum(np.floor(source).astype(int), in_size - 2)
    frac = source - low
    rows = np.arange(out_size)
    weights[rows, low] += 1.0 - frac
    weights[rows, low + 1] += frac
    return weights


class BilinearUpsample(Function):
    def forward(self, x: np.ndarray, size: tuple[int, int] = (1, 1)) -> np.ndarray:
        self.rows = _align_corners_matrix(size[0], x.shape[1])
        self.cols = _align_corners_matrix(size[1], x.shape[2])
        return np.einsum("Hh,chw,Ww->cHW", self.rows, x, self.cols)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.einsum("Hh,cHW,Ww->chw", self.rows, grad, self.cols),)


# ------------------------------------------------------------ functional API


def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: Operand, b: Operand) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def div(a: Operand, b: Operand) -> Tensor:
    return Div.apply(as_tensor(a), as_tensor(b))


def mul_scalar(a: Operand, scalar: float) -> Tensor:
    return MulScalar.apply(as_tensor(a), scalar=float(scalar))


def relu(a: Operand) -> Tensor:
    return Relu.apply(as_tensor(a))


def log(a: Operand, floor: float = EPS) -> Tensor:
    """Natural log of max(a, floor); the gradient is zero where the floor is active."""
    return Log.apply(as_tensor(a), floor=floor)


def abs_mean(a: Operand) -> Tensor:
    """Mean absolute value over every element."""
    return AbsMean.apply(as_tensor(a))


def detach(a: Operand) -> Tensor:
    """Same values, no gradient flows back through the result."""
    return Tensor(as_tensor(a).data.copy())


def tsum(a: Operand, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(as_tensor(a), axis=axis, keepdims=keepdims)


def mean(a: Operand, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(as_tensor(a), axis=axis, keepdims=keepdims)


def reshape(a: Operand, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(as_tensor(a), shape=tuple(shape))


def transpose(a: Operand, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(as_tensor(a), axes=tuple(axes) if axes is not None else None)


def softmax(a: Operand, axis: int = -1) -> Tensor:
    return Softmax.apply(as_tensor(a), axis=axis)


def log_softmax(a: Operand, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(as_tensor(a), axis=axis)


def row_l2_norm(a: Operand) -> Tensor:
    """Per-row Euclidean norms of an n x k tensor, returned as n x 1."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"row_l2_norm expects a 2-D tensor, got shape {a.shape}")
    return RowL2Norm.apply(a)


def row_l1_normalize(a: Operand) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"row_l1_normalize expects a 2-D tensor, got shape {a.shape}")
    return RowL1Normalize.apply(a)


def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product of an m x k and a k x n tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


def conv2d(
    x: Operand,
    weight: Operand,
    bias: Optional[Operand] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of a single c_in x H x W image.

    Args:
        x: Input of shape c_in x H x W.
        weight: Kernel of shape c_out x c_in x kh x kw.
        bias: Optional per-output-channel offsets of shape c_out.
        stride: Step between kernel applications along both axes.
        padding: Zero rows/columns added on every border.

    Returns:
        Output of shape c_out x H' x W' with H' = floor((H + 2p - kh) / stride) + 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d expects c x H x W input and 4-D weight, got {x.shape}, {weight.shape}"
        )
    if weight.shape[1] != x.shape[0]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    kh, kw = weight.shape[2:]
    if kh < 1 or kw < 1 or stride < 1 or padding < 0:
        raise DimensionError(
            f"conv2d invalid kernel {weight.shape}, stride {stride}, padding {padding}"
        )
    out_h = (x.shape[1] + 2 * padding - kh) // stride + 1
    out_w = (x.shape[2] + 2 * padding - kw) // stride + 1
    if x.shape[1] + 2 * padding < kh or x.shape[2] + 2 * padding < kw or out_h < 1 or out_w < 1:
        raise DimensionError(
            f"conv2d output size not positive for input {x.shape}, weight {weight.shape}"
        )
    if bias is None:
        return Conv2d.apply(x, weight, stride=stride, padding=padding)
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def bilinear_upsample(x: Operand, size: tuple[int, int]) -> Tensor:
    """Align-corners bilinear resize of a c x h x w tensor to c x H x W, H >= h, W >= w."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"bilinear_upsample expects c x h x w, got {x.shape}")
    height, width = size
    if height < x.shape[1] or width < x.shape[2]:
        raise DimensionError(f"bilinear_upsample target {size} smaller than input {x.shape[1:]}")
    return BilinearUpsample.apply(x, size=(int(height), int(width)))


# --------------------------------------------------------------- diagnostics


def numerical_gradient(
    loss_fn: Callable[[], Tensor], target: Tensor, step: float = 1e-5
) -> np.ndarray:
    """Central finite-difference estimate of d(loss_fn())/d(target).

    ``target.data`` is perturbed in place one element at a time and restored.
    """
    if not target.data.flags.c_contiguous:
        target.data = np.ascontiguousarray(target.data)
    estimate = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    flat_estimate = estimate.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = loss_fn().item()
        flat[index] = original - step
        lower = loss_fn().item()
        flat[index] = original
        flat_estimate[index] = (upper - lower) / (2.0 * step)
    return estimate


def gradient_error(
    loss_fn: Callable[[], Tensor], targets: Sequence[Tensor], step: float = 1e-5
) -> float:
    """Largest relative error between autodiff and finite-difference gradients.

    The relative error of one tensor is ||analytic - numeric|| / max(||analytic||,
    ||numeric||), which stays meaningful when individual entries are near zero.
    """
    for target in targets:
        target.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for target in targets:
        analytic = target.grad_or_zeros()
        numeric = numerical_gradient(loss_fn, target, step)
        scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), EPS)
        worst = max(worst, float(np.linalg.norm(analytic - numeric)) / scale)
    return worst


# ------------------------------------------------------------- serialization


def write_tensor(stream: BinaryIO, array: np.ndarray | Tensor) -> None:
    """Write one tensor as: magic PCT1, u32 rank, u64 dims, little-endian f64 data."""
    data = array.data if isinstance(array, Tensor) else np.asarray(array, dtype=np.float64)
    stream.write(MAGIC)
    stream.write(struct.pack("<I", data.ndim))
    stream.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    stream.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read_exact(stream: BinaryIO, count: int) -> bytes:
    chunk = stream.read(count)
    if len(chunk) != count:
        raise FormatError(f"truncated tensor: wanted {count} bytes, got {len(chunk)}")
    return chunk


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """Read one tensor written by ``write_tensor``."""
    magic = _read_exact(stream, 4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", _read_exact(stream, 4))
    shape = struct.unpack(f"<{rank}Q", _read_exact(stream, 8 * rank)) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(stream, 8 * count), dtype="<f8")
    return data.astype(np.float64).reshape(shape)
