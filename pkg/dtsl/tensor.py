"""Dense float64 tensors with reverse-mode autodiff"""
import numpy as np
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from config import EPS_LOG


Number = Union[int, float]


class Tensor:
    """N-dimensional float64 array that can record how it was computed"""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

        # Graph links (empty for leaves)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, op={self._op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single element, got shape {list(self.shape)}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no gradient path"""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # Operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Topologically ordered record of every op between the leaves and a loss"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack = [(loss, False)]

        # Iterative post-order DFS; inputs always land before their outputs
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor):
        """Leaves accumulate across calls; interior grads restart from zero"""
        for node in self.nodes:
            if node._backward is not None:
                node.grad = None
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss: Tensor) -> Tape:
    """Populate .grad on every requires_grad tensor reachable from loss"""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return Tape([])
    tape = Tape.from_loss(loss)
    tape.backward(loss)
    return tape


# Helpers

def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=np.float64)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = np.sum(g).reshape(t.data.shape)  # scalar operand of a broadcast
    t.grad = g.copy() if t.grad is None else t.grad + g


def _check_pair(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)} "
                     f"(operands must have equal shapes or one must be a scalar)")


# Elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "add")

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), "add", _backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "sub")

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), "sub", _backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "mul")

    def _backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), "mul", _backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "div")
    if np.any(b.data == 0.0):
        raise ValueError("div: division by zero")

    def _backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), "div", _backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), "neg", _backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def _backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), "exp", _backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: non-positive input; apply clamp_min first")

    def _backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), "log", _backward)


def relu(a, _unused=None) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0

    def _backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), "relu", _backward)


def clamp_min(a, low: Number = EPS_LOG) -> Tensor:
    a = as_tensor(a)
    low = float(as_array(low))
    mask = a.data >= low

    def _backward(g):
        _accumulate(a, g * mask)

    return _make(np.maximum(a.data, low), (a,), "clampmin", _backward)


ELEMENTWISE_OPS: Dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": lambda a, b=None: exp(a),
    "log": lambda a, b=None: log(a),
    "relu": relu,
    "clampmin": lambda a, b=EPS_LOG: clamp_min(a, EPS_LOG if b is None else b),
}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch one of the primitive elementwise ops by name"""
    if op not in ELEMENTWISE_OPS:
        raise ValueError(f"Unknown elementwise op: {op}")
    return ELEMENTWISE_OPS[op](a, b)


# Reductions and shape ops

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), "sum", _backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.data.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    in_shape = a.data.shape

    def _backward(g):
        _accumulate(a, g.reshape(in_shape))

    return _make(a.data.reshape(tuple(shape)), (a,), "reshape", _backward)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(index)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", _backward)


def pick(a, index: np.ndarray, axis: int = 1) -> Tensor:
    """Select one entry along axis per position, e.g. the label class"""
    a = as_tensor(a)
    index = np.expand_dims(np.asarray(index, dtype=np.int64), axis)
    out_data = np.take_along_axis(a.data, index, axis=axis).squeeze(axis)

    def _backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, index, np.expand_dims(g, axis), axis=axis)
        _accumulate(a, full)

    return _make(out_data, (a,), "pick", _backward)


# Softmax family

def _check_finite(a: Tensor, op: str):
    if np.any(np.isnan(a.data)):
        raise ValueError(f"{op}: NaN in input")


def softmax(a, axis: int = 1) -> Tensor:
    a = as_tensor(a)
    _check_finite(a, "softmax")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return _make(out_data, (a,), "softmax", _backward)


def log_softmax(a, axis: int = 1) -> Tensor:
    a = as_tensor(a)
    _check_finite(a, "log_softmax")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out_data = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def _backward(g):
        probs = np.exp(out_data)
        _accumulate(a, g - probs * np.sum(g, axis=axis, keepdims=True))

    return _make(out_data, (a,), "log_softmax", _backward)


# Convolution and resampling

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if kernel > size + 2 * padding:
        raise ValueError(f"conv2d: kernel {kernel} larger than padded input {size + 2 * padding}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if span % stride != 0:
        raise ValueError(f"conv2d: non-integral output size ({size}+2*{padding}-{kernel})/{stride}+1")
    return span // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B,Cin,H,W] with [Cout,Cin,kh,kw]

    Sums run input channel by input channel inside each kernel offset, in the
    same order as the nested-loop definition, so results match it bit for bit.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and kernel, got {list(x.shape)} and {list(kernel.shape)}")
    batch, c_in, height, width = x.shape
    c_out, k_in, kh, kw = kernel.shape
    if k_in != c_in:
        raise ValueError(f"conv2d: kernel expects {k_in} input channels, input has {c_in}")
    out_h = conv_output_size(height, kh, stride, padding)
    out_w = conv_output_size(width, kw, stride, padding)

    x_pad = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    def window(ki: int, kj: int) -> Tuple[slice, slice]:
        return (slice(ki, ki + stride * (out_h - 1) + 1, stride),
                slice(kj, kj + stride * (out_w - 1) + 1, stride))

    acc = np.zeros((batch, c_out, out_h, out_w))
    for ki in range(kh):
        for kj in range(kw):
            rows, cols = window(ki, kj)
            slab = x_pad[:, :, rows, cols]  # [B,Cin,H',W']
            terms = slab.transpose(1, 0, 2, 3)[:, :, None] * kernel.data[:, :, ki, kj].T[:, None, :, None, None]
            acc = np.add.accumulate(np.concatenate([acc[None], terms]), axis=0)[-1]

    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        acc = acc + bias.data[None, :, None, None]
        parents.append(bias)

    def _backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x_pad)
            for ki in range(kh):
                for kj in range(kw):
                    rows, cols = window(ki, kj)
                    gx[:, :, rows, cols] += np.einsum("bohw,oc->bchw", g, kernel.data[:, :, ki, kj])
            _accumulate(x, gx[:, :, padding:padding + height, padding:padding + width])
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for ki in range(kh):
                for kj in range(kw):
                    rows, cols = window(ki, kj)
                    gk[:, :, ki, kj] = np.einsum("bohw,bchw->oc", g, x_pad[:, :, rows, cols])
            _accumulate(kernel, gk)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(acc, parents, "conv2d", _backward)


def max_pool2d(x, size: int = 2) -> Tensor:
    x = as_tensor(x)
    batch, channels, height, width = x.shape
    if height % size or width % size:
        raise ValueError(f"max_pool2d: spatial size {height}x{width} not divisible by {size}")
    oh, ow = height // size, width // size
    blocks = (x.data.reshape(batch, channels, oh, size, ow, size)
              .transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, oh, ow, size * size))
    winner = np.argmax(blocks, axis=-1)  # first maximum wins ties
    out_data = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def _backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, winner[..., None], g[..., None], axis=-1)
        gx = (gb.reshape(batch, channels, oh, ow, size, size)
              .transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, height, width))
        _accumulate(x, gx)

    return _make(out_data, (x,), "maxpool", _backward)


def upsample_nearest2d(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    batch, channels, height, width = x.shape
    out_data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def _backward(g):
        _accumulate(x, g.reshape(batch, channels, height, factor, width, factor).sum(axis=(3, 5)))

    return _make(out_data, (x,), "upsample", _backward)
