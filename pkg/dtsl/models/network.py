"""Miniature encoder/decoder segmentation networks"""
import numpy as np
from collections import OrderedDict
from enum import Enum
from typing import Dict, List, Optional, Tuple

from config import BASE_CHANNELS, KERNEL_SIZE
from dtsl import tensor as T
from dtsl.tensor import Tensor


class ArchitectureKind(Enum):
    PLAIN = "plain"
    RESIDUAL = "residual"

    @classmethod
    def parse(cls, value) -> "ArchitectureKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value == str(value).lower() or kind.name == str(value).upper():
                return kind
        raise ValueError(f"Unknown architecture: {value}")


class ModelParams:
    """Named parameter tensors of one network"""

    def __init__(self, architecture: ArchitectureKind, num_classes: int, base_channels: int,
                 tensors: "OrderedDict[str, Tensor]"):
        self.architecture = architecture
        self.num_classes = num_classes
        self.base_channels = base_channels
        self.tensors = tensors

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def names(self) -> List[str]:
        return list(self.tensors.keys())

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, t.shape) for name, t in self.tensors.items()]

    def is_compatible(self, other: "ModelParams") -> bool:
        return (self.architecture == other.architecture
                and self.num_classes == other.num_classes
                and self.base_channels == other.base_channels
                and self.layout() == other.layout())

    def copy(self, requires_grad: Optional[bool] = None) -> "ModelParams":
        tensors = OrderedDict()
        for name, t in self.tensors.items():
            keep = t.requires_grad if requires_grad is None else requires_grad
            tensors[name] = Tensor(t.data.copy(), requires_grad=keep)
        return ModelParams(self.architecture, self.num_classes, self.base_channels, tensors)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())


class SegmentationNet:
    """Two-stage encoder/decoder with skip concatenation

    Stages: enc1 (H), enc2 (H/2), bottleneck (H/4), dec2 (H/2), dec1 (H), 1x1 head.
    Every block is two 3x3 convs with ReLU; subclasses change the block.
    """

    kind = ArchitectureKind.PLAIN

    def __init__(self, num_classes: int, base_channels: int = BASE_CHANNELS):
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        if base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {base_channels}")
        self.num_classes = num_classes
        self.base_channels = base_channels

    def blocks(self) -> List[Tuple[str, int, int]]:
        c = self.base_channels
        return [
            ("enc1", 1, c),
            ("enc2", c, 2 * c),
            ("mid", 2 * c, 4 * c),
            ("dec2", 4 * c + 2 * c, 2 * c),
            ("dec1", 2 * c + c, c),
        ]

    def block_shapes(self, name: str, c_in: int, c_out: int) -> List[Tuple[str, Tuple[int, ...]]]:
        k = KERNEL_SIZE
        return [
            (f"{name}.conv1.weight", (c_out, c_in, k, k)),
            (f"{name}.conv1.bias", (c_out,)),
            (f"{name}.conv2.weight", (c_out, c_out, k, k)),
            (f"{name}.conv2.bias", (c_out,)),
        ]

    def param_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        shapes = []
        for name, c_in, c_out in self.blocks():
            shapes.extend(self.block_shapes(name, c_in, c_out))
        shapes.append(("head.weight", (self.num_classes, self.base_channels, 1, 1)))
        shapes.append(("head.bias", (self.num_classes,)))
        return shapes

    def init_params(self, seed: int) -> ModelParams:
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name, shape in self.param_shapes():
            if name.endswith(".bias"):
                data = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                data = rng.uniform(-bound, bound, size=shape)
            tensors[name] = Tensor(data, requires_grad=True)
        return ModelParams(self.kind, self.num_classes, self.base_channels, tensors)

    def _conv(self, params: ModelParams, name: str, x: Tensor) -> Tensor:
        weight = params[f"{name}.weight"]
        pad = weight.shape[-1] // 2
        return T.conv2d(x, weight, params[f"{name}.bias"], stride=1, padding=pad)

    def block(self, params: ModelParams, name: str, x: Tensor) -> Tensor:
        h = T.relu(self._conv(params, f"{name}.conv1", x))
        return T.relu(self._conv(params, f"{name}.conv2", h))

    def forward(self, params: ModelParams, images) -> Tensor:
        images = T.as_tensor(images)
        if images.ndim != 4 or images.shape[1] != 1:
            raise ValueError(f"forward expects images of shape [B,1,H,W], got {list(images.shape)}")
        height, width = images.shape[2:]
        if height % 4 or width % 4:
            raise ValueError(f"image size {height}x{width} must be divisible by 4")
        if params.architecture != self.kind or params.num_classes != self.num_classes:
            raise ValueError(f"params built for {params.architecture.value}/K={params.num_classes}, "
                             f"network is {self.kind.value}/K={self.num_classes}")

        e1 = self.block(params, "enc1", images)
        e2 = self.block(params, "enc2", T.max_pool2d(e1, 2))
        mid = self.block(params, "mid", T.max_pool2d(e2, 2))
        d2 = self.block(params, "dec2", T.concat([T.upsample_nearest2d(mid, 2), e2], axis=1))
        d1 = self.block(params, "dec1", T.concat([T.upsample_nearest2d(d2, 2), e1], axis=1))
        return self._conv(params, "head", d1)


class PlainConvNet(SegmentationNet):
    kind = ArchitectureKind.PLAIN


class ResidualConvNet(SegmentationNet):
    """Same skeleton; each block adds a 1x1-projected shortcut before the last ReLU"""

    kind = ArchitectureKind.RESIDUAL

    def block_shapes(self, name: str, c_in: int, c_out: int) -> List[Tuple[str, Tuple[int, ...]]]:
        shapes = super().block_shapes(name, c_in, c_out)
        shapes.append((f"{name}.skip.weight", (c_out, c_in, 1, 1)))
        shapes.append((f"{name}.skip.bias", (c_out,)))
        return shapes

    def block(self, params: ModelParams, name: str, x: Tensor) -> Tensor:
        h = T.relu(self._conv(params, f"{name}.conv1", x))
        h = self._conv(params, f"{name}.conv2", h)
        return T.relu(T.add(h, self._conv(params, f"{name}.skip", x)))


def create_network(kind, num_classes: int, base_channels: int = BASE_CHANNELS) -> SegmentationNet:
    """Factory function to create networks"""
    kind = ArchitectureKind.parse(kind)
    if kind == ArchitectureKind.PLAIN:
        return PlainConvNet(num_classes, base_channels)
    elif kind == ArchitectureKind.RESIDUAL:
        return ResidualConvNet(num_classes, base_channels)
    else:
        raise ValueError(f"Unknown architecture: {kind}")


def init_params(kind, num_classes: int, base_channels: int = BASE_CHANNELS, seed: int = 0) -> ModelParams:
    return create_network(kind, num_classes, base_channels).init_params(seed)


def forward(params: ModelParams, images) -> Tensor:
    """Logits [B,K,H,W] for images [B,1,H,W]"""
    net = create_network(params.architecture, params.num_classes, params.base_channels)
    return net.forward(params, images)


def predict_probs(params: ModelParams, images) -> np.ndarray:
    """Detached class probabilities"""
    return T.softmax(forward(params, images).detach(), axis=1).data
