"""Checkpoint files

Layout:
    DTSL-CHECKPOINT 1
    architecture=<plain|residual>
    num_classes=<K>
    base_channels=<C>
    params=<N>
    <name> <d0>x<d1>x...      (N lines, in parameter order)
    END
    <N raw blocks of little-endian float64, same order, row-major>
"""
import os
import numpy as np
from collections import OrderedDict

from dtsl.models.network import ArchitectureKind, ModelParams, create_network
from dtsl.tensor import Tensor

MAGIC = "DTSL-CHECKPOINT 1"


def save_checkpoint(params: ModelParams, path: str) -> str:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)

    lines = [
        MAGIC,
        f"architecture={params.architecture.value}",
        f"num_classes={params.num_classes}",
        f"base_channels={params.base_channels}",
        f"params={len(params)}",
    ]
    for name, t in params:
        lines.append(f"{name} {'x'.join(str(d) for d in t.shape)}")
    lines.append("END")

    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, t in params:
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: str, requires_grad: bool = False) -> ModelParams:
    with open(path, "rb") as f:
        raw = f.read()

    marker = b"\nEND\n"
    end = raw.find(marker)
    if not raw.startswith(MAGIC.encode("ascii")) or end < 0:
        raise ValueError(f"{path}: not a DTSL checkpoint")
    header = raw[:end].decode("ascii").split("\n")
    body = raw[end + len(marker):]

    fields = {}
    for line in header[1:5]:
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        kind = ArchitectureKind.parse(fields["architecture"])
        num_classes = int(fields["num_classes"])
        base_channels = int(fields["base_channels"])
        count = int(fields["params"])

        layout = []
        for line in header[5:5 + count]:
            name, dims = line.rsplit(" ", 1)
            layout.append((name, tuple(int(d) for d in dims.split("x"))))
        expected = create_network(kind, num_classes, base_channels).param_shapes()
    except KeyError as e:
        raise ValueError(f"{path}: checkpoint header missing {e.args[0]}") from None
    except ValueError as e:
        raise ValueError(f"{path}: malformed checkpoint header ({e})") from None

    if layout != expected:
        raise ValueError(f"{path}: parameter layout does not match a {kind.value} network "
                         f"with K={num_classes}, base_channels={base_channels}")

    tensors = OrderedDict()
    offset = 0
    for name, shape in layout:
        n = int(np.prod(shape)) * 8
        if offset + n > len(body):
            raise ValueError(f"{path}: truncated at parameter {name}")
        data = np.frombuffer(body[offset:offset + n], dtype="<f8").reshape(shape).astype(np.float64)
        tensors[name] = Tensor(data, requires_grad=requires_grad)
        offset += n
    if offset != len(body):
        raise ValueError(f"{path}: {len(body) - offset} trailing bytes")

    return ModelParams(kind, num_classes, base_channels, tensors)
