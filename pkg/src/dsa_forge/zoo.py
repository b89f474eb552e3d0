"""Small model builders used by the CLI, tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .graph import Conv3x3, ModelGraph
from .tensor import KernelStack

VGG16_CONV = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]


def vgg_graph(cfg=VGG16_CONV, input_shape=(3, 224, 224), rng=None, scale: float = 0.05) -> ModelGraph:
    """VGG-style conv stack; ``"M"`` marks 2x2 pooling on the preceding conv.

    Weights are zero unless ``rng`` is given.
    """
    layers = []
    cin = input_shape[0]
    for item in cfg:
        if item == "M":
            layers[-1] = Conv3x3(layers[-1].kernels, layers[-1].padding, layers[-1].relu, True)
            continue
        shape = (item, cin, 3, 3)
        w = np.zeros(shape) if rng is None else rng.normal(0.0, scale, shape)
        layers.append(Conv3x3(KernelStack(w.astype(np.float32).astype(np.float64))))
        cin = item
    return ModelGraph(input_shape, layers)


def gnet2_cfg() -> list:
    """VGG-16 with layers 1-10 halved and layers 11-13 kept at 512."""
    out = []
    n = 0
    for item in VGG16_CONV:
        if item == "M":
            out.append(item)
            continue
        n += 1
        out.append(item // 2 if n <= 10 else item)
    return out
