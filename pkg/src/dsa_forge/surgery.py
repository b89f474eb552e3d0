"""Graph passes that rewrite composite layers as plain 3x3 convolutions."""

from __future__ import annotations

import logging

import numpy as np

from .graph import (Conv3x3, Dense, DepthwiseSeparable, FCHead, GraphError, ModelGraph,
                    ShortcutBlock, is_vgg_type, validate)
from .tensor import KernelStack

log = logging.getLogger(__name__)


def impulse_block(n: int) -> np.ndarray:
    """``n x n`` kernels: centre tap 1 on the diagonal, zero everywhere else."""
    w = np.zeros((n, n, 3, 3))
    w[np.arange(n), np.arange(n), 1, 1] = 1.0
    return w


def zero_block(n_out: int, n_in: int | None = None) -> np.ndarray:
    return np.zeros((n_out, n_in if n_in is not None else n_out, 3, 3))


def lower_shortcut(b: ShortcutBlock) -> list[Conv3x3]:
    """Rewrite ``relu(x + W2 * relu(W1 * x))`` as three 3x3 layers.

    The identity path rides along in the upper half of the channels through
    the first two layers, and the last layer sums the halves.  The first
    layer's ReLU is only transparent to the identity path when the block
    input is non-negative.
    """
    n = b.n_ch
    p1 = impulse_block(n)
    p0 = zero_block(n)
    zeros = np.zeros(n)
    layer_a = Conv3x3(
        KernelStack(np.concatenate([b.w1.weights, p1]), np.concatenate([b.w1.bias, zeros])),
        relu=True)
    layer_b = Conv3x3(
        KernelStack(np.concatenate([np.concatenate([b.w2.weights, p0], axis=1),
                                    np.concatenate([p0, p1], axis=1)]),
                    np.concatenate([b.w2.bias, zeros])),
        relu=False)
    layer_c = Conv3x3(KernelStack(np.concatenate([p1, p1], axis=1), zeros), relu=True)
    return [layer_a, layer_b, layer_c]


def lower_depthwise_separable(layer: DepthwiseSeparable) -> list[Conv3x3]:
    p, q = layer.p_in, layer.q_out
    diag = np.zeros((p, p, 3, 3))
    diag[np.arange(p), np.arange(p)] = layer.depthwise
    centre = np.zeros((q, p, 3, 3))
    centre[:, :, 1, 1] = layer.pointwise
    return [
        Conv3x3(KernelStack(diag, layer.depthwise_bias), relu=False),
        Conv3x3(KernelStack(centre, layer.pointwise_bias), relu=layer.relu),
    ]


def lower_fc_head(h: FCHead) -> list[Conv3x3]:
    """Emit the unpadded 3x3 stack that shrinks ``spatial`` down to 1x1.

    This is structural: the stack matches a dense layer's receptive field
    but only trained weights make it compute the same function.  Missing
    weights are replaced by zeros.
    """
    chans = h.channel_chain
    n = len(chans) - 1
    layers = []
    for i in range(n):
        if h.stages is not None:
            k = h.stages[i]
        else:
            k = KernelStack(np.zeros((chans[i + 1], chans[i], 3, 3)))
        layers.append(Conv3x3(k, padding="valid", relu=i < n - 1))
    if h.stages is None:
        log.info("FC head over %dx%d has no weights; emitted zero placeholders", h.spatial, h.spatial)
    return layers


def compress_channels(g: ModelGraph, layer_index: int, k: int) -> ModelGraph:
    """Keep the first ``k`` output channels of the final convolution.

    Dense layers after it are dropped, so the model emits the compressed
    feature map directly.
    """
    validate(g)
    n = len(g.layers)
    if not -n <= layer_index < n:
        raise GraphError(f"layer index {layer_index} out of range for {n} layers")
    layer_index %= n
    target = g.layers[layer_index]
    if not isinstance(target, Conv3x3):
        raise GraphError(f"layer {layer_index} is {type(target).__name__}, not a 3x3 convolution")
    if any(not isinstance(layer, Dense) for layer in g.layers[layer_index + 1:]):
        raise GraphError(f"layer {layer_index} is not the final convolution")
    if not 1 <= k <= target.out_ch:
        raise GraphError(f"cannot keep {k} of {target.out_ch} channels")
    kernels = KernelStack(target.kernels.weights[:k], target.kernels.bias[:k])
    new = Conv3x3(kernels, target.padding, target.relu, target.pool)
    return g.with_layers([*g.layers[:layer_index], new])


def _non_negative_input(g: ModelGraph, index: int) -> bool:
    if index == 0:
        return True  # image pixels
    prev = g.layers[index - 1]
    if isinstance(prev, Conv3x3):
        return prev.relu
    if isinstance(prev, ShortcutBlock):
        return True
    if isinstance(prev, (DepthwiseSeparable, Dense)):
        return prev.relu
    return False


def lower_layer(g: ModelGraph, index: int, report: list | None = None) -> ModelGraph:
    """Lower the composite layer at ``index``; plain convolutions pass through."""
    layer = g.layers[index]
    if isinstance(layer, ShortcutBlock):
        if not _non_negative_input(g, index):
            raise GraphError(f"layer {index}: shortcut lowering needs a non-negative (post-ReLU) input")
        new = lower_shortcut(layer)
        what = f"shortcut N={layer.n_ch}"
    elif isinstance(layer, DepthwiseSeparable):
        new = lower_depthwise_separable(layer)
        what = f"depthwise-separable P={layer.p_in} Q={layer.q_out}"
    elif isinstance(layer, FCHead):
        new = lower_fc_head(layer)
        what = f"fc head S={layer.spatial} channels={list(layer.channel_chain)}"
    else:
        return g
    line = f"layer {index}: {what} -> {len(new)} x conv3x3 " + \
        ", ".join(f"{c.in_ch}->{c.out_ch}{'' if c.relu else ' linear'}" for c in new)
    log.info(line)
    if report is not None:
        report.append(line)
    return g.with_layers([*g.layers[:index], *new, *g.layers[index + 1:]])


def lower_all(g: ModelGraph, report: list | None = None) -> ModelGraph:
    """Lower every composite layer; a VGG-type graph comes back unchanged.

    Dense layers have no on-chip form and are left in place, in which case
    the result is still not VGG-type.
    """
    validate(g)
    i = 0
    while i < len(g.layers):
        before = len(g.layers)
        g = lower_layer(g, i, report)
        i += len(g.layers) - before + 1
    validate(g)
    if not is_vgg_type(g):
        log.info("graph keeps host-side dense layers after lowering")
    return g
