"""End-to-end inference on the float reference and on the simulated ring."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dsfp
from .dsfp import FormatParams
from .engine import M, TILE, direct_layer, maxpool_steps, ring_convolve
from .graph import (INPUT_SCALE, Conv3x3, Dense, DepthwiseSeparable, FCHead, GraphError,
                    ModelGraph, ShortcutBlock, is_vgg_type, validate)
from .layout import plan_layout
from .tensor import (add_ref, conv3x3_ref, depthwise3x3_ref, inner_product_ref, maxpool2x2_ref,
                     pointwise_ref, relu_ref)


def preprocess(image) -> np.ndarray:
    """Scale 8-bit pixels into [0, 255/256]; float inputs pass through."""
    x = np.asarray(image)
    if x.dtype == np.uint8:
        return x.astype(np.float64) * INPUT_SCALE
    return x.astype(np.float64)


def _check_input(g: ModelGraph, x: np.ndarray) -> None:
    if tuple(x.shape) != g.input_shape:
        raise GraphError(f"image shape {tuple(x.shape)} does not match model input {g.input_shape}")


def reference_layer(layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Conv3x3):
        y = conv3x3_ref(x, layer.kernels, layer.padding)
        if layer.relu:
            y = relu_ref(y)
        return maxpool2x2_ref(y) if layer.pool else y
    if isinstance(layer, ShortcutBlock):
        inner = relu_ref(conv3x3_ref(x, layer.w1))
        return relu_ref(add_ref(x, conv3x3_ref(inner, layer.w2)))
    if isinstance(layer, DepthwiseSeparable):
        y = depthwise3x3_ref(x, layer.depthwise, layer.depthwise_bias)
        y = pointwise_ref(y, layer.pointwise, layer.pointwise_bias)
        return relu_ref(y) if layer.relu else y
    if isinstance(layer, FCHead):
        if layer.stages is None:
            raise GraphError("FC head has no weights to execute")
        for i, k in enumerate(layer.stages):
            x = conv3x3_ref(x, k, "valid")
            if i < len(layer.stages) - 1:
                x = relu_ref(x)
        return x
    if isinstance(layer, Dense):
        y = inner_product_ref(x, layer.weights, layer.out_dim, layer.bias)
        if layer.relu:
            y = relu_ref(y)
        return y.reshape(-1, 1, 1)
    raise GraphError(f"unknown layer type {type(layer).__name__}")


def run_reference(g: ModelGraph, image) -> np.ndarray:
    """Double-precision forward pass; composites run by their direct formulas."""
    validate(g)
    x = preprocess(image)
    _check_input(g, x)
    for layer in g.layers:
        x = reference_layer(layer, x)
    return x


@dataclass
class ActMap:
    """Activation tensor held as DSFP integer steps."""

    steps: np.ndarray
    signed: bool
    params: FormatParams

    def values(self) -> np.ndarray:
        return dsfp.activation_values(self.steps, self.params)


@dataclass
class QuantizedRun:
    output: ActMap
    tiles: list  # tiles processed per layer
    engine_steps: int


def tile_grid(h_out: int, w_out: int) -> tuple[int, int]:
    return math.ceil(h_out / M), math.ceil(w_out / M)


def tiled_layer(act: np.ndarray, coef: np.ndarray, bias, relu: bool, padding: str,
                params: FormatParams, ne: int = 16, threads: int = 1):
    """Run one convolution as 14x14-output tiles over 16x16 halo windows.

    Returns ``(steps, tile_count, engine_steps)``; pooling is left to the
    caller so it never straddles tile seams.
    """
    src = np.pad(act, ((0, 0), (1, 1), (1, 1))) if padding == "same" else act
    c, h_src, w_src = src.shape
    h_out, w_out = h_src - 2, w_src - 2
    if h_out < 1 or w_out < 1:
        raise GraphError(f"{padding} convolution on {act.shape[1]}x{act.shape[2]} input")
    ny, nx = tile_grid(h_out, w_out)
    ext = np.zeros((c, ny * M + 2, nx * M + 2), np.int32)
    ext[:, :h_src, :w_src] = src
    plan = plan_layout(c, coef.shape[0], ne)

    def one(pos):
        ty, tx = pos
        window = ext[:, ty * M:ty * M + TILE, tx * M:tx * M + TILE]
        return ring_convolve(plan, window, coef, bias, relu, False, params)

    positions = [(ty, tx) for ty in range(ny) for tx in range(nx)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, positions))
    else:
        results = [one(p) for p in positions]
    out = np.zeros((coef.shape[0], ny * M, nx * M), np.int32)
    engine_steps = 0
    for (ty, tx), res in zip(positions, results):
        out[:, ty * M:(ty + 1) * M, tx * M:(tx + 1) * M] = res.outputs
        engine_steps += res.engine_steps
    return out[:, :h_out, :w_out], len(positions), engine_steps


def run_quantized(g: ModelGraph, image, params: FormatParams | None = None, *,
                  tiled: bool = True, ne: int = 16, threads: int = 1) -> QuantizedRun:
    """Run a VGG-type graph in the DSFP domain.

    With ``tiled=False`` each layer is one untiled integer convolution, which
    serves as the oracle for the ring path.
    """
    if not is_vgg_type(g):
        raise GraphError("quantized execution needs a VGG-type graph; run the lowering passes first")
    validate(g)
    params = params or g.params
    x = preprocess(image)
    _check_input(g, x)
    act = dsfp.quantize_activations(x, params, signed=False)
    signed = False
    tiles = []
    engine_steps = 0
    for layer in g.layers:
        coef = dsfp.quantize_coefficients(layer.kernels.weights, params)
        bias = layer.kernels.bias
        if tiled:
            act, n_tiles, n_steps = tiled_layer(act, coef, bias, layer.relu, layer.padding,
                                                params, ne, threads)
            if layer.pool:
                act = maxpool_steps(act)
            tiles.append(n_tiles)
            engine_steps += n_steps
        else:
            act = direct_layer(act, coef, bias, layer.relu, layer.pool, params, layer.padding)
        signed = not layer.relu
    return QuantizedRun(ActMap(act, signed, params), tiles, engine_steps)


@dataclass
class ErrorReport:
    max_abs: float
    max_rel: float
    mean_abs: float
    argmax_agree: bool | None

    def summary(self) -> str:
        agree = "n/a" if self.argmax_agree is None else str(self.argmax_agree).lower()
        return (f"max_abs {self.max_abs:.6g}\nmax_rel {self.max_rel:.6g}\n"
                f"mean_abs {self.mean_abs:.6g}\nargmax_agree {agree}\n")


def compare(a, b) -> ErrorReport:
    """Elementwise error statistics; relative error uses max(|a|, |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
    agree = None
    if a.ndim == 3 and a.shape[1:] == (1, 1):
        agree = bool(np.argmax(a.reshape(-1)) == np.argmax(b.reshape(-1)))
    return ErrorReport(float(diff.max(initial=0.0)), float(rel.max(initial=0.0)),
                       float(diff.mean()) if diff.size else 0.0, agree)
