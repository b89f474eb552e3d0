"""Model IR, shape validation and the manifest + weight-blob bundle format."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Union

import numpy as np

from . import dsfp
from .dsfp import FormatParams
from .tensor import PADDINGS, KernelStack

MANIFEST_VERSION = 1
INPUT_SCALE = 1.0 / 256.0


class GraphError(ValueError):
    """Raised for malformed graphs, manifests and blobs."""


def _equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)
                and a.shape == b.shape and np.array_equal(a, b))
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_equal(x, y) for x, y in zip(a, b))
    return a == b


class _ArrayEq:
    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return all(_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Conv3x3(_ArrayEq):
    kernels: KernelStack
    padding: str = "same"
    relu: bool = True
    pool: bool = False

    def __post_init__(self):
        if self.padding not in PADDINGS:
            raise GraphError(f"unknown padding {self.padding!r}")

    @property
    def in_ch(self) -> int:
        return self.kernels.in_channels

    @property
    def out_ch(self) -> int:
        return self.kernels.out_channels


@dataclass(frozen=True, eq=False)
class ShortcutBlock(_ArrayEq):
    """Identity residual block ``relu(x + W2 * relu(W1 * x))``, same padding."""

    w1: KernelStack
    w2: KernelStack

    def __post_init__(self):
        n = self.w1.out_channels
        for name, k in (("w1", self.w1), ("w2", self.w2)):
            if k.weights.shape[:2] != (n, n):
                raise GraphError(f"shortcut {name} must be square {n}x{n}, got {k.weights.shape[:2]}")

    @property
    def n_ch(self) -> int:
        return self.w1.out_channels

    in_ch = out_ch = n_ch


@dataclass(frozen=True, eq=False)
class DepthwiseSeparable(_ArrayEq):
    depthwise: np.ndarray
    pointwise: np.ndarray
    depthwise_bias: np.ndarray = None
    pointwise_bias: np.ndarray = None
    relu: bool = False

    def __post_init__(self):
        dw = np.asarray(self.depthwise, dtype=np.float64)
        pw = np.asarray(self.pointwise, dtype=np.float64)
        if dw.ndim != 3 or dw.shape[1:] != (3, 3) or dw.shape[0] < 1:
            raise GraphError(f"depthwise kernels must be (P, 3, 3), got {dw.shape}")
        if pw.ndim != 2 or pw.shape[1] != dw.shape[0] or pw.shape[0] < 1:
            raise GraphError(f"pointwise weights must be (Q, {dw.shape[0]}), got {pw.shape}")
        db = np.zeros(dw.shape[0]) if self.depthwise_bias is None else np.asarray(self.depthwise_bias, float)
        pb = np.zeros(pw.shape[0]) if self.pointwise_bias is None else np.asarray(self.pointwise_bias, float)
        if db.shape != (dw.shape[0],) or pb.shape != (pw.shape[0],):
            raise GraphError("depthwise-separable bias length mismatch")
        object.__setattr__(self, "depthwise", dw)
        object.__setattr__(self, "pointwise", pw)
        object.__setattr__(self, "depthwise_bias", db)
        object.__setattr__(self, "pointwise_bias", pb)

    @property
    def p_in(self) -> int:
        return self.depthwise.shape[0]

    @property
    def q_out(self) -> int:
        return self.pointwise.shape[0]

    in_ch = p_in
    out_ch = q_out


@dataclass(frozen=True, eq=False)
class FCHead(_ArrayEq):
    """Classifier head over an ``in_ch x spatial x spatial`` map.

    Executed as ``(spatial - 1) / 2`` unpadded 3x3 stages; the hidden stages
    use ReLU, the last one emits raw logits.  ``stages`` may be ``None`` when
    the weights are yet to be trained.
    """

    spatial: int
    in_ch: int
    hidden: tuple
    out_dim: int
    stages: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.spatial < 3 or self.spatial % 2 == 0:
            raise GraphError(f"FC head spatial size must be odd and >= 3, got {self.spatial}")
        n_stages = (self.spatial - 1) // 2
        if len(self.hidden) != n_stages - 1:
            raise GraphError(
                f"FC head over {self.spatial}x{self.spatial} needs {n_stages - 1} hidden "
                f"stages before the final one, got {len(self.hidden)}")
        if self.stages is not None:
            stages = tuple(self.stages)
            chans = (self.in_ch, *self.hidden, self.out_dim)
            if len(stages) != n_stages:
                raise GraphError(f"FC head expects {n_stages} weight stages, got {len(stages)}")
            for i, k in enumerate(stages):
                if k.weights.shape[:2] != (chans[i + 1], chans[i]):
                    raise GraphError(f"FC head stage {i} kernels have shape {k.weights.shape[:2]}")
            object.__setattr__(self, "stages", stages)

    @property
    def out_ch(self) -> int:
        return self.out_dim

    @property
    def channel_chain(self) -> tuple:
        return (self.in_ch, *self.hidden, self.out_dim)


@dataclass(frozen=True, eq=False)
class Dense(_ArrayEq):
    """Host-side fully-connected layer; reference execution only."""

    weights: np.ndarray
    bias: np.ndarray = None
    relu: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise GraphError(f"dense weights must be (out, in), got {w.shape}")
        b = np.zeros(w.shape[0]) if self.bias is None else np.asarray(self.bias, dtype=np.float64)
        if b.shape != (w.shape[0],):
            raise GraphError("dense bias length mismatch")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    out_ch = out_dim


Layer = Union[Conv3x3, ShortcutBlock, DepthwiseSeparable, FCHead, Dense]


@dataclass(frozen=True, eq=False)
class ModelGraph(_ArrayEq):
    input_shape: tuple
    layers: tuple
    params: FormatParams = field(default_factory=FormatParams)
    quantized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def with_layers(self, layers) -> ModelGraph:
        return replace(self, layers=tuple(layers))


def layer_output_shape(layer: Layer, shape: tuple) -> tuple:
    c, h, w = shape
    if isinstance(layer, Conv3x3):
        if c != layer.in_ch:
            raise GraphError(f"expects {layer.in_ch} input channels, got {c}")
        if layer.padding == "valid":
            if h < 3 or w < 3:
                raise GraphError(f"valid 3x3 convolution on {h}x{w} input")
            h, w = h - 2, w - 2
        if layer.pool:
            if h % 2 or w % 2:
                raise GraphError(f"2x2 pooling on odd {h}x{w} map")
            h, w = h // 2, w // 2
        return (layer.out_ch, h, w)
    if isinstance(layer, ShortcutBlock):
        if c != layer.n_ch:
            raise GraphError(f"shortcut expects {layer.n_ch} channels, got {c}")
        return shape
    if isinstance(layer, DepthwiseSeparable):
        if c != layer.p_in:
            raise GraphError(f"depthwise-separable expects {layer.p_in} channels, got {c}")
        return (layer.q_out, h, w)
    if isinstance(layer, FCHead):
        if (c, h, w) != (layer.in_ch, layer.spatial, layer.spatial):
            raise GraphError(
                f"FC head expects ({layer.in_ch}, {layer.spatial}, {layer.spatial}), got {shape}")
        return (layer.out_dim, 1, 1)
    if isinstance(layer, Dense):
        if c * h * w != layer.in_dim:
            raise GraphError(f"dense layer expects {layer.in_dim} inputs, got {c * h * w}")
        return (layer.out_dim, 1, 1)
    raise GraphError(f"unknown layer type {type(layer).__name__}")


def validate(g: ModelGraph) -> list[tuple]:
    """Return the output shape after every layer.

    Raises :class:`GraphError` naming the first offending layer index.
    """
    if len(g.input_shape) != 3 or min(g.input_shape) < 1:
        raise GraphError(f"input shape must be three positive ints, got {g.input_shape}")
    shape = g.input_shape
    shapes = []
    for i, layer in enumerate(g.layers):
        try:
            shape = layer_output_shape(layer, shape)
        except GraphError as exc:
            raise GraphError(f"layer {i} ({type(layer).__name__}): {exc}") from None
        shapes.append(shape)
    return shapes


def output_shape(g: ModelGraph) -> tuple:
    shapes = validate(g)
    return shapes[-1] if shapes else g.input_shape


def is_vgg_type(g: ModelGraph) -> bool:
    return all(isinstance(layer, Conv3x3) for layer in g.layers)


# -- quantisation ------------------------------------------------------------

def quantize_graph(g: ModelGraph, params: FormatParams | None = None) -> ModelGraph:
    """Round every coefficient onto the DSFP coefficient grid.

    Biases stay real-valued; they are added at requantisation time.
    """
    if not is_vgg_type(g):
        raise GraphError("only VGG-type graphs (3x3 convolutions only) can be quantized")
    validate(g)
    params = params or g.params
    layers = []
    for layer in g.layers:
        w = dsfp.coefficient_values(dsfp.quantize_coefficients(layer.kernels.weights, params), params)
        layers.append(replace(layer, kernels=KernelStack(w, layer.kernels.bias)))
    return ModelGraph(g.input_shape, layers, params, quantized=True)


# -- bundle IO ---------------------------------------------------------------

def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    mode = "w" if isinstance(data, str) else "wb"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, encoding="utf-8" if mode == "w" else None) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _kernel_parts(k: KernelStack) -> list[np.ndarray]:
    return [k.weights, k.bias]


def _layer_record(layer: Layer) -> tuple[dict, list[np.ndarray]]:
    if isinstance(layer, Conv3x3):
        rec = {"kind": "conv3x3", "in_ch": layer.in_ch, "out_ch": layer.out_ch,
               "padding": layer.padding, "relu": layer.relu, "pool": layer.pool}
        return rec, _kernel_parts(layer.kernels)
    if isinstance(layer, ShortcutBlock):
        rec = {"kind": "shortcut", "in_ch": layer.n_ch, "out_ch": layer.n_ch,
               "padding": "same", "relu": True, "pool": False}
        return rec, _kernel_parts(layer.w1) + _kernel_parts(layer.w2)
    if isinstance(layer, DepthwiseSeparable):
        rec = {"kind": "dws", "in_ch": layer.p_in, "out_ch": layer.q_out,
               "padding": "same", "relu": layer.relu, "pool": False}
        return rec, [layer.depthwise, layer.depthwise_bias, layer.pointwise, layer.pointwise_bias]
    if isinstance(layer, FCHead):
        rec = {"kind": "fc_head", "in_ch": layer.in_ch, "out_ch": layer.out_dim,
               "padding": "valid", "relu": False, "pool": False,
               "spatial": layer.spatial, "hidden": list(layer.hidden),
               "has_weights": layer.stages is not None}
        parts = [p for k in layer.stages for p in _kernel_parts(k)] if layer.stages else []
        return rec, parts
    if isinstance(layer, Dense):
        rec = {"kind": "dense", "in_ch": layer.in_dim, "out_ch": layer.out_dim,
               "padding": "valid", "relu": layer.relu, "pool": False}
        return rec, [layer.weights, layer.bias]
    raise GraphError(f"unknown layer type {type(layer).__name__}")


def blob_path_for(manifest_path, quantized: bool) -> Path:
    manifest_path = Path(manifest_path)
    name = manifest_path.name
    stem = name[:-5] if name.endswith(".json") else name
    return manifest_path.with_name(stem + (".dsfp" if quantized else ".bin"))


def save_model(g: ModelGraph, manifest_path) -> tuple[Path, Path]:
    """Write ``manifest_path`` and its weight blob next to it."""
    validate(g)
    manifest_path = Path(manifest_path)
    blob_path = blob_path_for(manifest_path, g.quantized)
    records = []
    chunks = []
    offset = 0
    for layer in g.layers:
        rec, parts = _layer_record(layer)
        if g.quantized:
            if not isinstance(layer, Conv3x3):
                raise GraphError("quantized bundles hold 3x3 convolutions only")
            steps = dsfp.quantize_coefficients(layer.kernels.weights, g.params)
            if not np.array_equal(dsfp.coefficient_values(steps, g.params), layer.kernels.weights):
                raise GraphError("quantized graph holds coefficients off the DSFP grid")
            data = dsfp.coefficient_words(steps.reshape(-1))
            rec["bias"] = [float(b) for b in layer.kernels.bias]
        else:
            data = np.concatenate([np.asarray(p, dtype="<f4").reshape(-1) for p in parts]) \
                if parts else np.zeros(0, dtype="<f4")
        rec["weight_offset"] = offset
        rec["weight_count"] = int(data.size)
        offset += data.size
        records.append(rec)
        chunks.append(data)
    dtype = "<u2" if g.quantized else "<f4"
    blob = np.concatenate(chunks).astype(dtype) if chunks else np.zeros(0, dtype=dtype)
    manifest = {
        "version": MANIFEST_VERSION,
        "input_shape": list(g.input_shape),
        "format_params": {"act_bias": g.params.act_bias, "coef_bias": g.params.coef_bias},
        "quantized": g.quantized,
        "input_scale": INPUT_SCALE,
        "blob": blob_path.name,
        "blob_dtype": "dsfp15-le16" if g.quantized else "float32-le",
        "layers": records,
    }
    atomic_write(blob_path, blob.tobytes())
    atomic_write(manifest_path, json.dumps(manifest, indent=2) + "\n")
    return manifest_path, blob_path


def _take(flat: np.ndarray, pos: int, shape) -> tuple[np.ndarray, int]:
    n = int(np.prod(shape))
    return flat[pos:pos + n].astype(np.float64).reshape(shape), pos + n


def _build_layer(rec: dict, data: np.ndarray, quantized: bool, params: FormatParams) -> Layer:
    kind = rec["kind"]
    cin, cout = int(rec["in_ch"]), int(rec["out_ch"])
    if quantized:
        if kind != "conv3x3":
            raise GraphError(f"quantized bundles hold 3x3 convolutions only, found {kind!r}")
        if data.size != cout * cin * 9:
            raise GraphError(f"layer weight_count {data.size} != {cout}x{cin}x9")
        w = dsfp.coefficient_values(dsfp.coefficient_steps_from_words(data), params)
        bias = np.asarray(rec["bias"], dtype=np.float64)
        return Conv3x3(KernelStack(w.reshape(cout, cin, 3, 3), bias),
                       rec["padding"], bool(rec["relu"]), bool(rec["pool"]))
    pos = 0
    if kind == "conv3x3":
        w, pos = _take(data, pos, (cout, cin, 3, 3))
        b, pos = _take(data, pos, (cout,))
        layer = Conv3x3(KernelStack(w, b), rec["padding"], bool(rec["relu"]), bool(rec["pool"]))
    elif kind == "shortcut":
        ks = []
        for _ in range(2):
            w, pos = _take(data, pos, (cin, cin, 3, 3))
            b, pos = _take(data, pos, (cin,))
            ks.append(KernelStack(w, b))
        layer = ShortcutBlock(*ks)
    elif kind == "dws":
        dw, pos = _take(data, pos, (cin, 3, 3))
        db, pos = _take(data, pos, (cin,))
        pw, pos = _take(data, pos, (cout, cin))
        pb, pos = _take(data, pos, (cout,))
        layer = DepthwiseSeparable(dw, pw, db, pb, bool(rec["relu"]))
    elif kind == "fc_head":
        hidden = tuple(rec["hidden"])
        stages = None
        if rec.get("has_weights"):
            chans = (cin, *hidden, cout)
            stages = []
            for a, b_ in zip(chans[:-1], chans[1:]):
                w, pos = _take(data, pos, (b_, a, 3, 3))
                b, pos = _take(data, pos, (b_,))
                stages.append(KernelStack(w, b))
        layer = FCHead(int(rec["spatial"]), cin, hidden, cout, stages)
    elif kind == "dense":
        w, pos = _take(data, pos, (cout, cin))
        b, pos = _take(data, pos, (cout,))
        layer = Dense(w, b, bool(rec["relu"]))
    else:
        raise GraphError(f"unknown layer kind {kind!r}")
    if pos != data.size:
        raise GraphError(f"{kind} layer weight_count {data.size} does not match its shape ({pos})")
    return layer


def load_model(manifest_path, blob_path=None) -> ModelGraph:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise GraphError(f"manifest not found: {manifest_path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GraphError(f"malformed manifest {manifest_path}: {exc}") from None
    try:
        if manifest["version"] != MANIFEST_VERSION:
            raise GraphError(f"unsupported manifest version {manifest['version']!r}")
        quantized = bool(manifest.get("quantized", False))
        fp = manifest["format_params"]
        params = FormatParams(int(fp["act_bias"]), int(fp["coef_bias"]))
        if blob_path is None:
            blob_path = manifest_path.parent / manifest["blob"]
        blob_path = Path(blob_path)
        if not blob_path.is_file():
            raise GraphError(f"weight blob not found: {blob_path}")
        flat = np.frombuffer(blob_path.read_bytes(), dtype="<u2" if quantized else "<f4")
        layers = []
        end = 0
        for i, rec in enumerate(manifest["layers"]):
            off, count = int(rec["weight_offset"]), int(rec["weight_count"])
            if off < 0 or count < 0 or off + count > flat.size:
                raise GraphError(
                    f"layer {i}: blob holds {flat.size} elements, layer needs [{off}, {off + count})")
            try:
                layers.append(_build_layer(rec, flat[off:off + count], quantized, params))
            except (GraphError, ValueError) as exc:
                raise GraphError(f"layer {i}: {exc}") from None
            end = max(end, off + count)
        if end != flat.size:
            raise GraphError(f"blob holds {flat.size} elements but layers use {end}")
        g = ModelGraph(tuple(manifest["input_shape"]), layers, params, quantized)
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed manifest {manifest_path}: missing or bad field {exc}") from None
    validate(g)
    return g
