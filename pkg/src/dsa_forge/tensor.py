"""Double-precision reference operators.

Feature maps are ``float64`` arrays shaped ``(channels, height, width)``.
Convolution is cross-correlation (no kernel flip), matching the usual CNN
framework convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PADDINGS = ("same", "valid")


@dataclass(frozen=True, eq=False)
class KernelStack:
    """``out_channels x in_channels`` 3x3 kernels plus one bias per output."""

    weights: np.ndarray
    bias: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ValueError(f"kernel stack must be (out, in, 3, 3), got {w.shape}")
        b = np.zeros(w.shape[0]) if self.bias is None else np.asarray(self.bias, dtype=np.float64)
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias length {b.shape} does not match {w.shape[0]} outputs")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite kernel values")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other):
        if not isinstance(other, KernelStack):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))


def as_feature_map(x) -> np.ndarray:
    fm = np.asarray(x, dtype=np.float64)
    if fm.ndim != 3 or 0 in fm.shape:
        raise ValueError(f"feature map must be a non-empty (C, H, W) array, got {fm.shape}")
    return fm


def conv3x3_ref(fm, k: KernelStack, padding: str = "same") -> np.ndarray:
    fm = as_feature_map(fm)
    if fm.shape[0] != k.in_channels:
        raise ValueError(f"channel mismatch: input has {fm.shape[0]}, kernels expect {k.in_channels}")
    if padding == "same":
        src = np.pad(fm, ((0, 0), (1, 1), (1, 1)))
    elif padding == "valid":
        if fm.shape[1] < 3 or fm.shape[2] < 3:
            raise ValueError("valid convolution needs at least 3x3 input")
        src = fm
    else:
        raise ValueError(f"unknown padding {padding!r}")
    h, w = src.shape[1] - 2, src.shape[2] - 2
    out = np.zeros((k.out_channels, h, w))
    for r in range(3):
        for c in range(3):
            out += np.tensordot(k.weights[:, :, r, c], src[:, r:r + h, c:c + w], axes=1)
    return out + k.bias[:, None, None]


def relu_ref(fm) -> np.ndarray:
    return np.maximum(np.asarray(fm, dtype=np.float64), 0.0)


def maxpool2x2_ref(fm) -> np.ndarray:
    fm = as_feature_map(fm)
    c, h, w = fm.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 pooling needs even height and width, got {h}x{w}")
    return fm.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def add_ref(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    return a + b


def inner_product_ref(fm, weights, out_dim: int, bias=None) -> np.ndarray:
    """Dense projection of the flattened feature map.

    ``weights`` is read row-major as ``(out_dim, C*H*W)``.
    """
    x = np.asarray(fm, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64)
    if w.size != out_dim * x.size:
        raise ValueError(f"weight count {w.size} != {out_dim} x {x.size}")
    y = w.reshape(out_dim, x.size) @ x
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64)
    return y


def depthwise3x3_ref(fm, kernels, bias=None, padding: str = "same") -> np.ndarray:
    """Per-channel 3x3 filtering; ``kernels`` is ``(P, 3, 3)``."""
    fm = as_feature_map(fm)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.shape != (fm.shape[0], 3, 3):
        raise ValueError(f"depthwise kernels {kernels.shape} do not match {fm.shape[0]} channels")
    out = np.concatenate([
        conv3x3_ref(fm[i:i + 1], KernelStack(kernels[i][None, None]), padding)
        for i in range(fm.shape[0])
    ])
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def pointwise_ref(fm, weights, bias=None) -> np.ndarray:
    """1x1 channel mixing; ``weights`` is ``(Q, P)``."""
    fm = as_feature_map(fm)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != fm.shape[0]:
        raise ValueError(f"pointwise weights {weights.shape} do not match {fm.shape[0]} channels")
    out = np.tensordot(weights, fm, axes=1)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[:, None, None]
    return out
