"""Image input and feature-dump files.

Images are binary netpbm (P5 greyscale, P6 RGB, maxval <= 255) or a raw
tensor: an ASCII header line ``C H W`` followed by ``C*H*W`` bytes in
channel-major order.

Feature files start with one JSON header line::

    {"format": "dsa-features", "version": 1, "shape": [C, H, W],
     "encoding": "dsfp-act-unsigned" | "dsfp-act-signed" | "float64-le",
     "act_bias": 12}

followed by the payload: 16-bit little-endian activation words for the
DSFP encodings, or little-endian doubles.  A ``.txt`` summary is written
beside every feature file.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import dsfp
from .dsfp import FormatParams
from .graph import atomic_write

FEATURE_FORMAT = "dsa-features"


class FileFormatError(ValueError):
    pass


def _netpbm_tokens(data: bytes, count: int) -> tuple[list, int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FileFormatError("truncated netpbm header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # one whitespace byte ends the header


def read_image(path) -> np.ndarray:
    """Load an image as a ``(C, H, W)`` uint8 array."""
    data = Path(path).read_bytes()
    if data[:2] in (b"P5", b"P6"):
        (magic, w, h, maxval), pos = _netpbm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
        if maxval > 255:
            raise FileFormatError("only 8-bit netpbm images are supported")
        c = 1 if magic == b"P5" else 3
        pix = np.frombuffer(data, dtype=np.uint8, count=c * h * w, offset=pos) \
            if len(data) - pos >= c * h * w else None
        if pix is None:
            raise FileFormatError(f"netpbm payload shorter than {c}x{h}x{w}")
        return pix.reshape(h, w, c).transpose(2, 0, 1).copy()
    nl = data.find(b"\n")
    try:
        c, h, w = (int(t) for t in data[:nl].split())
    except ValueError:
        raise FileFormatError(f"{path}: not a netpbm image or raw 'C H W' tensor") from None
    payload = data[nl + 1:]
    if len(payload) != c * h * w:
        raise FileFormatError(f"raw tensor payload has {len(payload)} bytes, expected {c * h * w}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(c, h, w).copy()


def write_raw_image(path, pixels) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    c, h, w = pixels.shape
    atomic_write(path, f"{c} {h} {w}\n".encode() + pixels.tobytes())


def write_netpbm(path, pixels) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise ValueError("netpbm holds 1 or 3 channels")
    magic = "P5" if c == 1 else "P6"
    atomic_write(path, f"{magic}\n{w} {h}\n255\n".encode() + pixels.transpose(1, 2, 0).tobytes())


def _summary(values: np.ndarray, header: dict) -> str:
    lines = [
        f"shape: {' x '.join(map(str, values.shape))}",
        f"encoding: {header['encoding']}",
        f"min: {values.min():.6g}",
        f"max: {values.max():.6g}",
        f"mean: {values.mean():.6g}",
        f"nonzero: {int(np.count_nonzero(values))} / {values.size}",
    ]
    if values.shape[1:] == (1, 1):
        lines.append(f"argmax: {int(np.argmax(values.reshape(-1)))}")
    return "\n".join(lines) + "\n"


def write_features(path, values=None, *, steps=None, signed: bool = False,
                   params: FormatParams | None = None) -> None:
    """Write float features (``values``) or DSFP activations (``steps``)."""
    path = Path(path)
    if steps is not None:
        params = params or FormatParams()
        steps = np.asarray(steps)
        header = {"format": FEATURE_FORMAT, "version": 1, "shape": list(steps.shape),
                  "encoding": "dsfp-act-signed" if signed else "dsfp-act-unsigned",
                  "act_bias": params.act_bias}
        payload = dsfp.activation_words(steps, signed).tobytes()
        decoded = dsfp.activation_values(steps, params)
    else:
        decoded = np.asarray(values, dtype=np.float64)
        header = {"format": FEATURE_FORMAT, "version": 1, "shape": list(decoded.shape),
                  "encoding": "float64-le"}
        payload = decoded.astype("<f8").tobytes()
    atomic_write(path, json.dumps(header, sort_keys=True).encode() + b"\n" + payload)
    atomic_write(path.with_name(path.name + ".txt"), _summary(decoded, header))


def read_features(path) -> np.ndarray:
    """Load a feature file as float64 values."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    try:
        header = json.loads(data[:nl])
        if header.get("format") != FEATURE_FORMAT:
            raise FileFormatError(f"{path}: not a feature file")
        shape = tuple(header["shape"])
        encoding = header["encoding"]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, AttributeError):
        raise FileFormatError(f"{path}: bad feature header") from None
    payload = data[nl + 1:]
    n = int(np.prod(shape))
    if encoding == "float64-le":
        if len(payload) != 8 * n:
            raise FileFormatError(f"{path}: payload size mismatch")
        return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if encoding in ("dsfp-act-signed", "dsfp-act-unsigned"):
        if len(payload) != 2 * n:
            raise FileFormatError(f"{path}: payload size mismatch")
        words = np.frombuffer(payload, dtype="<u2")
        steps = dsfp.activation_steps_from_words(words, encoding == "dsfp-act-signed")
        return dsfp.activation_values(steps, FormatParams(act_bias=int(header["act_bias"]))).reshape(shape)
    raise FileFormatError(f"{path}: unknown encoding {encoding!r}")
