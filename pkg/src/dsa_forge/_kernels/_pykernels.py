"""Numpy fallback with the same contract as the compiled kernels."""

import numpy as np


def _check_tile(tile, partial):
    if tile.shape != (partial.shape[0] + 2, partial.shape[1] + 2):
        raise ValueError("tile must be two pixels larger than the partial grid")


def conv3x3_accumulate(tile, kernel, partial):
    _check_tile(tile, partial)
    if kernel.shape != (3, 3):
        raise ValueError("kernel must be 3x3")
    h, w = partial.shape
    t = tile.astype(np.int64)
    for r in range(3):
        for c in range(3):
            k = int(kernel[r, c])
            if k:
                partial += k * t[r:r + h, c:c + w]


def ring_step(tiles, blocks, active, partials):
    ne = tiles.shape[0]
    if blocks.shape[0] != ne or active.shape[0] != ne or partials.shape[0] != ne:
        raise ValueError("engine count mismatch")
    h, w = partials.shape[1:]
    t = tiles.astype(np.int64)
    k = blocks.astype(np.int64) * active.astype(np.int64)[:, None, None]
    for r in range(3):
        for c in range(3):
            partials += k[:, r, c, None, None] * t[:, r:r + h, c:c + w]


def conv3x3_direct(src, kernels):
    if src.shape[0] != kernels.shape[1]:
        raise ValueError("channel mismatch")
    if src.shape[1] < 3 or src.shape[2] < 3:
        raise ValueError("input smaller than the kernel")
    h, w = src.shape[1] - 2, src.shape[2] - 2
    s = src.astype(np.int64)
    k = kernels.astype(np.int64)
    out = np.zeros((kernels.shape[0], h, w), dtype=np.int64)
    for r in range(3):
        for c in range(3):
            out += np.tensordot(k[:, :, r, c], s[:, r:r + h, c:c + w], axes=1)
    return out
