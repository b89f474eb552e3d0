# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integer convolution kernels for the DSFP datapath.

Activations and coefficients arrive as integer steps; products are exact in
int64.  Loops run without the GIL so tile workers can overlap.
"""

import numpy as np
cimport numpy as cnp

from libc.stdint cimport int32_t, int64_t, uint8_t

cnp.import_array()


cdef inline void _acc_tile(const int32_t[:, ::1] tile, const int32_t[:, ::1] k,
                           int64_t[:, ::1] partial) noexcept nogil:
    cdef Py_ssize_t h = partial.shape[0]
    cdef Py_ssize_t w = partial.shape[1]
    cdef Py_ssize_t y, x, r, c
    cdef int64_t kv
    for r in range(3):
        for c in range(3):
            kv = k[r, c]
            if kv == 0:
                continue
            for y in range(h):
                for x in range(w):
                    partial[y, x] += kv * tile[y + r, x + c]


def conv3x3_accumulate(const int32_t[:, ::1] tile, const int32_t[:, ::1] kernel,
                       int64_t[:, ::1] partial):
    """partial += valid 3x3 correlation of ``tile`` with ``kernel`` (in place)."""
    if tile.shape[0] != partial.shape[0] + 2 or tile.shape[1] != partial.shape[1] + 2:
        raise ValueError("tile must be two pixels larger than the partial grid")
    if kernel.shape[0] != 3 or kernel.shape[1] != 3:
        raise ValueError("kernel must be 3x3")
    with nogil:
        _acc_tile(tile, kernel, partial)


def ring_step(const int32_t[:, :, ::1] tiles, const int32_t[:, :, ::1] blocks,
              const uint8_t[::1] active, int64_t[:, :, ::1] partials):
    """One rotation step: every active engine runs its scheduled block."""
    cdef Py_ssize_t ne = tiles.shape[0]
    cdef Py_ssize_t e
    if blocks.shape[0] != ne or active.shape[0] != ne or partials.shape[0] != ne:
        raise ValueError("engine count mismatch")
    with nogil:
        for e in range(ne):
            if active[e]:
                _acc_tile(tiles[e], blocks[e], partials[e])


def conv3x3_direct(const int32_t[:, :, ::1] src, const int32_t[:, :, :, ::1] kernels):
    """Valid 3x3 correlation of a (C, H+2, W+2) map with (F, C, 3, 3) kernels."""
    cdef Py_ssize_t nf = kernels.shape[0]
    cdef Py_ssize_t nc = kernels.shape[1]
    if src.shape[0] != nc:
        raise ValueError("channel mismatch")
    if src.shape[1] < 3 or src.shape[2] < 3:
        raise ValueError("input smaller than the kernel")
    out_arr = np.zeros((nf, src.shape[1] - 2, src.shape[2] - 2), dtype=np.int64)
    cdef int64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t f, ch
    with nogil:
        for f in range(nf):
            for ch in range(nc):
                _acc_tile(src[ch], kernels[f, ch], out[f])
    return out_arr
