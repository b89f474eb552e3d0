"""Functional model of the processing engines and their clock-skew ring.

One engine convolves a 16x16 imagery tile with a 3x3 coefficient block,
producing 14x14 partial sums.  The ring moves every engine's resident tile
to its downstream neighbour at each rotation step.  Simulation is per
rotation step, not per clock cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, dsfp
from .dsfp import FormatParams
from .layout import EMPTY, LayoutPlan

M = 14
TILE = M + 2
MACS_PER_ENGINE_STEP = M * M * 9


@dataclass(frozen=True, eq=False)
class EngineState:
    imagery: np.ndarray  # (16, 16) int32 activation steps
    partials: np.ndarray  # (14, 14) int64 accumulators

    @classmethod
    def empty(cls) -> EngineState:
        return cls(np.zeros((TILE, TILE), np.int32), np.zeros((M, M), np.int64))

    def __post_init__(self):
        if self.imagery.shape != (TILE, TILE) or self.partials.shape != (M, M):
            raise ValueError(f"engine holds a {TILE}x{TILE} tile and {M}x{M} partials")


def engine_conv_step(e: EngineState, block) -> EngineState:
    """Run nine MACs at each of the 14x14 positions with one coefficient block."""
    partials = e.partials.copy()
    _kernels.conv3x3_accumulate(np.ascontiguousarray(e.imagery, np.int32),
                                np.ascontiguousarray(block, np.int32), partials)
    return replace(e, partials=partials)


@dataclass(frozen=True, eq=False)
class RingState:
    tiles: np.ndarray  # (ne, 16, 16) resident imagery per engine
    tags: np.ndarray  # (ne,) resident imagery set id or EMPTY
    partials: np.ndarray  # (ne, 14, 14)
    step: int = 0
    direction: int = 1

    @property
    def ne(self) -> int:
        return self.tiles.shape[0]


def load_ring(plan: LayoutPlan, group: int, tiles: np.ndarray, partials=None) -> RingState:
    """Store imagery group ``group`` one set per engine."""
    ids = np.asarray(plan.imagery_groups[group], dtype=np.int64)
    resident = np.zeros((plan.ne, TILE, TILE), np.int32)
    used = ids != EMPTY
    resident[used] = tiles[ids[used]]
    if partials is None:
        partials = np.zeros((plan.ne, M, M), np.int64)
    return RingState(resident, ids, partials, 0, plan.direction)


def rotate(r: RingState) -> RingState:
    """Every engine sends its tile downstream and receives from upstream."""
    if r.step >= r.ne:
        raise ValueError(f"ring already rotated {r.step} times in this pass")
    return replace(r, tiles=np.roll(r.tiles, r.direction, axis=0),
                   tags=np.roll(r.tags, r.direction), step=r.step + 1)


def _check_accumulation(n_products: int) -> None:
    if n_products > dsfp.MAX_SAFE_PRODUCTS:
        raise OverflowError("accumulator overflow")


@dataclass
class RingResult:
    outputs: np.ndarray  # (nf, 14, 14) or (nf, 7, 7) int32 activation steps
    signed: bool
    engine_steps: int
    trace: list | None = None


def ring_convolve(plan: LayoutPlan, tiles, kernels, bias=None, relu: bool = True,
                  pool: bool = False, params: FormatParams = FormatParams(),
                  trace: bool = False) -> RingResult:
    """Convolve one tile set on the simulated ring.

    ``tiles`` are (nim, 16, 16) activation steps and ``kernels`` are
    (nf, nim, 3, 3) coefficient steps.  Accumulation is exact, so the output
    is bit-identical to :func:`direct_layer` on the same window.
    """
    tiles = np.ascontiguousarray(tiles, np.int32)
    kernels = np.ascontiguousarray(kernels, np.int32)
    nim, nf = tiles.shape[0], kernels.shape[0]
    if tiles.shape[1:] != (TILE, TILE):
        raise ValueError(f"imagery tiles must be {TILE}x{TILE}, got {tiles.shape[1:]}")
    if kernels.shape != (nf, nim, 3, 3):
        raise ValueError(f"kernels {kernels.shape} do not match {nim} imagery sets")
    if (plan.nim, plan.nf) != (nim, nf):
        raise ValueError(f"plan covers nim={plan.nim}, nf={plan.nf}; data has nim={nim}, nf={nf}")
    _check_accumulation(9 * nim)
    bias = np.zeros(nf) if bias is None else np.asarray(bias, dtype=np.float64)

    ne = plan.ne
    partials = np.zeros((plan.n_filter_groups * ne, M, M), np.int64)
    steps = 0
    lines = [] if trace else None
    for gf, subgroups in enumerate(plan.filter_groups):
        group_partials = partials[gf * ne:(gf + 1) * ne]
        for gi, per_engine in enumerate(subgroups):
            fidx = np.zeros((ne, ne), np.int64)
            cidx = np.zeros((ne, ne), np.int64)
            active = np.zeros((ne, ne), np.uint8)
            for e, seq in enumerate(per_engine):
                for t, block in enumerate(seq):
                    if block is not None:
                        fidx[e, t], cidx[e, t] = block
                        active[e, t] = 1
            ring = load_ring(plan, gi, tiles, group_partials)
            for t in range(ne):
                on = active[:, t].astype(bool)
                if np.any(ring.tags[on] != cidx[on, t]):
                    raise RuntimeError(f"schedule incoherent at group {gf}/{gi}, step {t}")
                blocks = kernels[fidx[:, t], cidx[:, t]]
                _kernels.ring_step(ring.tiles, blocks, np.ascontiguousarray(active[:, t]),
                                   ring.partials)
                if lines is not None:
                    for e in np.flatnonzero(on):
                        lines.append(f"step {steps} engine {e} filter {fidx[e, t]} set {cidx[e, t]}")
                steps += 1
                ring = rotate(ring)
    out = dsfp.requantize_steps(partials[:nf], bias[:, None, None], relu, params)
    if pool:
        out = maxpool_steps(out)
    return RingResult(out, not relu, steps, lines)


def maxpool_steps(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling on activation steps (decoding is monotone)."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 pooling needs even height and width, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def direct_accumulate(act, coef, padding: str = "same") -> np.ndarray:
    """Untiled integer convolution; no ring, no layout plan."""
    act = np.asarray(act, np.int32)
    if padding == "same":
        act = np.pad(act, ((0, 0), (1, 1), (1, 1)))
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    _check_accumulation(9 * act.shape[0])
    return _kernels.conv3x3_direct(np.ascontiguousarray(act), np.ascontiguousarray(coef, np.int32))


def direct_layer(act, coef, bias=None, relu: bool = True, pool: bool = False,
                 params: FormatParams = FormatParams(), padding: str = "same") -> np.ndarray:
    acc = direct_accumulate(act, coef, padding)
    bias = np.zeros(acc.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    out = dsfp.requantize_steps(acc, bias[:, None, None], relu, params)
    return maxpool_steps(out) if pool else out
