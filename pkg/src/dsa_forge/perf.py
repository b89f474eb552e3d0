"""Analytic throughput, efficiency and model-size model.

All arithmetic is exact (``fractions.Fraction``); rounding happens only
when a report is rendered.  One MAC counts as two ops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .graph import Conv3x3, Dense, ModelGraph, validate

ENGINES = 16
MAC_UNITS = ENGINES * 42 * 42  # 28224 == 16 engines x 14x14 positions x 9 taps
SRAM_BYTES = 9 * 2**20
STORED_COEF_BITS = 16
PACKED_COEF_BITS = 15

DEFAULT_FREQ_HZ = 66_000_000
WORST_CASE_WATTS = Fraction(2, 5)
BENCH_VOLTS = Fraction("0.904")
BENCH_AMPS = Fraction("0.15")
BENCH_WATTS = BENCH_VOLTS * BENCH_AMPS  # 0.1356 W measured on the test bench

# Published figures kept for report footnotes; none of them is computed here.
MEASURED_FPS = Fraction("142.86")
PUBLISHED_SIZES_MB = {"VGG-16": Fraction("58.9"), "Gnet-1": Fraction("5.5"), "Gnet-2": Fraction("2.8")}


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class LayerOps:
    index: int
    kind: str
    in_ch: int
    out_ch: int
    out_hw: tuple
    macs: int
    on_chip: bool


def count_ops(g: ModelGraph, input_shape=None) -> list[LayerOps]:
    """Per-layer MAC counts of a lowered graph.

    Convolutions cost ``H_out * W_out * in_ch * out_ch * 9`` (pre-pooling
    output size); dense layers run on the host and are flagged off-chip.
    """
    if input_shape is not None and tuple(input_shape) != g.input_shape:
        g = ModelGraph(tuple(input_shape), g.layers, g.params, g.quantized)
    shapes = validate(g)
    out = []
    prev = g.input_shape
    for i, (layer, shape) in enumerate(zip(g.layers, shapes)):
        if isinstance(layer, Conv3x3):
            if layer.in_ch < 1 or layer.out_ch < 1:
                raise ValueError(f"layer {i} has a zero-channel convolution")
            h, w = prev[1:]
            if layer.padding == "valid":
                h, w = h - 2, w - 2
            out.append(LayerOps(i, "conv3x3", layer.in_ch, layer.out_ch, (h, w),
                                h * w * layer.in_ch * layer.out_ch * 9, True))
        elif isinstance(layer, Dense):
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise ValueError(f"layer {i} has a zero-width dense layer")
            out.append(LayerOps(i, "dense", layer.in_dim, layer.out_dim, (1, 1),
                                layer.in_dim * layer.out_dim, False))
        else:
            raise ValueError(f"layer {i} is {type(layer).__name__}; lower the graph first")
        prev = shape
    return out


def peak_throughput(freq_hz) -> Fraction:
    """Peak ops/s with every MAC unit busy."""
    freq = _exact(freq_hz)
    if freq <= 0:
        raise ValueError("frequency must be positive")
    return MAC_UNITS * 2 * freq


def tops_per_watt(freq_hz, watts) -> Fraction:
    watts = _exact(watts)
    if watts <= 0:
        raise ValueError("power must be positive")
    return peak_throughput(freq_hz) / watts / 10**12


def on_chip_macs(g: ModelGraph) -> int:
    return sum(op.macs for op in count_ops(g) if op.on_chip)


def fps_upper_bound(g: ModelGraph, freq_hz, utilization=1) -> Fraction:
    """Frames/s if the MAC array never idles (optionally derated)."""
    macs = on_chip_macs(g)
    if macs == 0:
        raise ValueError("graph has no on-chip convolutions")
    return _exact(freq_hz) * MAC_UNITS * _exact(utilization) / macs


def coefficient_count(g: ModelGraph) -> int:
    """Convolution weights held on chip (biases excluded)."""
    validate(g)
    return sum(layer.kernels.weights.size for layer in g.layers if isinstance(layer, Conv3x3))


def model_size(g: ModelGraph, bits_per_weight: int = PACKED_COEF_BITS) -> int:
    return math.ceil(coefficient_count(g) * bits_per_weight / 8)


@dataclass(frozen=True)
class SramFit:
    stored_bytes: int
    capacity: int

    @property
    def fits(self) -> bool:
        return self.stored_bytes <= self.capacity

    def __str__(self) -> str:
        verdict = "fits" if self.fits else "does NOT fit"
        return f"{self.stored_bytes} B at {STORED_COEF_BITS}-bit words {verdict} in {self.capacity} B SRAM"


def sram_fit(g: ModelGraph) -> SramFit:
    return SramFit(model_size(g, STORED_COEF_BITS), SRAM_BYTES)


@dataclass
class PerfReport:
    freq_hz: Fraction
    watts: Fraction
    layers: list = field(default_factory=list)
    total_macs: int = 0
    host_macs: int = 0
    peak_ops: Fraction = Fraction(0)
    tops_per_watt: Fraction = Fraction(0)
    fps_upper_bound: Fraction | None = None
    packed_bytes: int = 0
    stored_bytes: int = 0
    sram: SramFit | None = None

    @property
    def total_ops(self) -> int:
        return 2 * self.total_macs

    def to_dict(self) -> dict:
        return {
            "freq_hz": float(self.freq_hz),
            "watts": float(self.watts),
            "mac_units": MAC_UNITS,
            "layers": [
                {"index": op.index, "kind": op.kind, "in_ch": op.in_ch, "out_ch": op.out_ch,
                 "out_hw": list(op.out_hw), "macs": op.macs, "on_chip": op.on_chip}
                for op in self.layers
            ],
            "total_macs": self.total_macs,
            "total_ops": self.total_ops,
            "host_macs": self.host_macs,
            "peak_ops_per_s": float(self.peak_ops),
            "tops_per_watt": float(self.tops_per_watt),
            "tops_per_watt_exact": str(self.tops_per_watt),
            "fps_upper_bound": None if self.fps_upper_bound is None else float(self.fps_upper_bound),
            "coefficient_bytes_15bit": self.packed_bytes,
            "coefficient_bytes_16bit": self.stored_bytes,
            "sram_bytes": SRAM_BYTES,
            "sram_fit": self.sram.fits if self.sram else None,
            "reference": {
                "measured_fps": float(MEASURED_FPS),
                "bench_watts": float(BENCH_WATTS),
                "published_sizes_mb": {k: float(v) for k, v in PUBLISHED_SIZES_MB.items()},
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        rows = [("layer", "kind", "in", "out", "HxW", "MACs")]
        for op in self.layers:
            kind = op.kind if op.on_chip else f"{op.kind} (host)"
            rows.append((str(op.index), kind, str(op.in_ch), str(op.out_ch),
                         f"{op.out_hw[0]}x{op.out_hw[1]}", f"{op.macs:,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        fps = "n/a" if self.fps_upper_bound is None else f"{float(self.fps_upper_bound):.2f} fps"
        lines += [
            "",
            f"on-chip MACs:        {self.total_macs:,} ({self.total_ops:,} ops)",
            f"host MACs:           {self.host_macs:,}",
            f"MAC units:           {MAC_UNITS}",
            f"clock:               {float(self.freq_hz) / 1e6:g} MHz",
            f"peak throughput:     {float(self.peak_ops):.4e} ops/s",
            f"power:               {float(self.watts):g} W",
            f"efficiency:          {float(self.tops_per_watt):.1f} TOPS/Watt",
            f"fps upper bound:     {fps}",
            f"coefficients 15-bit: {self.packed_bytes:,} B",
            f"coefficients 16-bit: {self.stored_bytes:,} B",
            f"SRAM:                {self.sram}",
            "",
            "notes:",
            f"  measured on silicon: {float(MEASURED_FPS)} fps at 66 MHz, "
            f"{float(BENCH_WATTS)} W bench power (reference only, not modelled)",
            "  published compressed sizes "
            + ", ".join(f"{k} {float(v)} MB" for k, v in PUBLISHED_SIZES_MB.items())
            + " are not derivable from 15-bit coefficients; the sizes above are what this format stores",
        ]
        return "\n".join(lines) + "\n"


def perf_report(g: ModelGraph, freq_hz=DEFAULT_FREQ_HZ, watts=WORST_CASE_WATTS) -> PerfReport:
    layers = count_ops(g)
    on_chip = sum(op.macs for op in layers if op.on_chip)
    return PerfReport(
        freq_hz=_exact(freq_hz),
        watts=_exact(watts),
        layers=layers,
        total_macs=on_chip,
        host_macs=sum(op.macs for op in layers if not op.on_chip),
        peak_ops=peak_throughput(freq_hz),
        tops_per_watt=tops_per_watt(freq_hz, watts),
        fps_upper_bound=fps_upper_bound(g, freq_hz) if on_chip else None,
        packed_bytes=model_size(g, PACKED_COEF_BITS),
        stored_bytes=model_size(g, STORED_COEF_BITS),
        sram=sram_fit(g),
    )
