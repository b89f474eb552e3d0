"""CNN domain-specific floating point (DSFP) codecs.

Two storage formats are modelled:

* activations: 9 bits, value ``m * 2**(e - act_bias)`` with a 5-bit
  mantissa and 4-bit exponent (unsigned mode), or sign + 4-bit mantissa +
  4-bit exponent (signed mode, used by layers compiled without ReLU);
* coefficients: 15 bits, value ``sign * m * 2**(e - coef_bias)`` with a
  12-bit mantissa and 2-bit exponent.

There is no implicit leading bit.  Several codes may decode to the same
value; the canonical code is the one with the smallest exponent, and zero is
always ``m = 0, e = 0`` with a positive sign.

Internally, tensors are carried as *integer steps*: the decoded value times
``2**bias``, i.e. ``sign * m * 2**e``.  The canonical code is a function of
the step value, so integer steps and codes are interchangeable and products
of steps land on the fixed accumulator scale ``2**-(act_bias + coef_bias)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

ACT_BITS = 9
COEF_BITS = 15
ACT_EXP_BITS = 4
ACT_MANT_BITS = 5
ACT_SIGNED_MANT_BITS = 4
COEF_MANT_BITS = 12
COEF_EXP_BITS = 2

ACC_MIN = -(1 << 63)
ACC_MAX = (1 << 63) - 1
# 31 * 4095 * 2**(15 + 3) < 2**35, so 2**27 products cannot overflow int64.
MAX_SAFE_PRODUCTS = 1 << 27


@dataclass(frozen=True)
class FormatParams:
    act_bias: int = 12
    coef_bias: int = 14
    act_signed: bool = False

    @property
    def acc_shift(self) -> int:
        """Binary point position of the accumulator."""
        return self.act_bias + self.coef_bias


@dataclass(frozen=True)
class ActCode:
    mantissa: int
    exponent: int
    sign: int = 1
    signed: bool = False

    def __post_init__(self):
        mbits = ACT_SIGNED_MANT_BITS if self.signed else ACT_MANT_BITS
        if not 0 <= self.mantissa < (1 << mbits):
            raise ValueError(f"activation mantissa {self.mantissa} out of range")
        if not 0 <= self.exponent < (1 << ACT_EXP_BITS):
            raise ValueError(f"activation exponent {self.exponent} out of range")
        if self.sign not in (1, -1) or (self.sign == -1 and not self.signed):
            raise ValueError("negative activation codes require signed mode")

    def canonical(self) -> ActCode:
        return _act_code_from_step(self.step(), self.signed)

    def step(self) -> int:
        return self.sign * (self.mantissa << self.exponent)


@dataclass(frozen=True)
class CoefCode:
    sign: int
    mantissa: int
    exponent: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("coefficient sign must be +1 or -1")
        if not 0 <= self.mantissa < (1 << COEF_MANT_BITS):
            raise ValueError(f"coefficient mantissa {self.mantissa} out of range")
        if not 0 <= self.exponent < (1 << COEF_EXP_BITS):
            raise ValueError(f"coefficient exponent {self.exponent} out of range")

    def canonical(self) -> CoefCode:
        return _coef_code_from_step(self.step())

    def step(self) -> int:
        return self.sign * (self.mantissa << self.exponent)


class _Grid:
    """Sorted table of the non-negative magnitudes one format can hold."""

    def __init__(self, mant_bits: int, exp_bits: int):
        self.mant_bits = mant_bits
        self.mant_max = (1 << mant_bits) - 1
        self.exp_max = (1 << exp_bits) - 1
        m = np.arange(self.mant_max + 1, dtype=np.int64)
        mags = np.unique(np.concatenate([m << e for e in range(self.exp_max + 1)]))
        self.steps = mags
        self.max_step = int(mags[-1])
        _, mant = code_fields(mags, mant_bits)
        self.even = (mant & 1) == 0

    def nearest(self, scaled: np.ndarray) -> np.ndarray:
        """Round non-negative scaled magnitudes to the grid.

        Ties go to the neighbour with the even canonical mantissa; values
        beyond the top of the grid saturate.
        """
        s = np.minimum(scaled, float(self.max_step))
        idx = np.searchsorted(self.steps, s, side="right") - 1
        hi_idx = np.minimum(idx + 1, len(self.steps) - 1)
        lo = self.steps[idx]
        hi = self.steps[hi_idx]
        # 2*s vs lo+hi is exact: both sides are dyadic and far below 2**53.
        twice = 2.0 * s
        mid = (lo + hi).astype(np.float64)
        up = (twice > mid) | ((twice == mid) & self.even[hi_idx] & (hi != lo))
        return np.where(up, hi, lo)


@lru_cache(maxsize=None)
def _grid(kind: str) -> _Grid:
    if kind == "act":
        return _Grid(ACT_MANT_BITS, ACT_EXP_BITS)
    if kind == "act_signed":
        return _Grid(ACT_SIGNED_MANT_BITS, ACT_EXP_BITS)
    if kind == "coef":
        return _Grid(COEF_MANT_BITS, COEF_EXP_BITS)
    raise KeyError(kind)


def code_fields(steps, mant_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical ``(exponent, mantissa)`` of representable step magnitudes."""
    mag = np.abs(np.asarray(steps, dtype=np.int64))
    mant_max = (1 << mant_bits) - 1
    exp = np.zeros(mag.shape, dtype=np.int64)
    while True:
        need = (mag >> exp) > mant_max
        if not need.any():
            break
        exp += need
    mant = mag >> exp
    if np.any((mant << exp) != mag):
        raise ValueError("value is not representable in this format")
    return exp, mant


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite value")


def _quantize(x, bias: int, kind: str, signed: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    if not signed:
        x = np.maximum(x, 0.0)
    mag = _grid(kind).nearest(np.ldexp(np.abs(x), bias))
    return np.where(x < 0, -mag, mag)


def quantize_activations(x, p: FormatParams, signed: bool | None = None) -> np.ndarray:
    """Round real activations to integer steps (``value * 2**act_bias``).

    In unsigned mode negative inputs clamp to zero.
    """
    if signed is None:
        signed = p.act_signed
    kind = "act_signed" if signed else "act"
    return _quantize(x, p.act_bias, kind, signed).astype(np.int32)


def quantize_coefficients(w, p: FormatParams) -> np.ndarray:
    """Round real filter coefficients to integer steps (``value * 2**coef_bias``)."""
    return _quantize(w, p.coef_bias, "coef", True).astype(np.int32)


def activation_values(steps, p: FormatParams) -> np.ndarray:
    return np.ldexp(np.asarray(steps, dtype=np.float64), -p.act_bias)


def coefficient_values(steps, p: FormatParams) -> np.ndarray:
    return np.ldexp(np.asarray(steps, dtype=np.float64), -p.coef_bias)


def accumulator_values(acc, p: FormatParams) -> np.ndarray:
    return np.ldexp(np.asarray(acc, dtype=np.int64).astype(np.float64), -p.acc_shift)


# -- scalar code API ---------------------------------------------------------

def _act_code_from_step(step: int, signed: bool) -> ActCode:
    exp, mant = code_fields(step, ACT_SIGNED_MANT_BITS if signed else ACT_MANT_BITS)
    return ActCode(int(mant), int(exp), -1 if step < 0 else 1, signed)


def _coef_code_from_step(step: int) -> CoefCode:
    exp, mant = code_fields(step, COEF_MANT_BITS)
    return CoefCode(-1 if step < 0 else 1, int(mant), int(exp))


def encode_activation(x: float, p: FormatParams, signed: bool | None = None) -> ActCode:
    if signed is None:
        signed = p.act_signed
    step = int(quantize_activations(x, p, signed))
    return _act_code_from_step(step, signed)


def decode_activation(c: ActCode, p: FormatParams) -> float:
    return float(np.ldexp(float(c.step()), -p.act_bias))


def encode_coefficient(w: float, p: FormatParams) -> CoefCode:
    return _coef_code_from_step(int(quantize_coefficients(w, p)))


def decode_coefficient(c: CoefCode, p: FormatParams) -> float:
    return float(np.ldexp(float(c.step()), -p.coef_bias))


def mac(acc: int, a: ActCode, c: CoefCode) -> int:
    """One exact multiply-accumulate on the fixed accumulator scale."""
    out = acc + a.step() * c.step()
    if not ACC_MIN <= out <= ACC_MAX:
        raise OverflowError("accumulator overflow")
    return out


def decode_accumulator(acc: int, p: FormatParams) -> float:
    return float(np.ldexp(float(acc), -p.acc_shift))


def requantize_steps(acc, bias, relu: bool, p: FormatParams) -> np.ndarray:
    """Vectorised requantisation of accumulators to activation steps.

    ``bias`` broadcasts against ``acc`` (per-channel biases need a trailing
    axis).  ReLU outputs are stored unsigned, everything else signed.
    """
    v = accumulator_values(acc, p) + np.asarray(bias, dtype=np.float64)
    if relu:
        return quantize_activations(np.maximum(v, 0.0), p, signed=False)
    return quantize_activations(v, p, signed=True)


def requantize(acc: int, bias_term: float, relu: bool, p: FormatParams) -> ActCode:
    step = int(requantize_steps(np.int64(acc), bias_term, relu, p))
    return _act_code_from_step(step, not relu)


# -- enumeration -------------------------------------------------------------

def all_activation_codes(signed: bool = False) -> list[ActCode]:
    if signed:
        return [ActCode(m, e, s, True) for s in (1, -1) for e in range(16) for m in range(16)]
    return [ActCode(m, e) for e in range(16) for m in range(32)]


def all_coefficient_codes() -> list[CoefCode]:
    return [CoefCode(s, m, e) for s in (1, -1) for e in range(4) for m in range(4096)]


def max_activation(p: FormatParams, signed: bool = False) -> float:
    kind = "act_signed" if signed else "act"
    return float(np.ldexp(float(_grid(kind).max_step), -p.act_bias))


def max_coefficient(p: FormatParams) -> float:
    return float(np.ldexp(float(_grid("coef").max_step), -p.coef_bias))


# -- 16-bit word packing -----------------------------------------------------
#
# coefficient word: bit 15 = 0, bit 14 = sign, bits 13..2 = mantissa,
#                   bits 1..0 = exponent
# activation word:  bits 15..9 = 0, bits 7..4 = exponent, bits 3..0 = low
#                   mantissa nibble; bit 8 = sign (signed mode) or mantissa
#                   bit 4 (unsigned mode)

def coefficient_words(steps) -> np.ndarray:
    steps = np.asarray(steps, dtype=np.int64)
    exp, mant = code_fields(steps, COEF_MANT_BITS)
    sign = (steps < 0).astype(np.int64)
    return ((sign << 14) | (mant << 2) | exp).astype("<u2")


def coefficient_steps_from_words(words) -> np.ndarray:
    w = np.asarray(words, dtype=np.int64)
    if np.any(w >> 15):
        raise ValueError("coefficient word has bit 15 set")
    mant = (w >> 2) & 0xFFF
    exp = w & 0x3
    mag = mant << exp
    return np.where((w >> 14) & 1, -mag, mag).astype(np.int32)


def activation_words(steps, signed: bool) -> np.ndarray:
    steps = np.asarray(steps, dtype=np.int64)
    if not signed and np.any(steps < 0):
        raise ValueError("negative activation in unsigned mode")
    exp, mant = code_fields(steps, ACT_SIGNED_MANT_BITS if signed else ACT_MANT_BITS)
    top = (steps < 0).astype(np.int64) if signed else (mant >> 4) & 1
    return ((top << 8) | (exp << 4) | (mant & 0xF)).astype("<u2")


def activation_steps_from_words(words, signed: bool) -> np.ndarray:
    w = np.asarray(words, dtype=np.int64)
    if np.any(w >> 9):
        raise ValueError("activation word uses bits above bit 8")
    exp = (w >> 4) & 0xF
    low = w & 0xF
    if signed:
        mag = low << exp
        return np.where((w >> 8) & 1, -mag, mag).astype(np.int32)
    return ((((w >> 8) & 1) << 4 | low) << exp).astype(np.int32)
