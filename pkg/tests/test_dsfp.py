import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsa_forge import dsfp
from dsa_forge.dsfp import (ActCode, CoefCode, FormatParams, decode_activation, decode_coefficient,
                            encode_activation, encode_coefficient, mac, requantize)

P = FormatParams()


def _enumerate(kind, p=P):
    """(value, canonical code) for every code of a format, straight from decode."""
    if kind == "act":
        codes = dsfp.all_activation_codes(False)
        dec = [decode_activation(c, p) for c in codes]
    elif kind == "act_signed":
        codes = dsfp.all_activation_codes(True)
        dec = [decode_activation(c, p) for c in codes]
    else:
        codes = dsfp.all_coefficient_codes()
        dec = [decode_coefficient(c, p) for c in codes]
    return np.array(dec), codes


def oracle_nearest(x, values, mantissas):
    """Exhaustive nearest search; ties go to the even mantissa."""
    d = np.abs(values - x)
    best = d.min()
    cands = np.flatnonzero(d == best)
    vals = set(values[cands])
    if len(vals) == 1:
        return values[cands[0]]
    even = [values[i] for i in cands if mantissas[i] % 2 == 0]
    assert len(set(even)) == 1
    return even[0]


@pytest.fixture(scope="module")
def tables():
    out = {}
    for kind in ("act", "act_signed", "coef"):
        values, codes = _enumerate(kind)
        canon = [c.canonical() for c in codes]
        out[kind] = (values, np.array([c.mantissa for c in canon]))
    return out


# -- worked examples -----------------------------------------------------------

def test_zero_is_canonical():
    assert encode_activation(0.0, P) == ActCode(0, 0)
    assert decode_activation(ActCode(0, 0), P) == 0.0
    assert encode_coefficient(0.0, P) == CoefCode(1, 0, 0)
    assert encode_coefficient(-0.0, P) == CoefCode(1, 0, 0)


def test_activation_examples():
    c = encode_activation(1.0, P, signed=False)
    assert (c.mantissa, c.exponent) == (16, 8)
    assert decode_activation(c, P) == 1.0
    assert encode_activation(1e6, P, signed=False) == ActCode(31, 15)
    assert decode_activation(ActCode(31, 15), P) == 248.0
    assert decode_activation(ActCode(16, 8), P) == 1.0


def test_coefficient_examples():
    assert encode_coefficient(1.0, P) == CoefCode(1, 2048, 3)
    assert decode_coefficient(CoefCode(1, 2048, 3), P) == 1.0
    neg = encode_coefficient(-0.5, P)
    assert decode_coefficient(neg, P) == -0.5
    # smallest-exponent canonical form; (-, 1024, 3) decodes to the same value
    assert neg == CoefCode(-1, 2048, 2)
    assert neg == CoefCode(-1, 1024, 3).canonical()


def test_mac_examples():
    one_a = encode_activation(1.0, P)
    one_c = encode_coefficient(1.0, P)
    assert dsfp.decode_accumulator(mac(0, one_a, one_c), P) == 1.0
    assert mac(0, ActCode(0, 0), CoefCode(-1, 4095, 3)) == 0
    acc = 0
    for _ in range(9):
        acc = mac(acc, one_a, one_c)
    assert acc == 9 << P.acc_shift
    assert dsfp.decode_accumulator(acc, P) == 9.0


def test_mac_overflow():
    with pytest.raises(OverflowError, match="accumulator overflow"):
        mac(dsfp.ACC_MAX, ActCode(1, 0), CoefCode(1, 1, 0))
    with pytest.raises(OverflowError, match="accumulator overflow"):
        mac(dsfp.ACC_MIN, ActCode(1, 0), CoefCode(-1, 1, 0))


def test_requantize_examples():
    s = P.acc_shift
    assert requantize(int(-3.5 * 2**s), 0.0, True, P) == ActCode(0, 0)
    nine = requantize(9 << s, 0.0, True, P)
    assert decode_activation(nine, P) == 9.0 and not nine.signed
    neg = requantize(-(1 << s), 0.0, False, P)
    assert neg == ActCode(8, 9, -1, True)
    assert decode_activation(neg, P) == -1.0


def test_requantize_adds_bias():
    c = requantize(1 << P.acc_shift, 0.5, True, P)
    assert decode_activation(c, P) == 1.5


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError, match="non-finite value"):
        encode_activation(bad, P)
    with pytest.raises(ValueError, match="non-finite value"):
        encode_coefficient(bad, P)


def test_unsigned_clamps_negative():
    assert encode_activation(-3.0, P, signed=False) == ActCode(0, 0)


@pytest.mark.parametrize("kwargs", [dict(mantissa=32, exponent=0), dict(mantissa=0, exponent=16),
                                    dict(mantissa=16, exponent=0, signed=True),
                                    dict(mantissa=1, exponent=0, sign=-1)])
def test_invalid_act_codes(kwargs):
    with pytest.raises(ValueError):
        ActCode(**kwargs)


def test_invalid_coef_codes():
    with pytest.raises(ValueError):
        CoefCode(1, 4096, 0)
    with pytest.raises(ValueError):
        CoefCode(1, 0, 4)
    with pytest.raises(ValueError):
        CoefCode(0, 1, 0)


def test_ranges():
    assert dsfp.max_activation(P) == 248.0
    assert dsfp.max_activation(P, signed=True) == 15 * 2.0**3
    assert dsfp.max_coefficient(P) == 4095 * 2.0**-11


# -- exhaustive invariants ---------------------------------------------------

def test_code_counts():
    assert len(dsfp.all_activation_codes(False)) == 512
    assert len(dsfp.all_activation_codes(True)) == 512
    assert len(dsfp.all_coefficient_codes()) == 32768


@pytest.mark.parametrize("signed", [False, True])
def test_activation_round_trip_exhaustive(signed):
    for c in dsfp.all_activation_codes(signed):
        assert encode_activation(decode_activation(c, P), P, signed) == c.canonical()


def test_coefficient_round_trip_exhaustive():
    codes = dsfp.all_coefficient_codes()
    values = np.array([decode_coefficient(c, P) for c in codes])
    steps = dsfp.quantize_coefficients(values, P)
    assert np.array_equal(steps, [c.step() for c in codes])
    for c in codes[::97]:
        assert encode_coefficient(decode_coefficient(c, P), P) == c.canonical()


def test_canonical_form_uses_smallest_exponent():
    assert ActCode(1, 12).canonical() == ActCode(16, 8)
    assert ActCode(0, 7).canonical() == ActCode(0, 0)
    assert CoefCode(-1, 0, 3).canonical() == CoefCode(1, 0, 0)


@pytest.mark.parametrize("kind", ["act", "act_signed", "coef"])
def test_nearest_rounding_against_enumeration(kind, tables, rng):
    values, mantissas = tables[kind]
    top = values.max()
    xs = np.concatenate([
        rng.uniform(-1.2 * top, 1.2 * top, 3000),
        rng.normal(0.0, 0.05, 1000),
        # exact midpoints between neighbours to exercise tie-breaking
        (np.unique(values)[:-1] + np.unique(values)[1:])[::7] / 2,
    ])
    if kind == "coef":
        got = dsfp.coefficient_values(dsfp.quantize_coefficients(xs, P), P)
    else:
        got = dsfp.activation_values(dsfp.quantize_activations(xs, P, signed=kind == "act_signed"), P)
    lo = values.min()
    for x, g in zip(xs, got):
        target = min(max(x, lo), top)
        assert g == oracle_nearest(target, values, mantissas), x


def test_unsigned_ties_to_even():
    # halfway between 1 step (odd mantissa) and 2 steps
    half = 1.5 * 2.0**-12
    assert dsfp.quantize_activations(half, P) == 2
    # halfway between 0 and the smallest step rounds to zero
    assert dsfp.quantize_activations(0.5 * 2.0**-12, P) == 0


# -- property tests ----------------------------------------------------------

finite = st.floats(-300, 300, allow_nan=False, allow_infinity=False)


@given(finite, finite, st.booleans())
def test_activation_monotone(x, y, signed):
    x, y = sorted((x, y))
    a = dsfp.quantize_activations([x, y], P, signed)
    assert a[0] <= a[1]


@given(st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))
def test_coefficient_monotone(x, y):
    x, y = sorted((x, y))
    a = dsfp.quantize_coefficients([x, y], P)
    assert a[0] <= a[1]


code_pair = st.tuples(
    st.builds(ActCode, st.integers(0, 15), st.integers(0, 15), st.sampled_from([1, -1]), st.just(True)),
    st.builds(CoefCode, st.sampled_from([1, -1]), st.integers(0, 4095), st.integers(0, 3)),
)


@settings(max_examples=200)
@given(st.lists(code_pair, min_size=1, max_size=40), st.randoms())
def test_mac_order_independent_and_exact(pairs, rnd):
    exact = sum(Fraction(decode_activation(a, P)) * Fraction(decode_coefficient(c, P)) for a, c in pairs)
    acc = 0
    for a, c in pairs:
        acc = mac(acc, a, c)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    acc2 = 0
    for a, c in shuffled:
        acc2 = mac(acc2, a, c)
    assert acc == acc2
    assert Fraction(acc, 2**P.acc_shift) == exact


# -- word formats ------------------------------------------------------------

def test_coefficient_words_layout():
    w = dsfp.coefficient_words([CoefCode(-1, 2048, 3).step()])
    assert w.dtype == np.dtype("<u2")
    assert int(w[0]) == (1 << 14) | (2048 << 2) | 3
    steps = np.array([c.step() for c in dsfp.all_coefficient_codes()])
    words = dsfp.coefficient_words(steps)
    assert np.all(words < 1 << 15)
    assert np.array_equal(dsfp.coefficient_steps_from_words(words), steps)


@pytest.mark.parametrize("signed", [False, True])
def test_activation_words_round_trip(signed):
    steps = np.array([c.step() for c in dsfp.all_activation_codes(signed)])
    words = dsfp.activation_words(steps, signed)
    assert np.all(words < 1 << 9)
    assert np.array_equal(dsfp.activation_steps_from_words(words, signed), steps)


def test_activation_word_fields():
    # unsigned m=31 (0b11111), e=15: bit 8 carries mantissa bit 4
    assert int(dsfp.activation_words([31 << 15], False)[0]) == (1 << 8) | (15 << 4) | 0xF
    # signed -1.0 = -(8 << 9): bit 8 is the sign
    assert int(dsfp.activation_words([-(8 << 9)], True)[0]) == (1 << 8) | (9 << 4) | 8


def test_word_validation():
    with pytest.raises(ValueError):
        dsfp.coefficient_steps_from_words([1 << 15])
    with pytest.raises(ValueError):
        dsfp.activation_steps_from_words([1 << 9], False)
    with pytest.raises(ValueError):
        dsfp.activation_words([-1], False)


def test_custom_biases():
    p = FormatParams(act_bias=8, coef_bias=12)
    assert decode_activation(encode_activation(1.0, p), p) == 1.0
    assert dsfp.max_activation(p) == 31 * 2.0**7
    assert decode_coefficient(encode_coefficient(-2.0, p), p) == -2.0
