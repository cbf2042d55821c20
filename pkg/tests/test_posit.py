"""Posit-8 codec, DA-Posit modes and the mode-branched multiplier."""

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

import posit_oracle as oracle
from dspe.posit import (
    MAXPOS,
    MINPOS,
    NAR,
    DecodedPosit,
    PositWord,
    Special,
    composite_exponent,
    da_multiply,
    decode_posit,
    detect_mode,
    encode_posit,
    fold,
    oracle_multiply,
    pe_cells_for_mode,
    posit_value,
    to_daposit,
    unfold,
)

codes = st.integers(0, 255)
finite = codes.filter(lambda c: c != NAR)


# ---- codec ---------------------------------------------------------------


@pytest.mark.parametrize(
    "bits, value",
    [
        (0x00, Fraction(0)),
        (0x01, Fraction(1, 2**24)),
        (0x02, Fraction(1, 2**20)),
        (0x30, Fraction(1, 4)),
        (0x3F, Fraction(15, 16)),
        (0x40, Fraction(1)),
        (0x41, Fraction(9, 8)),
        (0x48, Fraction(2)),
        (0x50, Fraction(4)),
        (0x60, Fraction(16)),
        (0x7F, Fraction(2**24)),
        (0xC0, Fraction(-1)),
        (0xFF, Fraction(-1, 2**24)),
    ],
)
def test_decode_known_words(bits, value):
    assert posit_value(bits) == value


def test_nar_and_zero():
    assert decode_posit(NAR).special is Special.NAR
    assert posit_value(NAR) is None
    assert decode_posit(0).special is Special.ZERO
    assert encode_posit(None) == PositWord(NAR)
    assert encode_posit(float("nan")) == PositWord(NAR)
    assert encode_posit(0) == PositWord(0)


def test_extremes():
    assert posit_value(MAXPOS) == 2**24
    assert posit_value(MINPOS) == Fraction(1, 2**24)


@pytest.mark.parametrize("bits", range(256))
def test_decode_matches_string_oracle(bits):
    assert posit_value(bits) == oracle.value_of(bits)


@given(finite)
def test_encode_decode_round_trip(bits):
    assert int(encode_posit(decode_posit(bits))) == bits


@given(st.fractions(min_value=-(2**26), max_value=2**26))
def test_encode_matches_oracle_rounding(v):
    assert int(encode_posit(v)) == oracle.round_to_posit(v)


def test_encode_saturates():
    assert int(encode_posit(2**30)) == MAXPOS
    assert int(encode_posit(Fraction(1, 2**30))) == MINPOS
    assert int(encode_posit(-(2**30))) == (-MAXPOS) & 0xFF


def test_ties_go_to_even():
    # 1.0625 lies halfway between 0x40 (1.0) and 0x41 (1.125)
    assert int(encode_posit(Fraction(17, 16))) == 0x40
    # 1.1875 lies halfway between 0x41 and 0x42 (1.25)
    assert int(encode_posit(Fraction(19, 16))) == 0x42


@given(finite)
def test_negation_is_twos_complement(bits):
    v = posit_value(bits)
    assert posit_value((-bits) & 0xFF) == -v


@given(finite, finite)
def test_order_matches_signed_integer_order(a, b):
    sa = a - 256 if a & 0x80 else a
    sb = b - 256 if b & 0x80 else b
    assert (sa < sb) == (posit_value(a) < posit_value(b))


def test_composite_exponent():
    assert composite_exponent(0, 0) == 0
    assert composite_exponent(-1, 3) == -1
    assert composite_exponent(2, 1) == 9
    with pytest.raises(ValueError):
        composite_exponent(0, 4)


def test_word_range_checked():
    with pytest.raises(ValueError):
        PositWord(256)


# ---- DA-Posit modes ---------------------------------------------------------


def test_mode_population():
    modes = [detect_mode(b)[0] for b in range(256)]
    assert modes.count(2) == 48
    assert modes.count(1) == 64
    assert modes.count(0) == 144


def test_mode_examples():
    # 1.0: exponent 00, fraction 000 -> low two bits agree
    assert detect_mode(0x40) == (2, "00")
    # 9/8: fraction 001 vs exponent 00 -> nothing shared
    assert detect_mode(0x41)[0] == 0
    # specials and short words never compress
    assert detect_mode(0)[0] == 0
    assert detect_mode(NAR)[0] == 0
    assert detect_mode(MAXPOS)[0] == 0


@given(finite)
def test_mode_definition(bits):
    d: DecodedPosit = decode_posit(bits)
    m, shared = detect_mode(bits)
    if m:
        mask = (1 << m) - 1
        assert d.fraction & mask == d.e & mask
        assert shared == format(d.e & mask, f"0{m}b")
    assert to_daposit(bits).mode == m


@given(finite.filter(lambda b: b != 0))
def test_fold_unfold_round_trip(bits):
    d = decode_posit(bits)
    core, width, _ = fold(bits)
    m = detect_mode(bits)[0]
    assert int(unfold(d.sign, d.k, d.e, core, width, m)) == bits


@pytest.mark.parametrize("m, cells", [(0, 16), (1, 9), (2, 4)])
def test_pe_cells_per_mode(m, cells):
    assert pe_cells_for_mode(m) == cells


# ---- multiplier -------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, product",
    [
        (0x48, 0x48, 0x50),
        (0x41, 0x41, 0x42),
        (0x7F, 0x7F, 0x7F),
        (0x01, 0x01, 0x01),
        (0x43, 0x45, 0x49),
        (0x4B, 0xC5, 0xB9),
        (0x30, 0x51, 0x41),
        (0x6A, 0x23, 0x58),
    ],
)
def test_multiply_known_products(a, b, product):
    assert int(da_multiply(a, b)[0]) == product


@given(codes, codes)
def test_multiply_matches_string_oracle(a, b):
    assert int(da_multiply(a, b)[0]) == oracle.multiply(a, b)


@given(codes, codes)
def test_multiply_matches_rational_oracle(a, b):
    assert da_multiply(a, b)[0] == oracle_multiply(a, b)


@given(codes, codes)
def test_multiply_commutes(a, b):
    assert da_multiply(a, b)[0] == da_multiply(b, a)[0]


@given(codes, codes)
def test_cost_report_follows_operation_mode(a, b):
    _, cost = da_multiply(a, b)
    m = min(detect_mode(a)[0], detect_mode(b)[0])
    assert cost.mode == m
    assert cost.pe_cells == (16, 9, 4)[m]
    assert cost.pp_rows == 4 - m
    assert cost.normalization_shift in (0, 1)


def test_nar_and_zero_products():
    assert int(da_multiply(NAR, 0x40)[0]) == NAR
    assert int(da_multiply(0, NAR)[0]) == NAR
    assert int(da_multiply(0, 0x55)[0]) == 0
