"""Posit-8 codec, DA-Posit compression modes and the mode-branched multiplier.

Words are 8-bit posits with ``es = 2`` (useed = 16, maxpos = 2**24,
minpos = 2**-24).  Negative words are the two's complement of their
magnitude; ``0x00`` is zero and ``0x80`` is NaR.

A DA-Posit word is an ordinary posit whose low ``m`` fraction bits happen to
equal the low ``m`` exponent bits.  Those bits are folded into ``shared_bits``
and recovered from the exponent, so the multiplier only has to push a
``(4 - m)``-bit core significand through its PE array.  The mode is recomputed
from the bit pattern, so it costs no storage.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Union

NBITS = 8
ES = 2
NAR = 0x80
ZERO = 0x00
MAXPOS = 0x7F
MINPOS = 0x01
# widest significand (hidden bit + 3 fraction bits) that fits an 8-bit word
SIG_WIDTH = 4


class Special(enum.Enum):
    ZERO = "zero"
    NAR = "nar"
    FINITE = "finite"


@dataclass(frozen=True)
class PositWord:
    bits: int
    es: int = ES

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFF:
            raise ValueError(f"posit-8 pattern out of range: {self.bits!r}")

    def __int__(self) -> int:
        return self.bits


@dataclass(frozen=True)
class DecodedPosit:
    special: Special
    sign: int = 1
    k: int = 0
    e: int = 0
    fraction: int = 0
    frac_len: int = 0
    exp_len: int = 0
    E: int = 0

    @property
    def significand(self) -> int:
        """Fraction with the implicit leading 1 attached."""
        return (1 << self.frac_len) | self.fraction

    @property
    def fraction_bits(self) -> str:
        return format(self.fraction, f"0{self.frac_len}b") if self.frac_len else ""

    def value(self) -> Fraction | None:
        """Exact value, or ``None`` for NaR."""
        if self.special is Special.NAR:
            return None
        if self.special is Special.ZERO:
            return Fraction(0)
        mag = Fraction(self.significand, 1 << self.frac_len) * Fraction(2) ** self.E
        return mag if self.sign > 0 else -mag


@dataclass(frozen=True)
class DAPositWord:
    word: PositWord
    mode: int
    shared_bits: str


@dataclass(frozen=True)
class MulCostReport:
    pe_cells: int
    pp_rows: int
    normalization_shift: int
    mode: int = 0
    correction_rows: int = 0
    saved_bits: int = 0


Wordish = Union[int, PositWord, DAPositWord]


def _bits(w: Wordish) -> int:
    if isinstance(w, DAPositWord):
        return w.word.bits
    if isinstance(w, PositWord):
        return w.bits
    return int(w) & 0xFF


def composite_exponent(k: int, e: int, es: int = ES) -> int:
    if not 0 <= e < (1 << es):
        raise ValueError(f"exponent {e} outside [0, 2**{es})")
    return k * (1 << es) + e


def _decode_fields(bits: int) -> DecodedPosit:
    if bits == ZERO:
        return DecodedPosit(Special.ZERO)
    if bits == NAR:
        return DecodedPosit(Special.NAR)
    sign = -1 if bits & 0x80 else 1
    mag = (-bits) & 0xFF if sign < 0 else bits
    body = mag & 0x7F
    avail = NBITS - 1
    lead = (body >> (avail - 1)) & 1
    run = 0
    while run < avail and ((body >> (avail - 1 - run)) & 1) == lead:
        run += 1
    k = run - 1 if lead else -run
    remaining = max(avail - run - 1, 0)
    exp_len = min(ES, remaining)
    frac_len = remaining - exp_len
    e_raw = (body >> frac_len) & ((1 << exp_len) - 1)
    # exponent bits past the word boundary read as zero
    e = e_raw << (ES - exp_len)
    fraction = body & ((1 << frac_len) - 1)
    return DecodedPosit(
        Special.FINITE, sign, k, e, fraction, frac_len, exp_len, composite_exponent(k, e)
    )


_DECODE_TABLE = tuple(_decode_fields(b) for b in range(256))


def decode_posit(w: Wordish) -> DecodedPosit:
    return _DECODE_TABLE[_bits(w)]


def posit_value(w: Wordish) -> Fraction | None:
    return decode_posit(w).value()


def _floor_log2(a: Fraction) -> int:
    E = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** E > a:
        E -= 1
    return E


def encode_posit(v) -> PositWord:
    """Round an exact value to the nearest posit-8 word.

    Accepts anything ``Fraction`` understands, a ``DecodedPosit`` or ``None``
    (NaR).  Ties go to the even pattern; magnitudes outside
    ``[minpos, maxpos]`` saturate instead of rounding to zero or NaR.
    """
    if isinstance(v, DecodedPosit):
        v = v.value()
    if v is None:
        return PositWord(NAR)
    if isinstance(v, float) and v != v:
        return PositWord(NAR)
    if isinstance(v, float) and v in (float("inf"), float("-inf")):
        return PositWord(NAR)
    v = Fraction(v)
    if v == 0:
        return PositWord(ZERO)
    neg = v < 0
    a = -v if neg else v
    if a >= Fraction(2) ** 24:
        body = MAXPOS
    elif a <= Fraction(2) ** -24:
        body = MINPOS
    else:
        E = _floor_log2(a)
        k, e = divmod(E, 1 << ES)
        regime = "1" * (k + 1) + "0" if k >= 0 else "0" * (-k) + "1"
        prefix = regime + format(e, f"0{ES}b")
        # enough fraction bits to fill the word plus the round bit
        nfrac = max(NBITS - len(prefix), 0) + 2
        scaled = (a / Fraction(2) ** E - 1) * (1 << nfrac)
        fbits = int(scaled)
        sticky = scaled != fbits
        stream = prefix + format(fbits, f"0{nfrac}b")
        body = int(stream[: NBITS - 1], 2)
        round_bit = stream[NBITS - 1] == "1"
        sticky = sticky or "1" in stream[NBITS:]
        if round_bit and (sticky or body & 1):
            body += 1
    return PositWord((-body) & 0xFF if neg else body)


def _definitional_mode(bits: int) -> int:
    d = _DECODE_TABLE[bits]
    if d.special is not Special.FINITE or d.exp_len < ES:
        return 0
    best = 0
    for m in (1, 2):
        mask = (1 << m) - 1
        if d.frac_len >= m and (d.fraction & mask) == (d.e & mask):
            best = m
    return best


def _lead_nibble(bits: int) -> int:
    mag = (-bits) & 0xFF if bits & 0x80 else bits
    return mag >> 4


# decoder fast path: the sign and leading regime bits bound the fraction
# width, which bounds the mode
_MODE_HINT = [0] * 16
for _b in range(256):
    _n = _lead_nibble(_b)
    _MODE_HINT[_n] = max(_MODE_HINT[_n], _definitional_mode(_b))
_MODE_HINT = tuple(_MODE_HINT)


def mode_hint(w: Wordish) -> int:
    """Upper bound on the compression mode from the leading 4 magnitude bits."""
    return _MODE_HINT[_lead_nibble(_bits(w))]


def _detect(bits: int) -> tuple[int, str]:
    if _MODE_HINT[_lead_nibble(bits)] == 0:
        return 0, ""
    m = _definitional_mode(bits)
    if m == 0:
        return 0, ""
    d = _DECODE_TABLE[bits]
    return m, format(d.e & ((1 << m) - 1), f"0{m}b")


_MODE_TABLE = tuple(_detect(b) for b in range(256))


def detect_mode(w: Wordish) -> tuple[int, str]:
    return _MODE_TABLE[_bits(w)]


def to_daposit(w: Wordish) -> DAPositWord:
    m, shared = detect_mode(w)
    return DAPositWord(PositWord(_bits(w)), m, shared)


def fold(w: Wordish) -> tuple[int, int, str]:
    """Split a word into (core significand, core width, shared bits)."""
    bits = _bits(w)
    d = _DECODE_TABLE[bits]
    m, shared = _MODE_TABLE[bits]
    sig = d.significand
    return sig >> m, d.frac_len + 1 - m, shared


def unfold(sign: int, k: int, e: int, core: int, core_width: int, mode: int) -> PositWord:
    """Rebuild a word from its folded form; shared bits come from the exponent."""
    shared = e & ((1 << mode) - 1)
    sig = (core << mode) | shared
    frac_len = core_width + mode - 1
    frac = sig & ((1 << frac_len) - 1)
    regime = "1" * (k + 1) + "0" if k >= 0 else "0" * (-k) + "1"
    stream = regime + format(e, f"0{ES}b") + (format(frac, f"0{frac_len}b") if frac_len else "")
    body = int(stream[: NBITS - 1].ljust(NBITS - 1, "0"), 2)
    return PositWord((-body) & 0xFF if sign < 0 else body)


def pe_cells_for_mode(m: int) -> int:
    return (SIG_WIDTH - m) ** 2


def _regime_prefix(E: int) -> tuple[int, int]:
    """(pattern, length) of regime+exponent for composite exponent E."""
    k, e = divmod(E, 1 << ES)
    if k >= 0:
        rlen = k + 2
        rpat = ((1 << (k + 1)) - 1) << 1
    else:
        rlen = -k + 1
        rpat = 1
    return (rpat << ES) | e, rlen + ES


def round_fields(negative: bool, E: int, frac: int, frac_width: int) -> int:
    """Pack sign/E/fraction into a posit-8 pattern, rounding to nearest even."""
    if E >= 24:
        body = MAXPOS
    elif E < -24:
        body = MINPOS
    else:
        prefix, plen = _regime_prefix(E)
        stream = (prefix << frac_width) | frac
        length = plen + frac_width
        keep = NBITS - 1
        if length <= keep:
            body = stream << (keep - length)
        else:
            cut = length - keep
            body = stream >> cut
            rem = stream & ((1 << cut) - 1)
            half = 1 << (cut - 1)
            if rem > half or (rem == half and body & 1):
                body += 1
        body = min(max(body, MINPOS), MAXPOS)
    return (-body) & 0xFF if negative else body


def _mul_bits(a: int, b: int) -> tuple[int, int, int]:
    """Core multiply: returns (result bits, operation mode, normalization shift)."""
    ma = _MODE_TABLE[a][0]
    mb = _MODE_TABLE[b][0]
    m = ma if ma < mb else mb
    if a == NAR or b == NAR:
        return NAR, m, 0
    if a == ZERO or b == ZERO:
        return ZERO, m, 0
    da = _DECODE_TABLE[a]
    db = _DECODE_TABLE[b]
    mask = (1 << m) - 1
    sig_a = da.significand
    sig_b = db.significand
    core_a, core_b = sig_a >> m, sig_b >> m
    # shared bits are restored from the exponent field
    sh_a, sh_b = da.e & mask, db.e & mask
    # PE array: one shifted row of core_a per set bit of core_b
    array = 0
    row = 0
    cb = core_b
    while cb:
        if cb & 1:
            array += core_a << row
        cb >>= 1
        row += 1
    # compensation rows for the folded low bits
    prod = (array << (2 * m)) + ((core_a * sh_b + core_b * sh_a) << m) + sh_a * sh_b
    fw = da.frac_len + db.frac_len
    E = da.E + db.E
    shift = 1 if prod >> (fw + 1) else 0
    E += shift
    fw += shift
    frac = prod - (1 << fw)
    return round_fields(da.sign != db.sign, E, frac, fw), m, shift


def da_multiply(a: Wordish, b: Wordish) -> tuple[PositWord, MulCostReport]:
    bits, m, shift = _mul_bits(_bits(a), _bits(b))
    cost = MulCostReport(
        pe_cells=pe_cells_for_mode(m),
        pp_rows=SIG_WIDTH - m,
        normalization_shift=shift,
        mode=m,
        correction_rows=2 if m else 0,
        # end-bit folding buys one more bit in the 2-bit mode
        saved_bits=m + (1 if m == 2 else 0),
    )
    return PositWord(bits), cost


def oracle_multiply(a: Wordish, b: Wordish) -> PositWord:
    """Decode both operands, multiply exactly, re-encode."""
    va, vb = posit_value(a), posit_value(b)
    if va is None or vb is None:
        return PositWord(NAR)
    return encode_posit(va * vb)


def iter_sweep() -> Iterator[tuple[int, int, int, int, int]]:
    """Yield (a, b, result, mode, pe_cells) for all 65,536 operand pairs."""
    for a in range(256):
        for b in range(256):
            r, m, _ = _mul_bits(a, b)
            yield a, b, r, m, (SIG_WIDTH - m) ** 2


def product_table() -> list[list[int]]:
    return [[_mul_bits(a, b)[0] for b in range(256)] for a in range(256)]


def write_conformance_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a_bits", "b_bits", "result_bits", "mode", "pe_cells"])
        for a, b, r, m, pe in rows:
            w.writerow([a, b, r, m, pe])
