"""Scalar arithmetic back ends used by the toy model.

Two back ends share one interface so kernels are written once:

* ``FloatArith``: binary64 with a fixed, batch-independent summation order.
  Every dot product adds its terms left to right, so a token's result never
  depends on which other tokens share its batch.
* ``PositArith``: every scalar multiply is a posit-8 multiply (the product is
  rounded to the nearest posit); products are summed exactly in integers and
  the sum is rounded once.  Softmax runs in binary64 on posit inputs and its
  outputs are rounded to posit-8.

Values always travel as binary64 arrays; in the posit back end they are
exactly representable posit-8 values, and ``codes()`` recovers the words.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np

from .posit import NAR, decode_posit, detect_mode, pe_cells_for_mode, product_table

# every posit-8 value (and every 9-bit rounding boundary) is a multiple of 2**-28
SCALE_BITS = 28


def posit_value_n(bits: int, nbits: int, es: int = 2) -> Fraction:
    """Exact value of a positive ``nbits``-wide posit pattern."""
    body = bits & ((1 << (nbits - 1)) - 1)
    width = nbits - 1
    first = (body >> (width - 1)) & 1
    run = 0
    while run < width and ((body >> (width - 1 - run)) & 1) == first:
        run += 1
    k = run - 1 if first else -run
    rest = max(width - run - 1, 0)
    tail = body & ((1 << rest) - 1)
    exp_len = min(es, rest)
    e = (tail >> (rest - exp_len)) << (es - exp_len) if exp_len else 0
    frac_len = rest - exp_len
    frac = tail & ((1 << frac_len) - 1)
    sig = Fraction((1 << frac_len) | frac, 1 << frac_len)
    return sig * Fraction(2) ** (k * (1 << es) + e)


@lru_cache(maxsize=None)
def tables() -> dict:
    """Lookup tables derived from the posit-8 codec."""
    codes = np.arange(256)
    values = np.zeros(256)
    scaled = np.zeros(256, dtype=np.int64)
    for c in range(256):
        v = decode_posit(c).value()
        if v is None:
            continue
        values[c] = float(v)
        scaled[c] = int(v * (1 << SCALE_BITS))
    # rounding boundary between positive codes c and c+1 is the 9-bit posit 2c+1
    bounds = [posit_value_n(2 * c + 1, 9) for c in range(1, 127)]
    bounds_scaled = np.array([int(b * (1 << SCALE_BITS)) for b in bounds], dtype=np.int64)
    prod = np.array(product_table(), dtype=np.uint8)
    modes = np.array([detect_mode(c)[0] for c in codes], dtype=np.int64)
    op_mode = np.minimum(modes[:, None], modes[None, :])
    pe = np.vectorize(pe_cells_for_mode)(op_mode).astype(np.int64)
    return {
        "values": values,
        "scaled": scaled,
        "bounds": np.array([float(b) for b in bounds]),
        "bounds_scaled": bounds_scaled,
        "prod": prod,
        "prod_scaled": scaled[prod.astype(np.int64)],
        "modes": modes,
        "pe": pe,
    }


def _round_magnitude(mag: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Positive magnitudes -> positive codes 1..127 (RNE, saturating)."""
    idx = np.searchsorted(bounds, mag, side="left")
    code = idx + 1
    tie = (idx < len(bounds)) & (bounds[np.minimum(idx, len(bounds) - 1)] == mag)
    # at a boundary the even pattern wins
    code = np.where(tie & (code % 2 == 1), code + 1, code)
    return code


def to_posit(x: np.ndarray) -> np.ndarray:
    """Round binary64 values to posit-8 codes (uint8)."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any() or np.isinf(x).any():
        raise ValueError("non-finite value cannot be rounded to a real posit")
    t = tables()
    code = _round_magnitude(np.abs(x), t["bounds"])
    code = np.where(x < 0, (256 - code) & 0xFF, code)
    return np.where(x == 0, 0, code).astype(np.uint8)


def round_scaled(s: np.ndarray) -> np.ndarray:
    """Round exact sums held as int64 multiples of 2**-28 to posit-8 codes."""
    s = np.asarray(s, dtype=np.int64)
    t = tables()
    code = _round_magnitude(np.abs(s), t["bounds_scaled"])
    code = np.where(s < 0, (256 - code) & 0xFF, code)
    return np.where(s == 0, 0, code).astype(np.uint8)


def from_posit(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if (codes == NAR).any():
        raise ValueError("NaR has no real value")
    return tables()["values"][codes]


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class FloatArith:
    name = "float64"

    def quantize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    def matmul(self, X: np.ndarray, W: np.ndarray) -> np.ndarray:
        """(n, k) @ (k, m) with a fixed left-to-right sum per output."""
        X = np.asarray(X, dtype=np.float64)
        W = np.asarray(W, dtype=np.float64)
        acc = X[:, 0, None] * W[0]
        for i in range(1, X.shape[1]):
            acc = acc + X[:, i, None] * W[i]
        return acc

    def softmax(self, z: np.ndarray) -> np.ndarray:
        return softmax(z)

    def add(self, *terms: np.ndarray) -> np.ndarray:
        out = np.asarray(terms[0], dtype=np.float64)
        for t in terms[1:]:
            out = out + t
        return out

    def scale_sum(self, weights: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """sum_i weights[i] * Y[i] with a fixed order."""
        return self.matmul(np.asarray(weights)[None, :], Y)[0]


class PositArith:
    name = "posit8"

    def quantize(self, x: np.ndarray) -> np.ndarray:
        return from_posit(to_posit(x))

    def codes(self, x: np.ndarray) -> np.ndarray:
        return to_posit(x)

    def matmul_codes(self, A: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Posit products of code matrices, summed exactly, rounded once."""
        t = tables()
        A = np.asarray(A, dtype=np.int64)
        W = np.asarray(W, dtype=np.int64)
        acc = t["prod_scaled"][A[:, :, None], W[None, :, :]].sum(axis=1)
        return from_posit(round_scaled(acc))

    def matmul(self, X: np.ndarray, W: np.ndarray) -> np.ndarray:
        return self.matmul_codes(to_posit(X), to_posit(W))

    def softmax(self, z: np.ndarray) -> np.ndarray:
        return self.quantize(softmax(z))

    def add(self, *terms: np.ndarray) -> np.ndarray:
        # exact integer sum, one rounding
        t = tables()
        acc = sum(t["scaled"][to_posit(x).astype(np.int64)] for x in terms)
        return from_posit(round_scaled(acc))

    def scale_sum(self, weights: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.matmul(np.asarray(weights)[None, :], Y)[0]


FLOAT = FloatArith()
POSIT = PositArith()


def backend(name: str):
    if name == FLOAT.name:
        return FLOAT
    if name == POSIT.name:
        return POSIT
    raise ValueError(f"unknown numeric back end {name!r}")


def pe_cells(a_codes: np.ndarray, b_codes: np.ndarray) -> np.ndarray:
    """PE cells lit by each posit multiply a*b (elementwise, broadcasting)."""
    return tables()["pe"][np.asarray(a_codes, dtype=np.int64), np.asarray(b_codes, dtype=np.int64)]
