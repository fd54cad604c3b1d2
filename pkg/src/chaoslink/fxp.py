"""Fixed-point arithmetic core.

Signals on the link are signed integer counts with a common scaling factor
``scale``: an analog amplitude v is stored as round(v * scale).  The word is
symmetric (the most negative two's-complement code is never produced), all
overflow saturates, and rounding is unbiased (round-half-to-even).

The serialized bit form uses an inverted sign convention: the MSB is 1 for
values >= 0 and 0 for negatives, with the magnitude in the remaining bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

__all__ = [
    "FxpFormat",
    "SaturationLog",
    "quantize",
    "dequantize",
    "to_bitword",
    "from_bitword",
    "sat_add",
    "mul_scaled",
    "saturate",
]


@dataclass(frozen=True)
class FxpFormat:
    """Word size and scaling of the link's fixed-point samples."""

    word_bits: int = 16
    scale: int = 3107

    def __post_init__(self):
        if self.word_bits < 2:
            raise ValueError(f"word_bits must be >= 2, got {self.word_bits}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")

    @property
    def max_raw(self) -> int:
        return (1 << (self.word_bits - 1)) - 1

    @property
    def min_raw(self) -> int:
        return -self.max_raw

    @property
    def max_analog(self) -> float:
        return self.max_raw / self.scale

    @property
    def min_analog(self) -> float:
        return -self.max_raw / self.scale


@dataclass
class SaturationLog:
    """Per-context counter of clamping events (never global state)."""

    count: int = 0
    last_op: str = field(default="", repr=False)

    def record(self, op: str, n: int = 1) -> None:
        self.count += n
        self.last_op = op


def saturate(raw: int, fmt: FxpFormat, log: SaturationLog | None = None,
             op: str = "saturate") -> int:
    """Clamp an integer count to the symmetric representable range."""
    hi = fmt.max_raw
    if raw > hi:
        if log is not None:
            log.record(op)
        return hi
    if raw < -hi:
        if log is not None:
            log.record(op)
        return -hi
    return raw


def _round_half_even(x: Rational) -> int:
    """Round an exact rational to the nearest integer, ties to even."""
    if isinstance(x, int):
        return x
    n, d = x.numerator, x.denominator
    q, r = divmod(n, d)  # floor division; 0 <= r < d
    twice = 2 * r
    if twice > d or (twice == d and q % 2 != 0):
        q += 1
    return q


def quantize(value, fmt: FxpFormat = FxpFormat(),
             log: SaturationLog | None = None) -> int:
    """Convert an analog amplitude to a raw count.

    Rounding is exact round-half-to-even on the input's exact rational value
    (floats are dyadic rationals, so ties are decided correctly even when the
    scaled product is not representable as a float).  Out-of-range values
    saturate and are counted in ``log``.

    Accepts int, float, or Fraction.
    """
    if isinstance(value, Rational):
        raw = _round_half_even(value * fmt.scale)
        return saturate(raw, fmt, log, "quantize")
    v = float(value)
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"quantize requires a finite value, got {value!r}")
    product = v * fmt.scale
    # Fast path: if the float product is provably far from a tie, plain
    # rounding agrees with the exact rational decision (product error is a
    # few ulp, far below the 1e-6 guard band).
    nearest = round(product)
    if abs(product - nearest) > 1e-6 and abs(product) < 2**52:
        return saturate(nearest, fmt, log, "quantize")
    raw = _round_half_even(Fraction(v) * fmt.scale)
    return saturate(raw, fmt, log, "quantize")


def dequantize(raw: int, fmt: FxpFormat = FxpFormat()) -> float:
    """Map a raw count back to its analog amplitude (exact quotient)."""
    return raw / fmt.scale


def to_bitword(raw: int, fmt: FxpFormat = FxpFormat()) -> str:
    """Serialize a raw count: sign bit (1 = nonnegative) then magnitude.

    The MSB-first text form matches what a logic analyzer would show on the
    hardware bus.
    """
    hi = fmt.max_raw
    if not -hi <= raw <= hi:
        raise ValueError(f"raw count {raw} outside representable range +/-{hi}")
    sign = "1" if raw >= 0 else "0"
    return sign + format(abs(raw), f"0{fmt.word_bits - 1}b")


def from_bitword(bits: str, fmt: FxpFormat = FxpFormat()) -> int:
    """Parse the bit-word text form; the all-zeros word decodes to 0."""
    if len(bits) != fmt.word_bits:
        raise ValueError(
            f"bit word must have {fmt.word_bits} characters, got {len(bits)}")
    if any(c not in "01" for c in bits):
        raise ValueError(f"bit word may contain only '0'/'1': {bits!r}")
    magnitude = int(bits[1:], 2)
    if bits[0] == "1":
        return magnitude
    return -magnitude  # "negative zero" is -0 == 0


def sat_add(a: int, b: int, fmt: FxpFormat = FxpFormat(),
            log: SaturationLog | None = None) -> int:
    """Saturating addition of two raw counts."""
    return saturate(a + b, fmt, log, "sat_add")


def mul_scaled(a: int, b: int, fmt: FxpFormat = FxpFormat(),
               log: SaturationLog | None = None) -> int:
    """Product of two scaled counts, rescaled by 1/scale.

    The full-width product is formed before the single rescale-and-round, so
    no intermediate overflow can occur (Python ints are unbounded; the
    accelerated kernels use int64, wide enough for every on-link product).
    """
    raw = _round_half_even(Fraction(a * b, fmt.scale))
    return saturate(raw, fmt, log, "mul_scaled")
