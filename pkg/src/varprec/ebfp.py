"""Extended block floating-point (eBFP) scalars.

A value is stored as a sign, a block-index exponent, and a run of F-bit
fraction blocks.  The block exponent is encoded with an offset so the
representable range is fixed by the exponent width E alone; precision is
chosen per value through the number of fraction blocks.  All arithmetic is
performed exact-then-round: the exact result is formed in integer/rational
arithmetic and a single round-to-nearest-even brings it back to the target
precision, so the only error of an operation is the final rounding step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from fractions import Fraction
from typing import Optional, Tuple


class Flag(Enum):
    NORMAL = "normal"
    ZERO = "zero"
    OVERFLOW = "saturated-overflow"
    UNDERFLOW = "saturated-underflow"


@dataclass(frozen=True)
class EbfpParams:
    """Storage geometry: F bits per fraction block, E exponent bits
    (including the sign bit), and an upper bound on the block count."""

    block_bits: int = 1
    exponent_bits: int = 10
    max_blocks: int = 80

    def __post_init__(self):
        if self.block_bits < 1:
            raise ValueError("block_bits must be >= 1")
        if self.exponent_bits < 2:
            raise ValueError("exponent_bits must be >= 2")
        if self.max_blocks < 2:
            raise ValueError("max_blocks must be >= 2")

    @property
    def exp_offset(self) -> int:
        # encoded exponent = block exponent + offset, held in E-1 bits
        return (1 << (self.exponent_bits - 2)) - 1

    @property
    def max_block_exp(self) -> int:
        return 1 << (self.exponent_bits - 2)

    @property
    def min_block_exp(self) -> int:
        return -self.exp_offset


DEFAULT_PARAMS = EbfpParams()


@dataclass(frozen=True)
class EbfpNumber:
    """One stored scalar.

    ``field`` is the concatenation of all fraction blocks as a single
    unsigned integer of width ``n_blocks * F`` (leading zeros of the first
    block included), so equality of the dataclass is bit-exact equality of
    the stored representation.
    """

    sign: int
    block_exp: int
    field: int
    n_blocks: int
    params: EbfpParams = dc_field(repr=False, default=DEFAULT_PARAMS)
    flags: Flag = Flag.NORMAL

    @property
    def exp_code(self) -> int:
        if self.flags is Flag.ZERO:
            return 0
        return self.block_exp + self.params.exp_offset

    @property
    def blocks(self) -> Tuple[int, ...]:
        f = self.params.block_bits
        mask = (1 << f) - 1
        n = self.n_blocks
        return tuple((self.field >> (f * (n - 1 - i))) & mask for i in range(n))

    @property
    def is_saturated(self) -> bool:
        return self.flags in (Flag.OVERFLOW, Flag.UNDERFLOW)

    def to_fraction(self) -> Fraction:
        """Exact decoded value; saturated numbers have none."""
        return decode(self, self.params)

    def __repr__(self):
        if self.flags is Flag.ZERO:
            return "EbfpNumber(0)"
        if self.is_saturated:
            return f"EbfpNumber({self.flags.value})"
        v = self.to_fraction()
        return f"EbfpNumber({'+' if self.sign > 0 else '-'}|e={self.block_exp}|{float(v):.6g})"


def _sci_exponent(num: int, den: int) -> int:
    """e with 2**(e-1) <= num/den < 2**e for positive integers num, den."""
    e = num.bit_length() - den.bit_length()
    if (num >= den << e) if e >= 0 else ((num << -e) >= den):
        e += 1
    return e


def _round_sig_rational(num: int, den: int, s: int) -> Tuple[int, int]:
    """Round num/den (both positive) to s significant bits, half-to-even.

    Returns (m, e_sci) with 2**(s-1) <= m < 2**s and the rounded value equal
    to m * 2**(e_sci - s).
    """
    e_sci = _sci_exponent(num, den)
    shift = s - e_sci
    if shift >= 0:
        q, r = divmod(num << shift, den)
    else:
        q, r = divmod(num, den << -shift)
    # round half to even on the exact remainder
    r2 = 2 * r
    d = den if shift >= 0 else den << -shift
    if r2 > d or (r2 == d and q & 1):
        q += 1
    if q == 1 << s:
        q >>= 1
        e_sci += 1
    return q, e_sci


def _round_sqrt_sig(M: int, s: int) -> Tuple[int, int]:
    """Round sqrt(M) (M positive integer) to s significant bits, half-even.

    Returns (m, e_sci) with the rounded value m * 2**(e_sci - s).  Ties are
    resolved exactly: sqrt(M) equals a representable midpoint only when
    4*M is a perfect square of the right scale, which is decided in integer
    arithmetic.
    """
    t = math.isqrt(M)
    e_sci = t.bit_length()
    d = s - e_sci
    # target m = nearest integer to sqrt(M) * 2**d
    if d >= 0:
        scaled = M << (2 * d)
        m = math.isqrt(scaled)
        # nearest: compare sqrt(scaled) with m + 1/2  <=>  4*scaled with (2m+1)^2
        lhs, mid2 = 4 * scaled, (2 * m + 1) ** 2
    else:
        m = t >> -d
        lhs, mid2 = 4 * M, ((2 * m + 1) ** 2) << (-2 * d)
    if lhs > mid2:
        m += 1
    elif lhs == mid2 and m & 1:
        m += 1
    if m == 1 << s:
        m >>= 1
        e_sci += 1
    return m, e_sci


def _zero(params: EbfpParams, n_blocks: int) -> EbfpNumber:
    return EbfpNumber(1, 0, 0, n_blocks, params, Flag.ZERO)


def _saturated(sign: int, flag: Flag, params: EbfpParams, n_blocks: int) -> EbfpNumber:
    return EbfpNumber(sign, 0, 0, n_blocks, params, flag)


def _build(sign: int, m: int, e_sci: int, params: EbfpParams, n_blocks: int) -> EbfpNumber:
    """Assemble a number from a rounded mantissa m = value * 2**(s - e_sci)."""
    f = params.block_bits
    e = -(-e_sci // f)  # ceil
    z = e * f - e_sci
    if e > params.max_block_exp:
        return _saturated(sign, Flag.OVERFLOW, params, n_blocks)
    if e < params.min_block_exp:
        return _saturated(sign, Flag.UNDERFLOW, params, n_blocks)
    width = n_blocks * f - z
    s = m.bit_length()
    if width < s:
        raise ValueError("mantissa wider than the fraction field")
    return EbfpNumber(sign, e, m << (width - s), n_blocks, params, Flag.NORMAL)


def encode(value, params: EbfpParams = DEFAULT_PARAMS, n_blocks: int = None) -> EbfpNumber:
    """Convert an exact rational to eBFP with the given fraction block count.

    The significand keeps ``n_blocks*F - z`` significant bits, where z is the
    number of leading zeros imposed by block alignment; rounding is to
    nearest, ties to even.  Out-of-range exponents saturate via flags.
    """
    if n_blocks is None:
        n_blocks = params.max_blocks
    if not 1 <= n_blocks <= params.max_blocks:
        raise ValueError(f"n_blocks must be in [1, {params.max_blocks}]")
    v = Fraction(value)
    if v == 0:
        return _zero(params, n_blocks)
    sign = 1 if v > 0 else -1
    num, den = abs(v.numerator), v.denominator
    f = params.block_bits
    # block alignment depends on e_sci, which rounding may bump; iterate once
    e_sci0 = _sci_exponent(num, den)
    for _ in range(2):
        e = -(-e_sci0 // f)
        z = e * f - e_sci0
        s = n_blocks * f - z
        m, e_sci = _round_sig_rational(num, den, s)
        if e_sci == e_sci0:
            break
        e_sci0 = e_sci  # carry crossed a power of two; realign and redo
    return _build(sign, m, e_sci, params, n_blocks)


def decode(n: EbfpNumber, params: EbfpParams = None) -> Fraction:
    """Exact rational value of a normal or zero eBFP number."""
    params = params or n.params
    if n.flags is Flag.ZERO:
        return Fraction(0)
    if n.is_saturated:
        raise ValueError(f"cannot decode a {n.flags.value} value")
    f = params.block_bits
    e2 = (n.block_exp - n.n_blocks) * f
    return Fraction(n.sign * n.field, 1) * Fraction(2) ** e2


def blocks_for_precision(x: int, params: EbfpParams, e_sci: int = None) -> int:
    """Fraction blocks needed to guarantee x+1 significant bits.

    With F=1 this is x+1; wider blocks may need one extra block to absorb
    leading alignment zeros (worst case F-1 of them).
    """
    f = params.block_bits
    if e_sci is None:
        z = f - 1
    else:
        e = -(-e_sci // f)
        z = e * f - e_sci
    return -(-(x + 1 + z) // f)


def round_to_precision(value, x: int, params: EbfpParams = DEFAULT_PARAMS) -> EbfpNumber:
    """Round an exact rational to precision x (relative error <= 2**(-x-1)).

    Allocates the minimal block count holding x+1 significant bits; with F=1
    that is x+1 blocks.
    """
    if x < 1:
        raise ValueError("precision x must be >= 1")
    v = Fraction(value)
    if v == 0:
        return _zero(params, min(params.max_blocks, blocks_for_precision(x, params)))
    sign = 1 if v > 0 else -1
    num, den = abs(v.numerator), v.denominator
    m, e_sci = _round_sig_rational(num, den, x + 1)
    n_blocks = blocks_for_precision(x, params, e_sci)
    if n_blocks > params.max_blocks:
        raise ValueError("precision exceeds max_blocks for these parameters")
    return _build(sign, m, e_sci, params, n_blocks)


_BINARY = {"add", "sub", "mul", "div"}
_OPS = _BINARY | {"sqrt"}


def arith(op: str, a: EbfpNumber, b: Optional[EbfpNumber] = None,
          x_target: int = 24) -> EbfpNumber:
    """One exact-then-round arithmetic operation at precision ``x_target``.

    add/sub/mul/div form the exact rational result before the single final
    rounding; sqrt is rounded correctly to x_target+1 significant bits with
    exact tie handling.  Saturation in any operand poisons the result.
    """
    if op not in _OPS:
        raise ValueError(f"unknown op {op!r}")
    params = a.params
    operands = (a,) if op == "sqrt" else (a, b)
    if op != "sqrt" and b is None:
        raise ValueError(f"{op} needs two operands")
    for o in operands:
        if o.is_saturated:
            flag = Flag.OVERFLOW if any(
                q.flags is Flag.OVERFLOW for q in operands if q.is_saturated
            ) else Flag.UNDERFLOW
            return _saturated(o.sign, flag, params, o.n_blocks)

    if op == "sqrt":
        if a.flags is Flag.ZERO:
            return _zero(params, blocks_for_precision(x_target, params))
        if a.sign < 0:
            raise ValueError("sqrt of a negative value")
        # a = field * 2**e2; make the exponent even and take an exact
        # correctly-rounded integer square root
        e2 = (a.block_exp - a.n_blocks) * params.block_bits
        M = a.field
        if e2 & 1:
            M <<= 1
            e2 -= 1
        m, e_sci = _round_sqrt_sig(M, x_target + 1)
        e_sci += e2 // 2
        n_blocks = blocks_for_precision(x_target, params, e_sci)
        return _build(1, m, e_sci, params, n_blocks)

    va, vb = a.to_fraction(), b.to_fraction()
    if op == "add":
        res = va + vb
    elif op == "sub":
        res = va - vb
    elif op == "mul":
        res = va * vb
    else:
        if vb == 0:
            raise ZeroDivisionError("division by an eBFP zero")
        res = va / vb
    return round_to_precision(res, x_target, params)


@dataclass(frozen=True)
class SpecRow:
    total_bits: int
    exponent_bits: int
    fraction_bits: int
    log10_max: float
    worst_rel_error: float


def spec_table(params: EbfpParams, n_blocks: int) -> SpecRow:
    """Storage-format summary for a configuration of ``n_blocks`` blocks
    (exponent block included, so fraction blocks = n_blocks - 1).

    Worst-case relative error assumes the maximal F-1 leading alignment
    zeros plus the halving from round-to-nearest.
    """
    f, e = params.block_bits, params.exponent_bits
    frac_bits = (n_blocks - 1) * f
    total = e + frac_bits
    log10_max = math.log10(2.0) * f * params.max_block_exp
    worst = 2.0 ** -(frac_bits - (f - 1) + 1)
    return SpecRow(total, e - 1, frac_bits, log10_max, worst)


def format_vector(n: EbfpNumber) -> str:
    """Canonical text form ``sign|exp_code|b0.b1...bk`` with hex blocks."""
    if n.is_saturated:
        raise ValueError("saturated values have no canonical text form")
    width = -(-n.params.block_bits // 4)
    blocks = ".".join(f"{b:0{width}x}" for b in n.blocks)
    return f"{'+' if n.sign > 0 else '-'}|{n.exp_code}|{blocks}"


def parse_vector(text: str, params: EbfpParams = DEFAULT_PARAMS) -> EbfpNumber:
    """Inverse of :func:`format_vector` (bit-exact)."""
    sign_s, code_s, blocks_s = text.strip().split("|")
    sign = 1 if sign_s == "+" else -1
    blocks = [int(b, 16) for b in blocks_s.split(".")]
    f = params.block_bits
    field = 0
    for b in blocks:
        if b >= 1 << f:
            raise ValueError("block wider than F bits")
        field = (field << f) | b
    exp_code = int(code_s)
    if field == 0 and exp_code == 0:
        return _zero(params, len(blocks))
    return EbfpNumber(sign, exp_code - params.exp_offset, field, len(blocks), params)
