#!/usr/bin/env python3
"""Tour of the eBFP storage scheme.

Shows how a value is split into fraction blocks behind a block-index
exponent, how precision is chosen per value through the block count, and
what the exact-then-round arithmetic guarantees.
"""

from fractions import Fraction

from varprec.ebfp import (
    EbfpParams,
    arith,
    decode,
    encode,
    format_vector,
    round_to_precision,
    spec_table,
)

print("=" * 64)
print("1. encoding: blocks, block exponent, alignment zeros")
print("=" * 64)

# 8-bit blocks, 8 exponent bits: the configuration of the format table
p8 = EbfpParams(block_bits=8, exponent_bits=8, max_blocks=16)
v = (1 << 56) + (1 << 54) + 12345  # leading bit 57 places left of the point
n = encode(v, p8, n_blocks=2)
print(f"value  = {v:#x}")
print(f"stored = sign {n.sign:+d}, block exponent {n.block_exp} "
      f"(code {n.exp_code}), blocks {[f'{b:02x}' for b in n.blocks]}")
print(f"decoded back: {int(decode(n)):#x} (tail rounded away)")
print(f"text form:    {format_vector(n)}")

print()
print("=" * 64)
print("2. per-value precision: one extra block per extra F bits")
print("=" * 64)
p1 = EbfpParams(block_bits=1, exponent_bits=10, max_blocks=80)
third = Fraction(1, 3)
for x in (4, 8, 16):
    r = round_to_precision(third, x, p1)
    err = abs(decode(r) - third) / third
    print(f"x = {x:2d} bits -> {decode(r)} "
          f"(rel err {float(err):.2e} <= 2^-{x + 1} = {2.0 ** -(x + 1):.2e})")

print()
print("=" * 64)
print("3. arithmetic is exact-then-round")
print("=" * 64)
a = round_to_precision(Fraction(355, 113), 20, p1)
b = round_to_precision(Fraction(2, 7), 20, p1)
prod = arith("mul", a, b, 12)
exact = decode(a) * decode(b)
print(f"a*b exact   = {exact}")
print(f"a*b at 12 b = {decode(prod)}  (single rounding of the exact product)")
q = arith("div", a, b, 12)
print(f"a/b at 12 b = {decode(q)}  (correctly rounded quotient)")
s = arith("sqrt", a, None, 12)
print(f"sqrt(a)     = {decode(s)}  (correctly rounded, exact tie handling)")

print()
print("=" * 64)
print("4. format comparison at E = F = 8")
print("=" * 64)
print(f"{'blocks':>7} {'total':>6} {'exp':>4} {'frac':>5} {'log10 max':>10} {'rel error':>10}")
for nb in (3, 5, 9):
    row = spec_table(p8, nb)
    print(f"{nb:>7} {row.total_bits:>6} {row.exponent_bits:>4} "
          f"{row.fraction_bits:>5} {row.log10_max:>10.2f} {row.worst_rel_error:>10.2e}")
print("\nthe exponent stays 7 bits wide at every precision: range is fixed,")
print("precision alone scales with the block count")
