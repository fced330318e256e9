#!/usr/bin/env python3
"""The stochastic error model, checked against Monte Carlo.

Walks the two stages of one operation's error: the full-precision stage
(operand errors transform through the arithmetic) and the rounding stage
(storing at x bits adds r(x)*W with r(x) = 2^-(x+1)).
"""

import numpy as np

from varprec.errormodel import (
    montecarlo_arith_variance,
    ops_per_bit,
    propagate_full_precision,
    rounding_variance,
    speculation_factor,
    w_moments,
    w_pdf,
    w_pdf_second_moment,
)

print("=" * 64)
print("1. full-precision stage: formula vs Monte Carlo (sigma = 1e-3)")
print("=" * 64)
print(f"{'op':>6} {'operands':>12} {'formula':>12} {'empirical':>12} {'dev':>8}")
for op, a, b in (("add", 3.0, 2.0), ("sub", 3.0, 2.0), ("mul", 3.0, 2.0),
                 ("div", 3.0, 2.0), ("sqrt", 3.0, None)):
    form = propagate_full_precision(op, a, b, 1e-6, 1e-6 if b else None)
    emp = montecarlo_arith_variance(op, a, b, 1e-3, 400_000, seed=1)
    print(f"{op:>6} {str((a, b)):>12} {form:>12.4e} {emp:>12.4e} "
          f"{abs(emp - form) / form:>8.2%}")

print()
print("adds/subs depend on the operand values; mul/div/sqrt do not:")
for a, b in ((1.0, 1.0), (1.0, 10.0), (1.0, -0.9)):
    v = propagate_full_precision("add", a, b, 1e-6, 1e-6)
    print(f"  add({a}, {b}): variance {v:.3e}" +
          ("   <- near-cancellation blows up the relative frame" if abs(a + b) < 0.2 else ""))

print()
print("=" * 64)
print("2. rounding stage: the normalized error W")
print("=" * 64)
print(f"density at 0: {w_pdf(0.0)} (plateau), at 0.8: {w_pdf(0.8):.4f} (tail)")
print(f"closed-form second moment: {w_pdf_second_moment():.12f} = 1/6")
for x in (1, 5, 9, 13):
    st = w_moments(x, samples=300_000)
    print(f"monte carlo at x = {x:2d}: var {st.variance:.4f}, mean {st.mean:+.1e}")
print("the estimator converges to the 1/6 limit as precision grows")

print()
print("composition: sigma_t^2 = (1 + r^2/6) sigma_c^2 + r^2/6")
for x in (6, 10, 20):
    print(f"  sc2 = 1e-6, x = {x:2d}: {rounding_variance(1e-6, x):.6e}")

print()
print("=" * 64)
print("3. expectation factors: how precision demand moves per hop")
print("=" * 64)
for op in ("add", "sub", "mul", "div", "sqrt"):
    f = speculation_factor(op, "forward", 8)
    b = speculation_factor(op, "backward", 8)
    print(f"  {op:>5}: forward {f:.5f}, backward {b:.5f}")
print("additions/subtractions straddle 1 in opposite directions; it takes")
print(f"{ops_per_bit('add', 8)} additions or {ops_per_bit('sub', 8)} "
      f"subtractions to move the optimum by one bit (8-bit exponents)")
