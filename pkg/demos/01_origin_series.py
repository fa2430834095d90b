"""Picard iterates of the linear example at the origin.

The iterates at (0, 0) are partial sums of exp(-|b|^2/4) taken two terms at a
time, so the gap to the solution only shrinks at every other step.  The
sandwich and the square-root-factorial lower bound bracket it.
"""
import math

from picard_bsde.bounds import a10_lower, a21_min_n, a21_sandwich
from picard_bsde.linear_example import INF, LinearExampleSpec, origin_gap, v_origin_series

spec = LinearExampleSpec.from_norm_sq(4.0)
eps = 0.5
print(f"solution at the origin: {v_origin_series(spec, INF):.15f} (exp(-1) = {math.exp(-1):.15f})")
print(f"sandwich admissible from n = {a21_min_n(spec.b_norm_sq, eps)}")
print(f"{'n':>3} {'v^n(0,0)':>12} {'|gap|':>12} {'lower':>12} {'upper':>12} {'a10':>12}")
for n in range(1, 16):
    gap = abs(origin_gap(spec, n))
    try:
        lo, hi = a21_sandwich(spec, n, eps)
    except ValueError:
        lo = hi = float("nan")
    low = a10_lower(spec, n) if n >= spec.b_norm_sq - 1 else float("nan")
    print(f"{n:>3} {v_origin_series(spec, n):>12.6g} {gap:>12.6g} {lo:>12.6g} {hi:>12.6g} {low:>12.6g}")
