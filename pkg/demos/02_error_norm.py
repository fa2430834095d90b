"""Monte-Carlo error norm e_k of the linear example against its envelopes.

Along Brownian paths the iterates are read off the closed forms, so e_k only
needs path simulation, not a BSDE solver.  The explicit upper bound is far
from sharp; the lower bound is within a modest factor.
"""
import math

from picard_bsde.bounds import a10_lower, b20_bound
from picard_bsde.engine import estimate_error_series
from picard_bsde.linear_example import LinearExampleSpec

spec = LinearExampleSpec.from_norm_sq(4.0)
problem = spec.bsde_problem()
print(f"E xi^2 = {problem.xi_second_moment:.6f}, driver integral = {problem.driver_norm_integral:.6f}")

series = estimate_error_series(spec, range(1, 9), steps=128, paths=4000, seed=1)
print(f"{'k':>3} {'e_k':>10} {'+-':>9} {'lower':>10} {'upper':>10}")
for e in series.entries:
    low = a10_lower(spec, e.k) if e.k >= 3 else float("nan")
    up = math.exp(0.5 * b20_bound(problem, e.k))
    print(f"{e.k:>3} {e.estimate:>10.5f} {e.half_width:>9.2e} {low:>10.5f} {up:>10.3g}")
