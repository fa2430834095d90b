"""Weighted a priori estimates checked on the iterate differences.

Y = v^k - v^inf vanishes at the horizon, so the right-hand sides only see
the driver difference A.
"""
from picard_bsde.engine import apriori_check
from picard_bsde.linear_example import LinearExampleSpec

spec = LinearExampleSpec.from_norm_sq(4.0)
for variant, alpha in (("i", None), ("ii", None), ("iii", 1.0)):
    for lam in (0.5, 3.0, 6.0):
        rep = apriori_check(spec, 3, lam, variant, alpha=alpha, paths=2000, steps=64, seed=0)
        print(f"variant {variant:>3} lambda={lam:<4} lhs={rep.lhs:.4f} rhs={rep.rhs:.4f} passed={rep.passed}")
