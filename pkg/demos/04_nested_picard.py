"""Nested Monte-Carlo Picard iterations for three drivers.

Each level averages samples that call the previous level at a random time,
so the cost grows like budget**n.  The estimates are compared with closed
forms of the same iterates.
"""
import numpy as np

from picard_bsde.engine import linear_y_iterate, linear_y_problem, linear_z_problem, nested_cost, nested_picard
from picard_bsde.linear_example import IterateEvaluator, LinearExampleSpec, eval_v

spec = LinearExampleSpec.from_norm_sq(1.0)
budget = 100
print(f"cost at n = 3 with {budget} samples per level: {nested_cost(3, budget):.3g} evaluations")

z_problem = linear_z_problem(spec)
y_problem = linear_y_problem(L_y=1.0)
for n in range(1, 4):
    res = nested_picard(z_problem, n, 0.0, [0.0], budget, seed=n)
    exact = eval_v(IterateEvaluator(spec, n), 0.0, np.zeros(1))
    print(f"linear-z n={n}: {res.y[0]:+.4f} +- {res.y_stderr[0]:.4f}   closed form {exact:+.4f}")
for n in range(1, 5):
    res = nested_picard(y_problem, n, 0.0, [0.0], budget, seed=n)
    print(f"linear-y n={n}: {res.y[0]:+.4f} +- {res.y_stderr[0]:.4f}   closed form {linear_y_iterate(1.0, 1.0, n, 0.0):+.4f}")
