"""Square-root factorial versus factorial decay.

The z-dependent example decays like c^k / sqrt(k!), the ODE example (a
z-independent driver) like c^k / k!.  Fitting both models to each series
shows which one fits; the staircase in the z-dependent gaps keeps the
residuals from being tiny.
"""
from picard_bsde.bounds import fit_rate, l01_error
from picard_bsde.linear_example import LinearExampleSpec, origin_gap

ks = range(4, 21)
gap = {k: abs(origin_gap(LinearExampleSpec.from_norm_sq(4.0), k)) for k in ks}
ode = {k: l01_error(1.0, k)[0] for k in ks}

for name, errors in (("z-dependent gap", gap), ("ODE sup-error", ode)):
    print(name)
    for mode in ("sqrt-factorial", "factorial"):
        fit = fit_rate(errors, mode)
        print(f"  {mode:>15}: log c = {fit.log_c:+.4f}, residual = {fit.residual:.4f}")
