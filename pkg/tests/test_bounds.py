import math

import pytest
from hypothesis import given, strategies as st

from picard_bsde.bounds import (
    BOUND_KINDS,
    BoundCurve,
    BsdeProblem,
    a10_lower,
    a21_min_n,
    a21_sandwich,
    b20_bound,
    bound_curve,
    fit_rate,
    l01_error,
    l01_iterate,
    log_l01_tail,
    r01_bound,
    r02_bound,
)
from picard_bsde.linear_example import LinearExampleSpec, origin_gap
from picard_bsde.special import log_factorial


def problem(L_y=0.0, L_z=1.0, T=1.0, xi=1.0, integral=0.0):
    return BsdeProblem(T=T, d=1, m=1, L_y=L_y, L_z=L_z, xi_second_moment=xi, driver_norm_integral=integral)


def b20_direct(p: BsdeProblem, k: int) -> float:
    # plain float evaluation, trustworthy for small k
    s = sum(
        math.factorial(k) * p.L_y**l * p.L_z ** (k - l) * p.T ** (l / 2)
        / (math.factorial(l) * math.factorial(k - l) * math.sqrt(math.factorial(l)))
        for l in range(k + 1)
    )
    return 35 * (p.T * math.e / k) ** k * s**2 * (p.xi_second_moment + p.T / k * p.driver_norm_integral)


def test_b20_single_surviving_term():
    # with L_y = 0 only l = 0 survives: 35 (e/2)^2 * 1 * 1
    assert b20_bound(problem(), 2) == pytest.approx(math.log(35 * math.e**2 / 4), abs=1e-13)


def test_b20_zero_lipschitz_is_minus_inf():
    assert b20_bound(problem(L_z=0.0, integral=1.0), 3) == -math.inf


def test_b20_zero_moments_is_minus_inf():
    assert b20_bound(problem(xi=0.0), 3) == -math.inf


@pytest.mark.parametrize("k", range(1, 11))
def test_b20_against_direct_evaluation(k):
    p = problem(L_y=1.0, L_z=1.0, integral=1.0)
    assert math.exp(b20_bound(p, k)) == pytest.approx(b20_direct(p, k), rel=1e-12)
    p = problem(L_y=0.3, L_z=2.5, T=1.7, xi=0.4, integral=2.0)
    assert math.exp(b20_bound(p, k)) == pytest.approx(b20_direct(p, k), rel=1e-12)


def test_b20_large_k_stays_finite():
    p = problem(L_y=2.0, L_z=3.0, T=2.0, integral=1.0)
    vals = [b20_bound(p, k) for k in (100, 170, 500)]
    assert all(math.isfinite(v) for v in vals)


def test_r01_examples():
    p = problem(L_y=1.0, L_z=1.0)
    assert r01_bound(p, 2) == pytest.approx(math.log(35 * (4 * math.e) ** 2 / 2), abs=1e-13)
    assert r01_bound(problem(L_z=0.0), 1) == -math.inf


@pytest.mark.parametrize(
    "p",
    [problem(), problem(L_y=1, L_z=1, integral=1), problem(L_y=0.5, L_z=2, T=0.3), problem(L_y=3, L_z=0.1, T=2.5, integral=4)],
)
def test_b20_below_r01(p):
    for k in range(1, 61):
        assert b20_bound(p, k) <= r01_bound(p, k) + 1e-12


def test_r02_examples():
    assert r02_bound(problem(L_y=1.0, L_z=0.0), 3) == pytest.approx(math.log(35 * math.e**3 / 36), abs=1e-13)
    assert r02_bound(problem(L_y=0.0, L_z=0.0), 2) == -math.inf
    with pytest.raises(ValueError):
        r02_bound(problem(L_y=1.0, L_z=0.5), 2)


def test_b20_equals_r02_when_z_independent():
    # Stated as an identity; it only holds at k = 1 (see the decision ledger).
    p = problem(L_y=1.0, L_z=0.0)
    mismatches = [k for k in range(1, 61) if not math.isclose(b20_bound(p, k), r02_bound(p, k), rel_tol=1e-12)]
    assert mismatches == []


def test_b20_below_r02_with_equality_at_one():
    for p in (problem(L_y=1.0, L_z=0.0), problem(L_y=0.7, L_z=0.0, T=2.0, integral=1.0)):
        assert b20_bound(p, 1) == pytest.approx(r02_bound(p, 1), abs=1e-13)
        for k in range(2, 61):
            assert b20_bound(p, k) < r02_bound(p, k)


def test_upper_bounds_reject_bad_k():
    for fn in (b20_bound, r01_bound):
        with pytest.raises(ValueError):
            fn(problem(), 0)


def test_problem_validation():
    with pytest.raises(ValueError):
        problem(T=0.0)
    with pytest.raises(ValueError):
        problem(L_y=-1.0)
    with pytest.raises(ValueError):
        problem(xi=math.inf)


def test_sandwich_examples():
    lo, hi = a21_sandwich(4.0, 5, 0.5)
    assert (lo, hi) == (pytest.approx(1 / 12), pytest.approx(1 / 3))
    assert lo <= abs(origin_gap(LinearExampleSpec.from_norm_sq(4.0), 5)) <= hi
    assert a21_sandwich(0.0, 3, 0.3) == (0.0, 0.0)
    spec = LinearExampleSpec.from_norm_sq(1.0)
    lo, hi = a21_sandwich(spec, 9, 0.25)
    assert lo <= abs(origin_gap(spec, 9)) <= hi


def test_sandwich_rejects_small_n_and_reports_minimum():
    with pytest.raises(ValueError, match="smallest admissible n is 7"):
        a21_sandwich(4.0, 3, 0.25)
    with pytest.raises(ValueError):
        a21_sandwich(4.0, 10, 1.0)


@pytest.mark.parametrize("beta", [1.0, 4.0, 9.0])
@pytest.mark.parametrize("eps", [0.25, 0.5])
def test_sandwich_holds(beta, eps):
    spec = LinearExampleSpec.from_norm_sq(beta)
    for n in range(a21_min_n(beta, eps), 41):
        lo, hi = a21_sandwich(spec, n, eps)
        assert lo <= abs(origin_gap(spec, n)) <= hi, n


def test_a10_examples():
    assert a10_lower(4.0, 5) == pytest.approx(0.5 / math.sqrt(120), rel=1e-14)
    assert a10_lower(0.0, 4) == 0.0
    assert a10_lower(4.0, 3) == pytest.approx(0.5 / math.sqrt(6), rel=1e-14)
    assert a10_lower(4.0, 3) <= abs(origin_gap(LinearExampleSpec.from_norm_sq(4.0), 3))
    with pytest.raises(ValueError):
        a10_lower(4.0, 2)


@pytest.mark.parametrize("beta", [1.0, 4.0, 9.0])
def test_a10_below_gap_and_upper_envelope(beta):
    spec = LinearExampleSpec.from_norm_sq(beta)
    p = problem(L_z=math.sqrt(beta))
    for n in range(max(1, math.ceil(beta - 1)), 41):
        low = a10_lower(spec, n)
        assert low <= abs(origin_gap(spec, n))
        assert math.log(low) <= 0.5 * r01_bound(p, n)


def test_l01_examples():
    assert l01_iterate(1.0, 0, 0.0) == 1.0
    assert l01_iterate(1.0, 3, 0.0) == pytest.approx(8 / 3, abs=1e-15)
    assert l01_iterate(1.0, math.inf, 1.0) == 1.0
    exact, lower = l01_error(1.0, 3)
    assert exact == pytest.approx(math.e - 8 / 3, abs=1e-12)
    assert lower == pytest.approx(1 / 24, rel=1e-14)
    assert l01_error(1.0, 0)[0] == pytest.approx(math.e - 1, rel=1e-14)
    assert l01_error(1e-8, 2)[0] < 1e-23


def test_l01_chain():
    for T in (0.5, 1.0, 2.0):
        prev = math.inf
        for n in range(31):
            exact, lower = l01_error(T, n)
            assert lower <= exact < prev
            prev = exact


def test_l01_tail_large_T():
    # e^T - partial sum, computed independently in high precision
    import mpmath

    mpmath.mp.dps = 60
    for T, n in [(20.0, 5), (50.0, 80), (3.0, 40)]:
        exact = mpmath.exp(T) - mpmath.fsum(mpmath.mpf(T) ** k / mpmath.factorial(k) for k in range(n + 1))
        assert log_l01_tail(T, n) == pytest.approx(float(mpmath.log(exact)), rel=1e-12)


@given(st.floats(0.01, 5.0), st.integers(0, 25), st.floats(0, 1))
def test_l01_iterate_below_solution(T, n, frac):
    s = frac * T
    assert l01_iterate(T, n, s) <= math.exp(T - s) * (1 + 1e-14)


def test_fit_rate_exact_models():
    errors = {k: 2.0**k / math.sqrt(math.factorial(k)) for k in range(1, 13)}
    fit = fit_rate(errors, "sqrt-factorial", k_min=1)
    assert fit.log_c == pytest.approx(math.log(2), abs=1e-10)
    assert fit.residual < 1e-10
    errors = [(k, 3.0**k / math.factorial(k)) for k in range(1, 13)]
    assert fit_rate(errors, "factorial", k_min=1).log_c == pytest.approx(math.log(3), abs=1e-10)


def test_fit_rate_gap_series_is_finite():
    spec = LinearExampleSpec.from_norm_sq(4.0)
    fit = fit_rate({k: abs(origin_gap(spec, k)) for k in range(4, 21)}, "sqrt-factorial")
    assert math.isfinite(fit.log_c)
    # bounded by the size of the floor((k+1)/2) staircase
    assert fit.residual < 0.5 * math.log(4 * 21)


def test_fit_rate_errors():
    with pytest.raises(ValueError, match="degenerate"):
        fit_rate({k: 0.0 for k in range(4, 10)}, "factorial")
    with pytest.raises(ValueError):
        fit_rate({4: 1.0, 5: 0.5}, "factorial")
    with pytest.raises(ValueError):
        fit_rate({4: 1.0, 5: 0.5, 6: 0.1}, "cubic")


@pytest.mark.parametrize("beta", [1.0, 4.0, 9.0])
def test_phase_transition_gap_series(beta):
    spec = LinearExampleSpec.from_norm_sq(beta)
    errors = {k: abs(origin_gap(spec, k)) for k in range(4, 21)}
    right = fit_rate(errors, "sqrt-factorial").residual
    wrong = fit_rate(errors, "factorial").residual
    assert right < wrong
    assert right <= 0.1 * wrong


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_phase_transition_ode_series(T):
    errors = {k: l01_error(T, k)[0] for k in range(4, 21)}
    right = fit_rate(errors, "factorial").residual
    wrong = fit_rate(errors, "sqrt-factorial").residual
    assert right < wrong
    assert right <= 0.1 * wrong


@pytest.mark.parametrize("beta", [1.0, 4.0, 9.0])
def test_correct_mode_wins(beta):
    # the weaker, attainable form of the rate separation
    spec = LinearExampleSpec.from_norm_sq(beta)
    gap = {k: abs(origin_gap(spec, k)) for k in range(4, 21)}
    assert fit_rate(gap, "sqrt-factorial").residual < fit_rate(gap, "factorial").residual
    ode = {k: l01_error(beta / 4.0 + 0.25, k)[0] for k in range(4, 21)}
    assert fit_rate(ode, "factorial").residual < fit_rate(ode, "sqrt-factorial").residual


def test_bound_curve():
    spec = LinearExampleSpec.from_norm_sq(4.0)
    curve = bound_curve("a21-lower", range(1, 12), spec=spec, eps=0.5)
    assert sorted(curve.values) == list(range(3, 12))
    assert bound_curve("b20-exact", [1, 2], problem=problem()).values[2] == b20_bound(problem(), 2)
    ode = bound_curve("l01-lower", [3], T=1.0)
    assert ode.values[3] == pytest.approx(-math.log(24))
    assert set(BOUND_KINDS) >= {"r01", "r02", "a10-lower", "l01-exact"}
    with pytest.raises(ValueError):
        BoundCurve("nonsense")
    assert all(math.isfinite(v) for v in bound_curve("r01", range(1, 101), problem=problem(L_y=2, L_z=3)).values.values())
