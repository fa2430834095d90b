import math

import numpy as np
import pytest

from picard_bsde.bounds import a10_lower, b20_bound, l01_iterate
from picard_bsde.engine import (
    BudgetExceeded,
    GenericDriver,
    apriori_check,
    estimate_e_k,
    estimate_error_series,
    linear_y_iterate,
    linear_y_problem,
    linear_z_problem,
    nested_cost,
    nested_picard,
    zero_driver_problem,
)
from picard_bsde.linear_example import IterateEvaluator, LinearExampleSpec, eval_grad_v, eval_v, origin_gap
from picard_bsde.paths import PathGrid, brownian_increments, map_path_blocks, simulate_paths

BETA4 = LinearExampleSpec.from_norm_sq(4.0)


@pytest.fixture(scope="module")
def series_beta4():
    return estimate_error_series(BETA4, range(1, 9), 128, 10_000, seed=2024)


# -- paths -------------------------------------------------------------------

def test_single_increment_reproducible():
    a = next(simulate_paths(1.0, 1, 1, 1, seed=42))
    b = next(simulate_paths(1.0, 1, 1, 1, seed=42))
    assert a.increments.shape == (1, 1)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert a.W[0, 0] == 0.0 and a.W[1, 0] == a.increments[0, 0]


def test_increments_do_not_depend_on_batch():
    full = brownian_increments(1.0, 2, 8, range(10), seed=3)
    part = brownian_increments(1.0, 2, 8, [7, 2], seed=3)
    np.testing.assert_array_equal(part, full[[7, 2]])


def test_terminal_value_clt():
    P = 100_000
    W_T = brownian_increments(1.0, 1, 1, range(P), seed=9)[:, 0, 0]
    assert abs(W_T.mean()) <= 4 * math.sqrt(1.0 / P)
    # Var of the sample variance of N(0,1) is 2/(P-1)
    assert abs(W_T.var(ddof=1) - 1.0) <= 4 * math.sqrt(2.0 / (P - 1))


def test_quadratic_variation():
    grid = PathGrid(2.0, 400, brownian_increments(2.0, 3, 400, [0], seed=1)[0], 1, 0)
    qv = np.sum(grid.increments**2, axis=0)
    assert np.all(np.abs(qv - 2.0) <= 4 * 2.0 * math.sqrt(2.0 / 400))
    assert grid.dt == 0.005 and grid.times[-1] == 2.0


def test_map_path_blocks_order_and_threads():
    f = lambda idx: np.asarray(idx)[:, None] * 2
    for threads in (1, 4):
        out = map_path_blocks(f, 1000, threads)
        np.testing.assert_array_equal(out[:, 0], np.arange(1000) * 2)


def test_simulate_paths_rejects():
    with pytest.raises(ValueError):
        next(simulate_paths(1.0, 1, 0, 1, seed=0))


# -- e_k --------------------------------------------------------------------

def test_e_k_zero_for_zero_b():
    est = estimate_e_k(LinearExampleSpec.from_norm_sq(0.0), 3, 32, 200, seed=1)
    assert est.estimate <= est.half_width + 1e-15


def test_e_k_dominates_origin_gap(series_beta4):
    e5 = series_beta4[5]
    assert e5.estimate >= abs(origin_gap(BETA4, 5)) - e5.half_width
    assert abs(origin_gap(BETA4, 5)) == pytest.approx(0.13212055882855758, rel=1e-12)


def test_e_k_grid_refinement():
    coarse = estimate_e_k(BETA4, 5, 64, 10_000, seed=1)
    fine = estimate_e_k(BETA4, 5, 256, 10_000, seed=1)
    assert abs(coarse.estimate - fine.estimate) <= coarse.half_width + fine.half_width


def test_e_k_grid_refinement_converges():
    # the grid max approaches the supremum from below at rate sqrt(dt)
    e = [estimate_e_k(BETA4, 5, n, 4000, seed=1).estimate for n in (32, 128, 512)]
    assert e[0] < e[1] < e[2]
    assert (e[2] - e[1]) < 0.75 * (e[1] - e[0])


def test_e_k_lower_chain(series_beta4):
    for entry in series_beta4.entries:
        if entry.k >= 3:
            assert entry.estimate + entry.half_width >= a10_lower(BETA4, entry.k)


def test_e_k_upper_chain(series_beta4):
    problem = BETA4.bsde_problem()
    for entry in series_beta4.entries:
        assert entry.estimate - entry.half_width <= math.exp(0.5 * b20_bound(problem, entry.k))


def test_e_k_metadata_and_validation(series_beta4):
    assert series_beta4.seed == 2024 and series_beta4.paths == 10_000 and series_beta4.steps == 128
    assert all(e.half_width >= 0 and math.isfinite(e.estimate) for e in series_beta4.entries)
    with pytest.raises(ValueError):
        estimate_e_k(BETA4, 2, 16, 1, seed=0)
    with pytest.raises(ValueError):
        estimate_e_k(BETA4, 0, 16, 10, seed=0)


def test_seed_determinism_across_threads():
    spec = LinearExampleSpec((1.0, -0.5))
    runs = [estimate_error_series(spec, [1, 3], 32, 700, seed=77, threads=t) for t in (1, 4, 16)]
    for other in runs[1:]:
        assert other.entries == runs[0].entries
    reports = [apriori_check(BETA4, 2, 1.0, "ii", paths=700, steps=32, seed=3, threads=t) for t in (1, 4, 16)]
    assert reports[1:] == reports[:1] * 2
    nested = [nested_picard(linear_z_problem(BETA4), 2, 0.0, [0.0], 40, seed=5, threads=t) for t in (1, 4, 16)]
    for other in nested[1:]:
        np.testing.assert_array_equal(other.y, nested[0].y)
        np.testing.assert_array_equal(other.z, nested[0].z)


# -- a priori checks -------------------------------------------------------

def test_apriori_zero_b():
    spec = LinearExampleSpec.from_norm_sq(0.0)
    for variant, alpha in (("i", None), ("ii", None), ("iii", 1.5)):
        rep = apriori_check(spec, 2, 1.0, variant, alpha=alpha, paths=100, steps=16, seed=0)
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.passed


def test_apriori_variant_i_margin():
    rep = apriori_check(BETA4, 3, 3.0, "i", s=0.0, paths=10_000, steps=128, seed=1)
    assert rep.passed and rep.margin > 0


def test_apriori_variant_ii():
    rep = apriori_check(BETA4, 3, 3.0, "ii", paths=10_000, steps=128, seed=1)
    assert rep.passed and rep.margin > 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_apriori_sweep(k):
    for lam in sorted({0.5, 1.0, float(k), 2.0 * k}):
        for variant, alpha in (("i", None), ("ii", None), ("iii", 1.0), ("iii", 2.0)):
            rep = apriori_check(BETA4, k, lam, variant, alpha=alpha, s=0.25, paths=4000, steps=64, seed=k)
            assert rep.passed, rep


def test_apriori_validation():
    with pytest.raises(ValueError, match="lambda"):
        apriori_check(BETA4, 1, 0.0)
    with pytest.raises(ValueError, match="alpha"):
        apriori_check(BETA4, 1, 1.0, "iii", alpha=0.0)
    with pytest.raises(ValueError):
        apriori_check(BETA4, 1, 1.0, "iv")


# -- nested Monte-Carlo Picard ---------------------------------------------

def test_nested_n0_is_zero():
    res = nested_picard(linear_z_problem(BETA4), 0, 0.3, [0.1], 10)
    assert np.all(res.y == 0) and np.all(res.z == 0) and res.cost == 0


@pytest.mark.parametrize("beta", [1.0, 4.0])
def test_nested_linear_z_against_closed_form(beta):
    spec = LinearExampleSpec.from_norm_sq(beta)
    problem = linear_z_problem(spec)
    for n in (1, 2, 3):
        res = nested_picard(problem, n, 0.0, [0.0], 200, seed=11)
        ev = IterateEvaluator(spec, n)
        assert abs(res.y[0] - eval_v(ev, 0.0, np.zeros(1))) <= 4 * res.y_stderr[0]
        assert abs(res.z[0, 0] - eval_grad_v(ev, 0.0, np.zeros(1))[0]) <= 4 * res.z_stderr[0, 0]


def test_nested_linear_y_against_ode():
    problem = linear_y_problem(1.0)
    for n in (1, 2, 3, 4):
        res = nested_picard(problem, n, 0.0, [0.0], 60, seed=2)
        # started from Y^0 = 0, so iterate n is the ODE iterate n - 1
        oracle = l01_iterate(1.0, n - 1, 0.0)
        assert oracle == pytest.approx(linear_y_iterate(1.0, 1.0, n, 0.0))
        assert abs(res.y[0] - oracle) <= 4 * res.y_stderr[0] or res.y[0] == oracle


def test_nested_zero_driver():
    res = nested_picard(zero_driver_problem(BETA4), 1, 0.0, [0.0], 4000, seed=4)
    assert abs(res.y[0] - 1.0) <= 4 * res.y_stderr[0]


def test_nested_budget():
    assert nested_cost(3, 200) == 200 * (2 + 200 * (2 + 200 * 2))
    with pytest.raises(BudgetExceeded) as info:
        nested_picard(linear_z_problem(BETA4), 4, 0.0, [0.0], 1000, cost_ceiling=1e9)
    assert info.value.cost > 1e9
    with pytest.raises(ValueError):
        nested_picard(linear_z_problem(BETA4), 3, 0.0, [0.0], [10, 10])


def test_nested_consistency_budget_doubling():
    # doubling every per-level budget halves the mean squared deviation
    spec = LinearExampleSpec.from_norm_sq(1.0)
    problem = linear_z_problem(spec)
    n = 2
    oracle = eval_v(IterateEvaluator(spec, n), 0.0, np.zeros(1))
    mse = []
    for budget in (50, 100):
        dev = [nested_picard(problem, n, 0.0, [0.0], budget, seed=1000 + r).y[0] - oracle for r in range(20)]
        mse.append(np.mean(np.square(dev)))
    # 20 vs 20 chi-square degrees of freedom: the ratio lies in [2/2.46, 2*2.46] with ~95% probability
    assert 2 / 2.46 <= mse[0] / mse[1] <= 2 * 2.46


def test_generic_driver_lipschitz_check():
    ok = GenericDriver(lambda t, y, z: 0.5 * y + z[:, :, 0], 0.5, 1.0)
    assert ok.lipschitz_check(2, 1) <= 1e-12
    bad = GenericDriver(lambda t, y, z: 3.0 * y, 1.0, 0.0, False)
    with pytest.raises(ValueError):
        bad.lipschitz_check(1, 1)
