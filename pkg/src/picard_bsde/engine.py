"""Monte-Carlo machinery around Picard iterations.

* :func:`estimate_e_k` / :func:`estimate_error_series` measure the error norm
  ``e_k`` of the linear example along simulated paths, using the closed-form
  identification ``Y^k_t = v^k(t, W_t)``, ``Z^k_t = grad v^k(t, W_t)``.
* :func:`apriori_check` evaluates both sides of the weighted a priori
  estimates for the difference process ``Y^k - Y^inf``.
* :func:`nested_picard` runs a plain nested Monte-Carlo Picard recursion for
  a generic Markovian BSDE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .linear_example import INF, IterateEvaluator, LinearExampleSpec, eval_grad_v, eval_v
from .paths import NESTED_STREAM, brownian_increments, map_path_blocks, substream

Z95 = 1.959963984540054


class BudgetExceeded(RuntimeError):
    """Raised before launching a computation whose estimated cost is too high."""

    def __init__(self, cost: float, ceiling: float):
        super().__init__(f"estimated cost {cost:.3g} exceeds the ceiling {ceiling:.3g}")
        self.cost = cost
        self.ceiling = ceiling


# -- grid helpers -------------------------------------------------------------

def _grid(steps: int) -> tuple[np.ndarray, float]:
    return np.linspace(0.0, 1.0, steps + 1), 1.0 / steps


def _cell_values(f: np.ndarray) -> np.ndarray:
    """Per-cell quadrature values from samples at ``t_0..t_{N-1}`` (last axis).

    Trapezoidal cells except the last one, which takes its left endpoint so
    that nothing is evaluated at ``t = 1``.
    """
    cells = np.empty_like(f)
    cells[..., :-1] = 0.5 * (f[..., :-1] + f[..., 1:])
    cells[..., -1] = f[..., -1]
    return cells


def _path_fields(spec: LinearExampleSpec, W: np.ndarray, t: np.ndarray, n, with_value=True):
    ev = IterateEvaluator(spec, n)
    v = eval_v(ev, t, W) if with_value else None
    g = eval_grad_v(ev, t[:-1], W[:, :-1])
    return v, g


def _paths_W(spec: LinearExampleSpec, steps: int, idx: np.ndarray, seed: int) -> np.ndarray:
    dW = brownian_increments(1.0, spec.d, steps, idx, seed)
    W = np.zeros((len(idx), steps + 1, spec.d))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    return W, dW


# -- error norm e_k ------------------------------------------------------------

@dataclass(frozen=True)
class ErrorEstimate:
    k: int
    estimate: float
    half_width: float
    paths: int
    steps: int
    seed: int


@dataclass
class ErrorSeries:
    entries: list[ErrorEstimate] = field(default_factory=list)
    seed: int = 0
    steps: int = 0
    paths: int = 0

    def as_mapping(self) -> dict[int, float]:
        return {e.k: e.estimate for e in self.entries}

    def __getitem__(self, k: int) -> ErrorEstimate:
        for e in self.entries:
            if e.k == k:
                return e
        raise KeyError(k)


def _mean_sqrt_ci(q: np.ndarray) -> tuple[float, float]:
    # estimate sqrt(E q) and a 95% half-width via the delta method
    mean = float(np.mean(q))
    est = math.sqrt(mean)
    if est == 0.0:
        return 0.0, 0.0
    se = float(np.std(q, ddof=1)) / math.sqrt(len(q))
    return est, Z95 * se / (2.0 * est)


def estimate_error_series(
    spec: LinearExampleSpec,
    ks: Sequence[int],
    steps: int,
    paths: int,
    seed: int,
    threads: int = 1,
) -> ErrorSeries:
    """Estimate ``e_k`` for every ``k`` in ``ks`` on common Brownian paths.

    Per path the sample is ``max_i |v^k - v^inf|^2(t_i, W_{t_i})`` plus the
    grid quadrature of ``|grad v^k - grad v^inf|^2``.  The grid max
    under-estimates the supremum over continuous time.
    """
    if paths < 2:
        raise ValueError("need at least 2 paths for a confidence interval")
    if steps < 1:
        raise ValueError("need at least one time step")
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks):
        raise ValueError("k must be positive")
    t, dt = _grid(steps)

    def block(idx):
        W, _ = _paths_W(spec, steps, idx, seed)
        v_inf, g_inf = _path_fields(spec, W, t, INF)
        rows = np.empty((len(idx), len(ks)))
        for col, k in enumerate(ks):
            v_k, g_k = _path_fields(spec, W, t, k)
            sup_y = np.max((v_k - v_inf) ** 2, axis=1)
            z_sq = np.sum((g_k - g_inf) ** 2, axis=-1)
            rows[:, col] = sup_y + dt * np.sum(_cell_values(z_sq), axis=1)
        return rows

    q = map_path_blocks(block, paths, threads)
    series = ErrorSeries(seed=seed, steps=steps, paths=paths)
    for col, k in enumerate(ks):
        est, hw = _mean_sqrt_ci(q[:, col])
        series.entries.append(ErrorEstimate(k, est, hw, paths, steps, seed))
    return series


def estimate_e_k(spec: LinearExampleSpec, k: int, steps: int, paths: int, seed: int, threads: int = 1) -> ErrorEstimate:
    return estimate_error_series(spec, [k], steps, paths, seed, threads).entries[0]


def backward_residual(spec: LinearExampleSpec, n: int, steps: int, paths: int, seed: int) -> float:
    """RMS over paths of the discretized relation

    ``Y^{n+1}_0 - xi - sum <b, Z^n> dt + sum <Z^{n+1}, dW>``

    with ``Y, Z`` read off the closed forms; it vanishes as the grid refines.
    """
    t, dt = _grid(steps)
    W, dW = _paths_W(spec, steps, np.arange(paths), seed)
    y0 = eval_v(IterateEvaluator(spec, n + 1), 0.0, np.zeros(spec.d))
    xi = spec.terminal(W[:, -1])
    z_n = eval_grad_v(IterateEvaluator(spec, n), t[:-1], W[:, :-1])
    z_next = eval_grad_v(IterateEvaluator(spec, n + 1), t[:-1], W[:, :-1])
    drift = dt * np.sum(z_n @ spec.b_array, axis=1)
    mart = np.sum(z_next * dW, axis=(1, 2))
    r = y0 - xi - drift + mart
    return float(np.sqrt(np.mean(r * r)))


# -- a priori estimates ------------------------------------------------------------

@dataclass(frozen=True)
class AprioriReport:
    variant: str
    k: int
    lam: float
    alpha: float | None
    s: float
    lhs: float
    rhs: float
    margin: float
    lhs_half_width: float
    rhs_half_width: float
    diff_stderr: float
    passed: bool


def apriori_check(
    spec: LinearExampleSpec,
    k: int,
    lam: float,
    variant: str = "i",
    s: float = 0.0,
    alpha: float | None = None,
    paths: int = 10_000,
    steps: int = 128,
    seed: int = 0,
    threads: int = 1,
) -> AprioriReport:
    """Monte-Carlo evaluation of both sides of one a priori inequality.

    The process is ``Y = v^k - v^inf``, ``Z = grad(v^k - v^inf)`` and
    ``A = <b, grad(v^{k-1} - v^inf)>`` along Brownian paths, so ``Y_T = 0``.
    Conditional expectations at ``s`` are replaced by plain expectations.
    The check passes when ``lhs <= rhs + 4 * stderr(lhs - rhs)``.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if variant not in ("i", "ii", "iii"):
        raise ValueError(f"variant must be 'i', 'ii' or 'iii', got {variant!r}")
    if variant == "iii":
        if alpha is None or alpha <= 0:
            raise ValueError(f"alpha must be positive for variant iii, got {alpha}")
    if k < 1:
        raise ValueError("k must be at least 1")
    if not 0.0 <= s < 1.0:
        raise ValueError("s must lie in [0, 1)")
    if paths < 2:
        raise ValueError("need at least 2 paths")
    t, dt = _grid(steps)
    i_s = int(round(s / dt))
    s = float(t[i_s])
    T = 1.0
    weight = np.exp(lam * t)

    if variant == "iii":
        # exact per-cell integrals of the Gamma-type weights
        w_y = (t[1:] ** alpha - t[:-1] ** alpha) / math.exp(gammaln(alpha + 1.0))
        w_z = (t[1:] ** (alpha + 1.0) - t[:-1] ** (alpha + 1.0)) / math.exp(gammaln(alpha + 2.0))

    def block(idx):
        W, _ = _paths_W(spec, steps, idx, seed)
        v_inf, g_inf = _path_fields(spec, W, t, INF)
        v_k, g_k = _path_fields(spec, W, t, k)
        _, g_prev = _path_fields(spec, W, t, k - 1, with_value=False)
        y_sq = (v_k - v_inf) ** 2
        z_sq = np.sum((g_k - g_inf) ** 2, axis=-1)
        a_sq = ((g_prev - g_inf) @ spec.b_array) ** 2
        yT = weight[-1] * y_sq[:, -1]
        if variant == "iii":
            lhs = _cell_values(weight[:-1] * y_sq[:, :-1]) @ w_y + _cell_values(weight[:-1] * z_sq) @ w_z
            rhs = yT * T**alpha / math.exp(gammaln(alpha + 1.0)) + _cell_values(weight[:-1] * a_sq) @ w_z / lam
            return np.column_stack([lhs, rhs])
        z_cells = dt * _cell_values(weight[:-1] * z_sq)
        a_cells = dt * _cell_values(weight[:-1] * a_sq) / lam
        rhs = yT + np.sum(a_cells[:, i_s:], axis=1)
        if variant == "i":
            lhs = weight[i_s] * y_sq[:, i_s] + np.sum(z_cells[:, i_s:], axis=1)
        else:
            tail = np.cumsum(z_cells[:, ::-1], axis=1)[:, ::-1]
            tail = np.concatenate([tail, np.zeros((len(idx), 1))], axis=1)
            lhs = np.max((weight * y_sq + tail)[:, i_s:], axis=1)
            rhs = 34.0 * rhs
        return np.column_stack([lhs, rhs])

    rows = map_path_blocks(block, paths, threads)
    lhs, rhs = rows[:, 0], rows[:, 1]
    sqrt_p = math.sqrt(paths)
    lhs_se = float(np.std(lhs, ddof=1)) / sqrt_p
    rhs_se = float(np.std(rhs, ddof=1)) / sqrt_p
    diff_se = float(np.std(lhs - rhs, ddof=1)) / sqrt_p
    lhs_m, rhs_m = float(np.mean(lhs)), float(np.mean(rhs))
    return AprioriReport(
        variant=variant,
        k=k,
        lam=lam,
        alpha=alpha if variant == "iii" else None,
        s=s,
        lhs=lhs_m,
        rhs=rhs_m,
        margin=rhs_m - lhs_m,
        lhs_half_width=Z95 * lhs_se,
        rhs_half_width=Z95 * rhs_se,
        diff_stderr=diff_se,
        passed=lhs_m <= rhs_m + 4.0 * diff_se,
    )


# -- nested Monte-Carlo Picard -------------------------------------------------

@dataclass(frozen=True)
class GenericDriver:
    """Driver ``f(t, y, z)`` with declared Lipschitz constants.

    ``rule`` is vectorized: ``t`` has shape ``(B,)``, ``y`` ``(B, d)``, ``z``
    ``(B, d, m)``, and the result ``(B, d)``.
    """

    rule: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    L_y: float
    L_z: float
    z_dependent: bool = True

    def __call__(self, t, y, z):
        return self.rule(t, y, z)

    def lipschitz_check(self, d: int, m: int, probes: int = 1000, seed: int = 0, T: float = 1.0) -> float:
        """Largest observed ``|f(y,z) - f(y',z')| - L_y|y-y'| - L_z|z-z'|_F``
        over random probe pairs; raises if it exceeds ``1e-12``."""
        gen = substream(seed, 99)
        t = gen.uniform(0.0, T, probes)
        y1, y2 = gen.normal(size=(2, probes, d)) * 3
        z1, z2 = gen.normal(size=(2, probes, d, m)) * 3
        lhs = np.linalg.norm(self(t, y1, z1) - self(t, y2, z2), axis=-1)
        rhs = self.L_y * np.linalg.norm(y1 - y2, axis=-1) + self.L_z * np.linalg.norm(z1 - z2, axis=(-2, -1))
        worst = float(np.max(lhs - rhs))
        if worst > 1e-12:
            raise ValueError(f"driver violates its declared Lipschitz constants by {worst:.3g}")
        return worst


@dataclass(frozen=True)
class MarkovianBsde:
    """``Y_s = g(x + W_T - W_t) + int_s^T f(r, Y_r, Z_r) dr - int_s^T Z_r dW_r``.

    ``terminal`` maps points of shape ``(B, m)`` to values ``(B, d)``.
    """

    terminal: Callable[[np.ndarray], np.ndarray]
    driver: GenericDriver
    T: float
    d: int
    m: int


@dataclass(frozen=True)
class NestedPicardResult:
    y: np.ndarray
    z: np.ndarray
    y_stderr: np.ndarray
    z_stderr: np.ndarray
    cost: float
    truncation_bias: float


_CHUNK_ROWS = 1 << 18
_TOP_BLOCK = 8


def _normalize_budget(budget, n: int) -> list[int]:
    if np.isscalar(budget):
        budget = [int(budget)] * n
    budget = [int(b) for b in budget]
    if len(budget) < n:
        raise ValueError(f"budget needs {n} per-level sample counts, got {len(budget)}")
    if any(b < 1 for b in budget[:n]):
        raise ValueError("per-level sample counts must be positive")
    return budget


def nested_cost(n: int, budget) -> float:
    """Terminal plus driver evaluations needed by one call at level ``n``."""
    if n == 0:
        return 0.0
    budget = _normalize_budget(budget, n)
    cost = 0.0
    for level in range(1, n + 1):
        cost = budget[level - 1] * (2.0 + cost)
    return cost


def _level_samples(problem: MarkovianBsde, level: int, t, x, budget, gen, delta_frac):
    """Per-sample summands of the level-``level`` estimator at points ``(t, x)``.

    Returns arrays of shape ``(B, M, d)``, ``(B, M, d, m)`` and the per-sample
    gradient-integrand densities used for the truncation-bias proxy.
    """
    B, m, d = len(t), problem.m, problem.d
    M = budget[level - 1]
    T = problem.T
    tr = np.repeat(t, M)
    xr = np.repeat(x, M, axis=0)
    tau = T - tr
    dW_T = gen.standard_normal((B * M, m)) * np.sqrt(tau)[:, None]
    s = tr + gen.uniform(size=B * M) * tau
    dW_s = gen.standard_normal((B * M, m)) * np.sqrt(s - tr)[:, None]
    g_val = problem.terminal(xr + dW_T)
    g_0 = problem.terminal(xr)
    if level > 1:
        y_prev, z_prev = _level_mean(problem, level - 1, s, xr + dW_s, budget, gen, delta_frac)
    else:
        y_prev, z_prev = np.zeros((B * M, d)), np.zeros((B * M, d, m))
    f_val = problem.driver(s, y_prev, z_prev)
    y_s = g_val + tau[:, None] * f_val
    # the Brownian weight dW_s/(s - t) has infinite variance near s = t
    kept = s - tr >= delta_frac * tau
    density = np.where(kept, 1.0 / np.maximum(s - tr, 1e-300), 0.0)[:, None] * dW_s
    grad_integrand = f_val[:, :, None] * density[:, None, :]
    z_s = (g_val - g_0)[:, :, None] * (dW_T / tau[:, None])[:, None, :] + tau[:, None, None] * grad_integrand
    bias = delta_frac * tau[:, None, None] * grad_integrand
    return y_s.reshape(B, M, d), z_s.reshape(B, M, d, m), bias.reshape(B, M, d * m)


def _level_mean(problem, level, t, x, budget, gen, delta_frac):
    M = budget[level - 1]
    chunk = max(1, _CHUNK_ROWS // M)
    ys, zs = [], []
    for lo in range(0, len(t), chunk):
        y_s, z_s, _ = _level_samples(problem, level, t[lo : lo + chunk], x[lo : lo + chunk], budget, gen, delta_frac)
        ys.append(y_s.mean(axis=1))
        zs.append(z_s.mean(axis=1))
    return np.concatenate(ys), np.concatenate(zs)


def nested_picard(
    problem: MarkovianBsde,
    n: int,
    t: float,
    x,
    budget,
    seed: int = 0,
    threads: int = 1,
    cost_ceiling: float | None = 1e9,
    delta_frac: float = 1e-3,
) -> NestedPicardResult:
    """Nested Monte-Carlo estimate of ``(Y^n_t, Z^n_t)`` started at ``x``.

    Level ``l`` averages ``budget[l-1]`` samples of

        g(x + dW_T) + (T - t) f(s, U_{l-1}(s, x + dW_s))

    for the value, with ``s`` uniform on ``[t, T]``; the value is unbiased.
    The gradient reuses the samples weighted by ``dW_T / (T - t)`` (terminal
    part, with ``g(x)`` as control variate) and ``dW_s / (s - t)`` (driver
    part), the latter only for ``s >= t + delta`` with
    ``delta = delta_frac * (T - t)``.  ``truncation_bias`` approximates the
    dropped gradient piece by ``delta`` times the mean integrand density.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    x = np.asarray(x, dtype=float).reshape(problem.m)
    if not 0.0 <= t < problem.T:
        raise ValueError("t must lie in [0, T)")
    d, m = problem.d, problem.m
    if n == 0:
        zeros_y, zeros_z = np.zeros(d), np.zeros((d, m))
        return NestedPicardResult(zeros_y, zeros_z, zeros_y.copy(), zeros_z.copy(), 0.0, 0.0)
    budget = _normalize_budget(budget, n)
    cost = nested_cost(n, budget)
    if cost_ceiling is not None and cost > cost_ceiling:
        raise BudgetExceeded(cost, cost_ceiling)
    M = budget[n - 1]

    def block(idx):
        gen = substream(seed, NESTED_STREAM, n, int(idx[0]) // _TOP_BLOCK)
        top = budget.copy()
        top[n - 1] = len(idx)
        y_s, z_s, bias = _level_samples(problem, n, np.array([t]), x[None, :], top, gen, delta_frac)
        return np.concatenate([y_s[0], z_s[0].reshape(len(idx), d * m), bias[0]], axis=1)

    blocks = [np.arange(lo, min(lo + _TOP_BLOCK, M)) for lo in range(0, M, _TOP_BLOCK)]
    if threads <= 1:
        parts = [block(b) for b in blocks]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, blocks))
    rows = np.concatenate(parts)
    y_rows, z_rows, b_rows = rows[:, :d], rows[:, d : d + d * m], rows[:, d + d * m :]
    se = lambda a: np.std(a, axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.full(a.shape[1], np.inf)
    return NestedPicardResult(
        y=y_rows.mean(axis=0),
        z=z_rows.mean(axis=0).reshape(d, m),
        y_stderr=se(y_rows),
        z_stderr=se(z_rows).reshape(d, m),
        cost=cost,
        truncation_bias=float(np.max(np.abs(b_rows.mean(axis=0)))),
    )


# -- built-in problems ---------------------------------------------------------

def linear_z_problem(spec: LinearExampleSpec) -> MarkovianBsde:
    """The linear example: ``f(z) = <b, z>``, ``g(x) = 2**(m/2) exp(-|x|**2/2)``."""
    b = spec.b_array
    driver = GenericDriver(lambda t, y, z: z[:, 0, :] @ b[:, None], 0.0, math.sqrt(spec.b_norm_sq), True)
    return MarkovianBsde(lambda x: spec.terminal(x)[:, None], driver, 1.0, 1, spec.d)


def linear_y_problem(L_y: float, T: float = 1.0, m: int = 1) -> MarkovianBsde:
    """``f(y) = L_y y`` with ``g = 1``; the iterates are exponential partial sums."""
    driver = GenericDriver(lambda t, y, z: L_y * y, abs(L_y), 0.0, False)
    return MarkovianBsde(lambda x: np.ones((len(x), 1)), driver, T, 1, m)


def zero_driver_problem(spec: LinearExampleSpec) -> MarkovianBsde:
    driver = GenericDriver(lambda t, y, z: np.zeros(y.shape), 0.0, 0.0, False)
    return MarkovianBsde(lambda x: spec.terminal(x)[:, None], driver, 1.0, 1, spec.d)


def linear_y_iterate(L_y: float, T: float, n: int, t: float) -> float:
    """Exact ``Y^n_t`` of :func:`linear_y_problem` started from ``Y^0 = 0``."""
    h = L_y * (T - t)
    return math.fsum(h**k / math.factorial(k) for k in range(n))
