"""Upper and lower envelopes for Picard iteration errors.

All upper bounds are returned as the natural log of the bound on the
*squared* error ``e_k**2``; ``-inf`` stands for a zero bound.  Lower bounds
for the linear example are returned as plain floats because they are
compared against exactly computed gaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .special import log_factorial

LOG35 = math.log(35.0)

BOUND_KINDS = (
    "b20-exact",
    "r01",
    "r02",
    "thm1-lower",
    "a21-lower",
    "a21-upper",
    "a10-lower",
    "l01-lower",
    "l01-exact",
)


@dataclass(frozen=True)
class BsdeProblem:
    """Constants entering the explicit upper bound of a Lipschitz BSDE."""

    T: float
    d: int
    m: int
    L_y: float
    L_z: float
    xi_second_moment: float
    driver_norm_integral: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive and finite, got {self.T}")
        if self.d < 1 or self.m < 1:
            raise ValueError("d and m must be positive")
        for name in ("L_y", "L_z", "xi_second_moment", "driver_norm_integral"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {val}")


@dataclass
class BoundCurve:
    kind: str
    values: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BOUND_KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _log_moment(problem: BsdeProblem, k: int) -> float:
    return _log(problem.xi_second_moment + problem.T / k * problem.driver_norm_integral)


def _check_k(k: int):
    if k < 1 or int(k) != k:
        raise ValueError(f"k must be a positive integer, got {k}")


def _log_b20_sum(problem: BsdeProblem, k: int) -> float:
    # log of sum_l k!/(l!(k-l)!) L_y^l L_z^(k-l) T^(l/2) / sqrt(l!), with 0**0 = 1
    log_ly, log_lz = _log(problem.L_y), _log(problem.L_z)
    log_terms = []
    for ell in range(k + 1):
        a = 0.0 if ell == 0 else ell * log_ly
        b = 0.0 if ell == k else (k - ell) * log_lz
        if a == -math.inf or b == -math.inf:
            continue
        log_terms.append(
            log_factorial(k) - log_factorial(ell) - log_factorial(k - ell)
            + a + b + 0.5 * ell * math.log(problem.T) - 0.5 * log_factorial(ell)
        )
    return float(logsumexp(log_terms)) if log_terms else -math.inf


def b20_bound(problem: BsdeProblem, k: int) -> float:
    """Log of the explicit bound on ``e_k**2``::

        35 (T e / k)**k S(k)**2 (E|xi|**2 + T/k int_0^T E|f(t, Y, Z)|**2 dt)
    """
    _check_k(k)
    log_s = _log_b20_sum(problem, k)
    log_mom = _log_moment(problem, k)
    if log_s == -math.inf or log_mom == -math.inf:
        return -math.inf
    return LOG35 + k * (math.log(problem.T) + 1.0 - math.log(k)) + 2.0 * log_s + log_mom


def r01_bound(problem: BsdeProblem, k: int) -> float:
    """Log of ``35 (4 max(T^2, 1) e max(L_y^2, L_z^2))**k / k!`` times the
    moment factor.  Dominates :func:`b20_bound` and gives the square-root
    factorial rate."""
    _check_k(k)
    lmax = max(problem.L_y, problem.L_z)
    log_mom = _log_moment(problem, k)
    if lmax == 0 or log_mom == -math.inf:
        return -math.inf
    base = math.log(4.0 * max(problem.T**2, 1.0) * math.e) + 2.0 * math.log(lmax)
    return LOG35 + k * base - log_factorial(k) + log_mom


def r02_bound(problem: BsdeProblem, k: int) -> float:
    """Log of ``35 (T^2 e L_y^2)**k / (k!)**2`` times the moment factor
    (``z``-independent drivers only)."""
    _check_k(k)
    if problem.L_z != 0:
        raise ValueError(f"r02_bound needs L_z == 0, got L_z={problem.L_z}")
    log_mom = _log_moment(problem, k)
    if problem.L_y == 0 or log_mom == -math.inf:
        return -math.inf
    base = 2.0 * math.log(problem.T) + 1.0 + 2.0 * math.log(problem.L_y)
    return LOG35 + k * base - 2.0 * log_factorial(k) + log_mom


def _norm_sq(spec) -> float:
    return float(getattr(spec, "b_norm_sq", spec))


def _log_staircase(beta: float, n: int) -> float:
    # log((beta/4)**j / j!) with j = floor((n+1)/2)
    j = (n + 1) // 2
    if beta == 0:
        return -math.inf
    return j * math.log(beta / 4.0) - log_factorial(j)


def a21_min_n(b_norm_sq: float, eps: float) -> int:
    return max(1, math.ceil(b_norm_sq / (2.0 * eps) - 1.0))


def a21_sandwich(spec, n: int, eps: float) -> tuple[float, float]:
    """Bracket for ``|v^inf(0,0) - v^n(0,0)|`` valid for
    ``n >= |b|**2 / (2 eps) - 1``.

    ``spec`` is a :class:`LinearExampleSpec` or the value ``|b|**2``.
    """
    beta = _norm_sq(spec)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if n < 1 or n < beta / (2.0 * eps) - 1.0:
        raise ValueError(
            f"sandwich needs n >= |b|^2/(2 eps) - 1; smallest admissible n is {a21_min_n(beta, eps)}"
        )
    base = math.exp(_log_staircase(beta, n))
    return base * (1.0 - eps), base / (1.0 - eps)


def a10_lower(spec, n: int) -> float:
    """``(1/2) (|b|**2/4)**floor((n+1)/2) / sqrt(n!)`` for ``n >= |b|**2 - 1``."""
    beta = _norm_sq(spec)
    if n < 1 or n < beta - 1.0:
        raise ValueError(f"a10_lower needs n >= |b|^2 - 1 = {beta - 1.0}, got n={n}")
    j = (n + 1) // 2
    if beta == 0:
        return 0.0
    return 0.5 * math.exp(j * math.log(beta / 4.0) - 0.5 * log_factorial(n))


def l01_iterate(T: float, n: float, s: float) -> float:
    """Picard iterate ``1 + sum_{k=1}^n (T-s)**k / k!`` of ``Y = 1 + int_s^T Y``;
    ``n = inf`` gives the solution ``exp(T - s)``."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if not 0.0 <= s <= T:
        raise ValueError(f"s must lie in [0, T], got {s}")
    if n == math.inf:
        return math.exp(T - s)
    if n < 0 or int(n) != n:
        raise ValueError(f"n must be a non-negative integer or inf, got {n}")
    h = T - s
    return math.fsum(h**k / math.factorial(k) for k in range(int(n) + 1))


def log_l01_tail(T: float, n: int) -> float:
    """``log(sum_{k>n} T**k / k!)`` via log-sum-exp over the tail terms."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    log_t = math.log(T)
    k_stop = max(n + 1, int(T)) + 60
    while True:
        ks = np.arange(n + 1, k_stop + 1)
        logs = ks * log_t - np.array([math.lgamma(k + 1) for k in ks])
        if logs[-1] < logs.max() - 60:
            return float(logsumexp(logs))
        k_stop *= 2


def l01_error(T: float, n: int) -> tuple[float, float]:
    """``(sup_s |Y^inf_s - Y^n_s|, T**(n+1)/(n+1)!)`` for the ODE example."""
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    exact = math.exp(log_l01_tail(T, n))
    lower = math.exp((n + 1) * math.log(T) - log_factorial(n + 1))
    return exact, lower


@dataclass(frozen=True)
class RateFit:
    log_c: float
    intercept: float
    residual: float
    ks: tuple[int, ...]


FIT_WEIGHTS = {"sqrt-factorial": 0.5, "factorial": 1.0}


def fit_rate(errors, mode: str, k_min: int = 4) -> RateFit:
    """Least-squares fit of ``log e_k + w log k!`` against ``k log c + const``.

    ``w`` is 1/2 for ``mode="sqrt-factorial"`` and 1 for ``"factorial"``.
    ``errors`` is a mapping ``k -> e_k``, a sequence of ``(k, e_k)`` pairs, or
    an object with an ``as_mapping()`` method.  Entries with ``k < k_min`` or
    non-positive/non-finite errors are ignored.  ``residual`` is the RMS of the
    fit residuals.
    """
    if mode not in FIT_WEIGHTS:
        raise ValueError(f"mode must be one of {sorted(FIT_WEIGHTS)}, got {mode!r}")
    if hasattr(errors, "as_mapping"):
        errors = errors.as_mapping()
    items = errors.items() if isinstance(errors, Mapping) else errors
    pairs = sorted((int(k), float(e)) for k, e in items if k >= k_min)
    if pairs and all(e == 0 for _, e in pairs):
        raise ValueError("degenerate fit: all errors are zero")
    pairs = [(k, e) for k, e in pairs if e > 0 and math.isfinite(e)]
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 usable error entries, got {len(pairs)}")
    ks = np.array([k for k, _ in pairs], dtype=float)
    y = np.array([math.log(e) + FIT_WEIGHTS[mode] * log_factorial(k) for k, e in pairs])
    design = np.column_stack([ks, np.ones_like(ks)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return RateFit(
        log_c=float(coef[0]),
        intercept=float(coef[1]),
        residual=float(np.sqrt(np.mean(resid**2))),
        ks=tuple(int(k) for k in ks),
    )


def bound_curve(kind: str, ks: Sequence[int], **kwargs) -> BoundCurve:
    """Evaluate one envelope on a range of ``k`` as a :class:`BoundCurve` of
    log-values.

    Keyword arguments are forwarded: ``problem`` for the upper bounds,
    ``spec`` (and ``eps`` for the sandwich) for the example lower bounds, ``T``
    for the ODE curves.  Inadmissible ``k`` are skipped.
    """
    curve = BoundCurve(kind)
    for k in ks:
        try:
            if kind == "b20-exact":
                val = b20_bound(kwargs["problem"], k)
            elif kind == "r01":
                val = r01_bound(kwargs["problem"], k)
            elif kind == "r02":
                val = r02_bound(kwargs["problem"], k)
            elif kind in ("a10-lower", "thm1-lower"):
                val = _log(a10_lower(kwargs["spec"], k))
            elif kind in ("a21-lower", "a21-upper"):
                lo, hi = a21_sandwich(kwargs["spec"], k, kwargs["eps"])
                val = _log(lo if kind == "a21-lower" else hi)
            elif kind == "l01-exact":
                val = log_l01_tail(kwargs["T"], k)
            else:
                val = (k + 1) * math.log(kwargs["T"]) - log_factorial(k + 1)
        except ValueError:
            continue
        if math.isfinite(val):
            curve.values[k] = val
    return curve
