"""Closed forms for the linear example PDE/BSDE on ``[0, 1] x R^d``.

The example has terminal function ``2**(d/2) exp(-|x|**2 / 2)`` and driver
``f(z) = <b, z>``.  Its Picard iterates ``v^n`` and the solution ``v^inf``
are Gaussian convolutions, so everything reduces to derivatives of the
one-dimensional smoothed Gaussian

    g_t(x) = E[exp(-(x + Z)**2 / 2)],   Z ~ N(0, 1 - t),
           = (2 - t)**(-1/2) exp(-x**2 / (2 (2 - t))).

The iterate of index ``n`` is a truncated Taylor expansion in the shift
``b (1 - t)``; the multi-index form keeps the cost at
``binom(k + d - 1, d - 1)`` products per order ``k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from .bounds import BsdeProblem
from .special import compensated_sum, hermite_table, multi_indices

INF = math.inf


@dataclass(frozen=True)
class LinearExampleSpec:
    """Parameters of the linear example; the horizon is fixed to 1."""

    b: tuple[float, ...]
    T: float = field(default=1.0, init=False)

    def __post_init__(self):
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        if not b:
            raise ValueError("b must have at least one entry")
        if not all(math.isfinite(v) for v in b):
            raise ValueError(f"b must be finite, got {b}")
        object.__setattr__(self, "b", b)

    @classmethod
    def from_norm_sq(cls, b_norm_sq: float, d: int = 1) -> "LinearExampleSpec":
        """Spec with ``b = (sqrt(b_norm_sq), 0, ..., 0)`` in dimension ``d``."""
        if b_norm_sq < 0:
            raise ValueError(f"b_norm_sq must be non-negative, got {b_norm_sq}")
        return cls((math.sqrt(b_norm_sq),) + (0.0,) * (d - 1))

    @property
    def d(self) -> int:
        return len(self.b)

    @cached_property
    def b_array(self) -> np.ndarray:
        return np.array(self.b)

    @cached_property
    def b_norm_sq(self) -> float:
        return math.fsum(v * v for v in self.b)

    def terminal(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 ** (self.d / 2) * np.exp(-0.5 * np.sum(x * x, axis=-1))

    def xi_second_moment(self) -> float:
        """``E[xi**2] = E[2**d exp(-|W_1|**2)] = (2 / sqrt(3))**d``."""
        return (2.0 / math.sqrt(3.0)) ** self.d

    def driver_second_moment(self, t: float) -> float:
        """``E[<b, grad v^inf(t, W_t)>**2]`` in closed form.

        With ``y = W_t + b (1 - t) ~ N(b (1 - t), t I)`` and ``c = 2 - t`` the
        integrand is ``2**d c**(-d-2) exp(-|y|**2 / c) <b, y>**2``; tilting the
        Gaussian by ``exp(-|y|**2 / c)`` gives the formula below.
        """
        beta, d = self.b_norm_sq, self.d
        c = 2.0 - t
        tilt = c + 2.0 * t
        mass = (c / tilt) ** (d / 2) * math.exp(-beta * (1.0 - t) ** 2 / tilt)
        mean_proj = beta * (1.0 - t) * c / tilt
        var = t * c / tilt
        return 2.0**d * c ** (-d - 2) * mass * (mean_proj**2 + var * beta)

    def driver_norm_integral(self) -> float:
        """``int_0^1 E[<b, grad v^inf(t, W_t)>**2] dt``."""
        val, _ = integrate.quad(self.driver_second_moment, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)
        return val

    def bsde_problem(self) -> BsdeProblem:
        """The example as a Lipschitz BSDE: ``L_y = 0``, ``L_z = |b|``."""
        return BsdeProblem(
            T=1.0,
            d=1,
            m=self.d,
            L_y=0.0,
            L_z=math.sqrt(self.b_norm_sq),
            xi_second_moment=self.xi_second_moment(),
            driver_norm_integral=self.driver_norm_integral(),
        )


def smoothed_gaussian_deriv(t, x, k: int):
    """``d^k/dx^k g_t(x)`` for ``0 <= t < 1``.

    ``(2 - t)**(-(k+1)/2) (-1)**k H_k(x / sqrt(2 - t)) exp(-x**2 / (2 (2 - t)))``
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr >= 1.0) or np.any(t_arr < 0.0):
        raise ValueError("smoothed_gaussian_deriv needs 0 <= t < 1")
    out = _gaussian_deriv_table(t_arr, np.asarray(x, dtype=float), k)[k]
    return float(out) if np.ndim(out) == 0 else out


def _gaussian_deriv_table(t, x, k_max: int) -> np.ndarray:
    # rows j = 0..k_max of d^j g_t(x); valid for t <= 1 (t = 1 gives the plain Gaussian)
    c = 2.0 - t
    u = x / np.sqrt(c)
    base = np.exp(-0.5 * u * u) / np.sqrt(c)
    table = hermite_table(k_max, u)
    scale = -1.0 / np.sqrt(c)
    factor = base
    for j in range(k_max + 1):
        table[j] *= factor
        factor = factor * scale
    return table


@dataclass(frozen=True)
class IterateEvaluator:
    """Evaluates ``v^n`` (``n`` a non-negative int or ``math.inf``) and its
    spatial gradient."""

    spec: LinearExampleSpec
    n: float

    def __post_init__(self):
        n = self.n
        if n != INF and (n < 0 or int(n) != n):
            raise ValueError(f"iteration index must be a non-negative integer or inf, got {n}")
        if n != INF:
            object.__setattr__(self, "n", int(n))

    @cached_property
    def _orders(self) -> list[list[tuple[int, ...]]]:
        return [list(multi_indices(self.spec.d, k)) for k in range(int(self.n))]

    def value(self, t, x):
        return eval_v(self, t, x)

    def grad(self, t, x):
        return eval_grad_v(self, t, x)


def _prepare(spec: LinearExampleSpec, t, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (spec.d,):
        raise ValueError(f"x must have trailing dimension {spec.d}, got shape {x.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite input")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    return t, x


def _factor_tables(spec: LinearExampleSpec, t, x, order: int):
    """Per-coordinate factors for the multi-index products.

    ``F[l][j] = b_l**j / j! * d^j g_t(x_l)`` and
    ``D[l][j] = b_l**j / j! * d^(j+1) g_t(x_l)`` for ``j < order``.
    """
    F, D = [], []
    for ell in range(spec.d):
        table = _gaussian_deriv_table(t, x[..., ell], order)
        coef = np.array([spec.b[ell] ** j / math.factorial(j) for j in range(order)])
        shape = (order,) + (1,) * t.ndim
        F.append(coef.reshape(shape) * table[:order])
        D.append(coef.reshape(shape) * table[1 : order + 1])
    return F, D


def _series_terms(ev: IterateEvaluator, t, F, grad_coord=None, D=None):
    weight = 1.0 - t
    terms = []
    for k, alphas in enumerate(ev._orders):
        wk = weight**k
        for alpha in alphas:
            prod = wk
            for ell, a in enumerate(alpha):
                prod = prod * (D[ell][a] if ell == grad_coord else F[ell][a])
            terms.append(prod)
    return terms


def eval_v(ev: IterateEvaluator, t, x):
    """``v^n(t, x)``; ``x`` has trailing dimension ``d`` and ``t`` broadcasts
    against ``x.shape[:-1]``."""
    spec = ev.spec
    t, x = _prepare(spec, t, x)
    norm = 2.0 ** (spec.d / 2)
    if ev.n == 0:
        out = np.zeros(t.shape)
    elif ev.n == INF:
        shifted = x + spec.b_array * (1.0 - t)[..., None]
        out = norm * _product_of_g(t, shifted)
    else:
        F, _ = _factor_tables(spec, t, x, ev.n)
        out = norm * compensated_sum(_series_terms(ev, t, F))
    at_end = t == 1.0
    if ev.n != 0 and np.any(at_end):
        out = np.where(at_end, spec.terminal(x), out)
    return float(out) if out.ndim == 0 else out


def _product_of_g(t, y):
    out = None
    for ell in range(y.shape[-1]):
        g = _gaussian_deriv_table(t, y[..., ell], 0)[0]
        out = g if out is None else out * g
    return out


def eval_grad_v(ev: IterateEvaluator, t, x):
    """``grad_x v^n(t, x)`` for ``0 <= t < 1``; output has the shape of ``x``."""
    spec = ev.spec
    t, x = _prepare(spec, t, x)
    if np.any(t >= 1.0):
        raise ValueError("gradient evaluation needs t < 1")
    norm = 2.0 ** (spec.d / 2)
    out = np.zeros(x.shape)
    if ev.n == 0:
        return out
    if ev.n == INF:
        y = x + spec.b_array * (1.0 - t)[..., None]
        tables = [_gaussian_deriv_table(t, y[..., ell], 1) for ell in range(spec.d)]
        for j in range(spec.d):
            prod = norm * tables[j][1]
            for ell in range(spec.d):
                if ell != j:
                    prod = prod * tables[ell][0]
            out[..., j] = prod
        return out
    F, D = _factor_tables(spec, t, x, ev.n)
    for j in range(spec.d):
        out[..., j] = norm * compensated_sum(_series_terms(ev, t, F, grad_coord=j, D=D))
    return out


def v_origin_series(spec: LinearExampleSpec, n: int) -> float:
    """``v^n(0, 0) = sum_{i=0}^{floor((n-1)/2)} (-1)**i |b|**(2i) / (4**i i!)``;
    ``n = INF`` gives ``exp(-|b|**2 / 4)``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    q = spec.b_norm_sq / 4.0
    if n == INF:
        return math.exp(-q)
    return math.fsum((-q) ** i / math.factorial(i) for i in range((n - 1) // 2 + 1))


def origin_gap(spec: LinearExampleSpec, n: int) -> float:
    """Signed gap ``v^inf(0, 0) - v^n(0, 0)``.

    Summed as the tail ``sum_{i >= floor((n+1)/2)} (-q)**i / i!`` with
    ``q = |b|**2 / 4`` so that it keeps full relative accuracy for large n.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    q = spec.b_norm_sq / 4.0
    if q == 0.0:
        return 0.0
    j = (n + 1) // 2
    terms = []
    i = j
    while True:
        log_mag = i * math.log(q) - math.lgamma(i + 1)
        term = (-1.0) ** i * math.exp(log_mag)
        terms.append(term)
        if i > q and abs(term) < 1e-18 * abs(terms[0]):
            break
        i += 1
    return math.fsum(terms)


def pde_residual(spec: LinearExampleSpec, t: float, x, h: float = 1e-3) -> float:
    """Central-difference value of ``dv/dt + Laplace(v)/2 + <b, grad v>`` for
    ``v = v^inf``; should be ``O(h**2)``."""
    if not (0.0 < t - h and t + h < 1.0):
        raise ValueError("need 0 < t - h and t + h < 1")
    x = np.asarray(x, dtype=float)
    ev = IterateEvaluator(spec, INF)
    v = lambda s, y: eval_v(ev, s, y)
    dt = (v(t + h, x) - v(t - h, x)) / (2 * h)
    v0 = v(t, x)
    lap = 0.0
    drift = 0.0
    for j in range(spec.d):
        e = np.zeros(spec.d)
        e[j] = h
        vp, vm = v(t, x + e), v(t, x - e)
        lap += (vp - 2 * v0 + vm) / h**2
        drift += spec.b[j] * (vp - vm) / (2 * h)
    return float(dt + 0.5 * lap + drift)
