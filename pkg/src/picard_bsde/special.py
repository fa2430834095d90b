"""Combinatorics and probabilists' Hermite polynomials.

Everything here is pure and works on plain Python numbers or numpy arrays.
Factorial-type quantities are exact integers for small arguments and go
through ``lgamma`` beyond that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

# Python ints never overflow; this only decides where log-gamma takes over.
EXACT_FACTORIAL_MAX = 33


@dataclass(frozen=True)
class HermitePoly:
    """Probabilists' Hermite polynomial ``H_k`` in monomial form.

    ``coefficients[p]`` is the (integer) coefficient of ``x**p``.
    """

    degree: int
    coefficients: tuple[int, ...]

    @classmethod
    def of_degree(cls, k: int) -> "HermitePoly":
        if k < 0:
            raise ValueError(f"degree must be non-negative, got {k}")
        coeffs = [0] * (k + 1)
        for ell in range(k // 2 + 1):
            num = math.factorial(k) * (-1) ** ell
            den = math.factorial(ell) * math.factorial(k - 2 * ell) * 2**ell
            coeffs[k - 2 * ell] = num // den
        return cls(k, tuple(coeffs))

    def __call__(self, x):
        """Evaluate the explicit monomial sum (cancels badly for large k)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p, c in enumerate(self.coefficients):
            if c:
                out = out + c * x**p
        return out


def hermite_table(k_max: int, x) -> np.ndarray:
    """All of ``H_0(x), ..., H_{k_max}(x)`` stacked along a new leading axis.

    Uses ``H_{k+1}(x) = x H_k(x) - k H_{k-1}(x)``.
    """
    if k_max < 0:
        raise ValueError(f"k_max must be non-negative, got {k_max}")
    x = np.asarray(x, dtype=float)
    table = np.empty((k_max + 1,) + x.shape)
    table[0] = 1.0
    if k_max >= 1:
        table[1] = x
    for k in range(1, k_max):
        table[k + 1] = x * table[k] - k * table[k - 1]
    return table


def hermite_eval(k: int, x):
    """Evaluate ``H_k(x)`` by the three-term recurrence.

    Raises
    ------
    OverflowError
        If the result is not finite although ``x`` is.
    """
    if k < 0:
        raise ValueError(f"degree must be non-negative, got {k}")
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x_arr)):
        raise ValueError("x must be finite")
    with np.errstate(over="ignore", invalid="ignore"):
        val = hermite_table(k, x_arr)[k]
    if not np.all(np.isfinite(val)):
        raise OverflowError(f"H_{k}(x) overflows float64")
    return float(val) if np.ndim(val) == 0 else val


def log_factorial(n: int) -> float:
    if n < 0:
        raise ValueError(f"factorial of negative number {n}")
    if n <= EXACT_FACTORIAL_MAX:
        return math.log(math.factorial(n))
    return math.lgamma(n + 1)


def gaussian_hermite_expectation(k: int) -> float:
    """``E[sqrt(2) exp(-W**2/2) H_k(W)]`` for a standard normal ``W``.

    Zero for odd ``k``; for even ``k`` the closed form
    ``k! (-1)**(k/2) / (4**(k/2) (k/2)!)`` assembled from its logarithm.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k % 2:
        return 0.0
    half = k // 2
    sign = -1.0 if half % 2 else 1.0
    return sign * math.exp(log_factorial(k) - k * math.log(2.0) - log_factorial(half))


def double_factorial(n: int) -> int:
    """``n!! = n (n-2) (n-4) ...`` with ``(-1)!! = 0!! = 1``."""
    if n < -1:
        raise ValueError(f"double factorial needs n >= -1, got {n}")
    out = 1
    for m in range(n, 0, -2):
        out *= m
    return out


def multi_index_count(d: int, k: int) -> int:
    return math.comb(k + d - 1, d - 1)


def multi_indices(d: int, k: int) -> Iterator[tuple[int, ...]]:
    """Yield every ``alpha`` in ``N_0**d`` with ``sum(alpha) == k`` in
    lexicographic order."""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    if k < 0:
        raise ValueError(f"order must be non-negative, got {k}")
    if d == 1:
        yield (k,)
        return
    for first in range(k + 1):
        for rest in multi_indices(d - 1, k - first):
            yield (first,) + rest


def log_multinomial(k: int, alpha: Sequence[int]) -> float:
    """``log(k! / (alpha_1! ... alpha_d!))``."""
    if any(a < 0 for a in alpha) or sum(alpha) != k:
        raise ValueError(f"multi-index {tuple(alpha)} does not have order {k}")
    if k <= EXACT_FACTORIAL_MAX:
        den = 1
        for a in alpha:
            den *= math.factorial(a)
        return math.log(math.factorial(k) // den)
    return math.lgamma(k + 1) - sum(math.lgamma(a + 1) for a in alpha)


def compensated_sum(terms, axis: int = 0):
    """Sum ``terms`` along ``axis`` in descending magnitude order with
    Neumaier compensation.

    Works elementwise over the remaining axes, which is what the alternating
    series of the linear example need when evaluated at many points at once.
    """
    terms = np.moveaxis(np.asarray(terms, dtype=float), axis, 0)
    if terms.shape[0] == 0:
        return np.zeros(terms.shape[1:])
    order = np.argsort(-np.abs(terms), axis=0, kind="stable")
    terms = np.take_along_axis(terms, order, axis=0)
    s = terms[0].copy()
    c = np.zeros_like(s)
    for term in terms[1:]:
        t = s + term
        big = np.abs(s) >= np.abs(term)
        c += np.where(big, (s - t) + term, (term - t) + s)
        s = t
    return s + c
