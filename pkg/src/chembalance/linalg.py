"""Dense LU factorization with partial pivoting, and the matching solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


class SingularMatrixError(ArithmeticError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"matrix is singular: zero pivot in column {column}")


@njit(cache=True, nogil=True)
def lu_factor_inplace(a, piv):
    """Doolittle elimination with row pivoting, overwriting ``a`` with L\\U.

    ``piv[k]`` is the row swapped with row k at step k.  Returns -1 on
    success, otherwise the column with an exactly zero pivot.
    """
    n = a.shape[0]
    for k in range(n):
        p = k
        big = abs(a[k, k])
        for i in range(k + 1, n):
            v = abs(a[i, k])
            if v > big:
                big = v
                p = i
        piv[k] = p
        if big == 0.0:
            return k
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
        inv = 1.0 / a[k, k]
        for i in range(k + 1, n):
            a[i, k] *= inv
            lik = a[i, k]
            if lik != 0.0:
                for j in range(k + 1, n):
                    a[i, j] -= lik * a[k, j]
    return -1


@njit(cache=True, nogil=True)
def lu_solve_inplace(lu, piv, b):
    """Overwrite ``b`` with the solution of A x = b given ``lu_factor_inplace`` output."""
    n = lu.shape[0]
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
    for i in range(1, n):
        acc = b[i]
        for j in range(i):
            acc -= lu[i, j] * b[j]
        b[i] = acc
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc -= lu[i, j] * b[j]
        b[i] = acc / lu[i, i]


@dataclass(frozen=True)
class LuFactors:
    """Combined unit-lower L and upper U, plus the pivot sequence."""

    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    def lower(self) -> np.ndarray:
        return np.tril(self.lu, -1) + np.eye(self.n)

    def upper(self) -> np.ndarray:
        return np.triu(self.lu)

    def permutation(self) -> np.ndarray:
        """P such that P @ A = L @ U."""
        order = np.arange(self.n)
        for k, p in enumerate(self.piv):
            order[[k, p]] = order[[p, k]]
        return np.eye(self.n)[order]


def lu_factor(A) -> LuFactors:
    a = np.array(A, dtype=float, order="C")
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    piv = np.empty(a.shape[0], dtype=np.int64)
    col = lu_factor_inplace(a, piv)
    if col >= 0:
        raise SingularMatrixError(int(col))
    return LuFactors(a, piv)


def lu_solve(factors: LuFactors, b) -> np.ndarray:
    x = np.array(b, dtype=float)
    if x.shape != (factors.n,):
        raise ValueError(f"right-hand side has shape {x.shape}, expected ({factors.n},)")
    lu_solve_inplace(factors.lu, factors.piv, x)
    return x
