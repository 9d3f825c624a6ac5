"""
bclim.lincore.tridiag

Symmetric positive definite tridiagonal precisions, factored as P = L D Lᵀ
with L unit lower bidiagonal. Factorisation, solves, log-determinants and
Gaussian noise with covariance P⁻¹ are O(n) numba kernels.
"""

import math

import numpy as np
from numba import njit


class NotPositiveDefinite(ValueError):
    """A non-positive pivot showed up while factoring a precision."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"precision is not positive definite: pivot {pivot} is {value!r}")
        self.pivot = pivot
        self.value = value


@njit(cache=True)
def _ldl(diag, off, piv, low):
    """Fill pivots and subdiagonal multipliers; returns the index of the first
    non-positive pivot, or -1."""
    n = diag.shape[0]
    piv[0] = diag[0]
    if not piv[0] > 0:
        return 0
    for i in range(n - 1):
        low[i] = off[i] / piv[i]
        piv[i + 1] = diag[i + 1] - low[i] * off[i]
        if not piv[i + 1] > 0:
            return i + 1
    return -1


@njit(cache=True)
def _ldl_solve(piv, low, rhs):
    n = piv.shape[0]
    x = np.empty(n)
    x[0] = rhs[0]
    for i in range(1, n):
        x[i] = rhs[i] - low[i - 1] * x[i - 1]
    for i in range(n):
        x[i] /= piv[i]
    for i in range(n - 2, -1, -1):
        x[i] -= low[i] * x[i + 1]
    return x


@njit(cache=True)
def _ldl_noise(piv, low, eps):
    # Lᵀ w = D^{-1/2} eps, so that Cov(w) = L^{-T} D^{-1} L^{-1} = P^{-1}
    n = piv.shape[0]
    w = np.empty(n)
    w[n - 1] = eps[n - 1] / math.sqrt(piv[n - 1])
    for i in range(n - 2, -1, -1):
        w[i] = eps[i] / math.sqrt(piv[i]) - low[i] * w[i + 1]
    return w


@njit(cache=True)
def _matvec(diag, off, x):
    n = diag.shape[0]
    y = diag * x
    for i in range(n - 1):
        y[i] += off[i] * x[i + 1]
        y[i + 1] += off[i] * x[i]
    return y


class TriDiagPrecision:
    """A symmetric tridiagonal matrix given by its diagonal and its
    off-diagonal. The LDL factor is computed on first use and dropped
    whenever an entry changes."""

    def __init__(self, diag: np.ndarray, off: np.ndarray):
        self.diag = np.ascontiguousarray(diag, dtype=np.float64).copy()
        self.off = np.ascontiguousarray(off, dtype=np.float64).copy()
        if self.diag.ndim != 1 or len(self.diag) == 0:
            raise ValueError(f"diagonal should be a non-empty vector, got shape {self.diag.shape}")
        if self.off.shape != (len(self.diag) - 1,):
            raise ValueError(
                f"off-diagonal should have length {len(self.diag) - 1}, got {self.off.shape}"
            )
        self._factor = None

    @property
    def n(self) -> int:
        return len(self.diag)

    @property
    def factor(self) -> tuple[np.ndarray, np.ndarray]:
        """(pivots, multipliers) of P = L D Lᵀ"""
        if self._factor is None:
            piv = np.empty(self.n)
            low = np.empty(max(self.n - 1, 0))
            bad = _ldl(self.diag, self.off, piv, low)
            if bad >= 0:
                raise NotPositiveDefinite(int(bad), float(piv[bad]))
            self._factor = (piv, low)
        return self._factor

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.ascontiguousarray(rhs, dtype=np.float64)
        if rhs.shape != (self.n,):
            raise ValueError(f"expected a {self.n}-vector, got shape {rhs.shape}")
        return _ldl_solve(*self.factor, rhs)

    def logdet(self) -> float:
        return float(np.sum(np.log(self.factor[0])))

    def noise(self, rng: np.random.Generator) -> np.ndarray:
        """A draw from N(0, P⁻¹)."""
        return _ldl_noise(*self.factor, rng.standard_normal(self.n))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return _matvec(self.diag, self.off, np.ascontiguousarray(x, dtype=np.float64))

    def add_diagonal(self, i: int, delta: float):
        self.diag[i] += delta
        self._factor = None

    def add_pair(self, i: int, delta: float):
        """P += delta (e_{i+1} - e_i)(e_{i+1} - e_i)ᵀ"""
        self.diag[i] += delta
        self.diag[i + 1] += delta
        self.off[i] -= delta
        self._factor = None

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def __repr__(self):
        return f"TriDiagPrecision(n={self.n})"
