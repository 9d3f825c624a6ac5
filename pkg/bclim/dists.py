"""
bclim.dists

Samplers and log-densities for the laws the volatility model is built
from: the Inverse Gaussian in its mean/concentration form (IG2), the
Generalised Inverse Gaussian, the Normal-Inverse-Gaussian, the Gamma, the
multivariate Normal and the zero-inflated Poisson.

All samplers take a caller-owned `numpy.random.Generator` and are pure
functions of (generator state, parameters). The rejection samplers are
numba kernels; numba accepts the Generator directly, so the stream is the
caller's stream.

IG2(eta, phi) is the Inverse Gaussian with mean eta and shape phi * eta,
so that its variance is eta**2 / phi and, over a horizon delta, the
parameters scale as (eta * delta, phi * delta).
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import linalg, special, stats

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Invalid distribution parameters, or an argument outside the support."""


def _positive(name: str, value: float):
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} should be positive and finite, but was {value!r}")


def _outside(strict: bool, msg: str) -> float:
    if strict:
        raise DomainError(msg)
    return -math.inf


@dataclass(frozen=True)
class IG2Params:
    """Inverse Gaussian with mean `eta` and variance `eta**2 / phi`."""

    eta: float
    phi: float

    def __post_init__(self):
        _positive("eta", self.eta)
        _positive("phi", self.phi)

    @property
    def mean(self) -> float:
        return self.eta

    @property
    def shape(self) -> float:
        return self.phi * self.eta

    def over(self, delta: float) -> "IG2Params":
        """The law of the increment over a horizon of length delta."""
        return IG2Params(self.eta * delta, self.phi * delta)


@dataclass(frozen=True)
class GIGParams:
    """density ∝ x^(lam - 1) exp(-(chi / x + psi * x) / 2)"""

    lam: float
    chi: float
    psi: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.lam, self.chi, self.psi))):
            raise DomainError(f"GIG parameters should be finite: {self}")
        if self.chi < 0 or self.psi < 0:
            raise DomainError(f"GIG weights should be non-negative: {self}")
        if self.lam >= 0 and self.psi <= 0:
            raise DomainError(f"GIG with lam >= 0 needs psi > 0: {self}")
        if self.lam <= 0 and self.chi <= 0:
            raise DomainError(f"GIG with lam <= 0 needs chi > 0: {self}")


@dataclass(frozen=True)
class NIGParams:
    """The law of mu + beta * v + sqrt(v) * z with v ~ IG2(eta, phi)."""

    mu: float
    beta: float
    eta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.beta)):
            raise DomainError(f"NIG location and skew should be finite: {self}")
        _positive("eta", self.eta)
        _positive("phi", self.phi)

    @property
    def ig2(self) -> IG2Params:
        return IG2Params(self.eta, self.phi)

    def over(self, delta: float) -> "NIGParams":
        return NIGParams(self.mu * delta, self.beta, self.eta * delta, self.phi * delta)


@dataclass(frozen=True)
class ZIPParams:
    p_zero: float
    rate: float

    def __post_init__(self):
        if not 0 <= self.p_zero <= 1:
            raise DomainError(f"p_zero should be a probability, but was {self.p_zero}")
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise DomainError(f"rate should be non-negative, but was {self.rate}")


###############################################################################
# Inverse Gaussian


def ig_logpdf(v: float, mean: float, shape: float, strict: bool = True) -> float:
    """Log density of the Inverse Gaussian with the given mean and shape."""
    if not (v > 0 and math.isfinite(v)):
        return _outside(strict, f"IG density needs v > 0, but got {v!r}")
    return 0.5 * (math.log(shape) - LOG_2PI - 3.0 * math.log(v)) - shape * (
        v - mean
    ) ** 2 / (2.0 * mean * mean * v)


def ig2_logpdf(v: float, params: IG2Params, strict: bool = True) -> float:
    return ig_logpdf(v, params.mean, params.shape, strict)


@njit(cache=True)
def _ig_draw(rng, mean, shape):
    # transformation with multiple roots; the smaller root is written in
    # its cancellation-free form
    nu = rng.standard_normal()
    w = mean * nu * nu / shape
    x = mean / (1.0 + 0.5 * w + math.sqrt(w + 0.25 * w * w))
    if rng.random() <= mean / (mean + x):
        return x
    return mean * mean / x


def ig_sample(rng: np.random.Generator, mean: float, shape: float) -> float:
    _positive("mean", mean)
    _positive("shape", shape)
    return _ig_draw(rng, float(mean), float(shape))


def ig2_sample(rng: np.random.Generator, params: IG2Params) -> float:
    return _ig_draw(rng, float(params.mean), float(params.shape))


###############################################################################
# Generalised Inverse Gaussian


def gig_logpdf(x: float, params: GIGParams, strict: bool = True) -> float:
    if not (x > 0 and math.isfinite(x)):
        return _outside(strict, f"GIG density needs x > 0, but got {x!r}")
    lam, chi, psi = params.lam, params.chi, params.psi
    if chi == 0:
        return gamma_logpdf(x, lam, psi / 2.0)
    if psi == 0:
        a, scale = -lam, chi / 2.0
        return a * math.log(scale) - special.gammaln(a) - (a + 1) * math.log(x) - scale / x
    omega = math.sqrt(chi * psi)
    log_bessel = math.log(special.kve(lam, omega)) - omega
    return (
        0.5 * lam * math.log(psi / chi)
        - math.log(2.0)
        - log_bessel
        + (lam - 1.0) * math.log(x)
        - 0.5 * (chi / x + psi * x)
    )


def gig_mean(params: GIGParams) -> float:
    """√(chi/psi) K_{lam+1}(ω) / K_lam(ω), ω = √(chi psi)"""
    omega = math.sqrt(params.chi * params.psi)
    return math.sqrt(params.chi / params.psi) * (
        special.kve(params.lam + 1, omega) / special.kve(params.lam, omega)
    )


@njit(cache=True)
def _gig_cubic(y, m, beta, lam):
    return (
        0.5 * beta * y * y * y
        - y * y * (0.5 * beta * m + lam + 1.0)
        + y * ((lam - 1.0) * m - 0.5 * beta)
        + 0.5 * beta * m
    )


@njit(cache=True)
def _gig_bisect(lo, hi, m, beta, lam):
    flo = _gig_cubic(lo, m, beta, lam)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = _gig_cubic(mid, m, beta, lam)
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo <= 1e-15 * (1.0 + hi):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _gig_standard(rng, lam, beta):
    """Ratio-of-uniforms with mode shift for y^(lam-1) exp(-beta (y + 1/y) / 2)."""
    lm1 = lam - 1.0
    root = math.sqrt(lm1 * lm1 + beta * beta)
    if lm1 >= 0:
        m = (lm1 + root) / beta
    else:
        m = beta / (root - lm1)

    upper = 2.0 * m
    while _gig_cubic(upper, m, beta, lam) <= 0:
        upper *= 2.0
    y_minus = _gig_bisect(0.0, m, m, beta, lam)
    y_plus = _gig_bisect(m, upper, m, beta, lam)

    m_sum = m + 1.0 / m
    a = (y_plus - m) * math.exp(
        0.5 * lm1 * math.log(y_plus / m) - 0.25 * beta * (y_plus + 1.0 / y_plus - m_sum)
    )
    b = (y_minus - m) * math.exp(
        0.5 * lm1 * math.log(y_minus / m)
        - 0.25 * beta * (y_minus + 1.0 / y_minus - m_sum)
    )

    while True:
        r1 = rng.random()
        r2 = rng.random()
        if r1 == 0.0:
            continue
        y = m + (a * r2 + b * (1.0 - r2)) / r1
        if y <= 0.0:
            continue
        bound = 0.5 * lm1 * math.log(y / m) - 0.25 * beta * (y + 1.0 / y - m_sum)
        if math.log(r1) <= bound:
            return y


@njit(cache=True)
def _gig_draw(rng, lam, chi, psi):
    # chi > 0 and psi > 0
    if lam == -0.5:
        return _ig_draw(rng, math.sqrt(chi / psi), chi)
    beta = math.sqrt(chi * psi)
    scale = math.sqrt(chi / psi)
    if lam < 0:
        return scale / _gig_standard(rng, -lam, beta)
    return scale * _gig_standard(rng, lam, beta)


@njit(cache=True)
def _gig_draw_many(rng, lam, chi, psi):
    out = np.empty(chi.shape[0])
    for i in range(chi.shape[0]):
        out[i] = _gig_draw(rng, lam, chi[i], psi[i])
    return out


def gig_sample(rng: np.random.Generator, params: GIGParams) -> float:
    lam, chi, psi = params.lam, params.chi, params.psi
    if chi == 0:
        return float(rng.gamma(lam, 2.0 / psi))
    if psi == 0:
        return float(1.0 / rng.gamma(-lam, 2.0 / chi))
    return _gig_draw(rng, float(lam), float(chi), float(psi))


def gig_sample_many(
    rng: np.random.Generator, lam: float, chi: np.ndarray, psi: np.ndarray
) -> np.ndarray:
    """Independent draws GIG(lam, chi[i], psi[i]), all weights positive."""
    chi = np.ascontiguousarray(chi, dtype=np.float64)
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    if chi.shape != psi.shape:
        raise DomainError(f"chi and psi should align: {chi.shape} vs {psi.shape}")
    if not (np.all(chi > 0) and np.all(psi > 0)):
        raise DomainError("gig_sample_many needs strictly positive chi and psi")
    return _gig_draw_many(rng, float(lam), chi, psi)


###############################################################################
# Normal-Inverse-Gaussian


def nig_logpdf(x: float, params: NIGParams) -> float:
    delta = math.sqrt(params.phi * params.eta)
    gamma = math.sqrt(params.phi / params.eta)
    alpha = math.hypot(gamma, params.beta)
    dx = x - params.mu
    r = math.hypot(delta, dx)
    z = alpha * r
    return (
        math.log(alpha * delta / math.pi)
        + delta * gamma
        + params.beta * dx
        + math.log(special.kve(1, z))
        - z
        - math.log(r)
    )


def nig_sample(rng: np.random.Generator, params: NIGParams) -> float:
    v = ig2_sample(rng, params.ig2)
    return params.mu + params.beta * v + math.sqrt(v) * rng.standard_normal()


###############################################################################
# Gamma and multivariate Normal


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    return float(stats.gamma.logpdf(x, shape, scale=1.0 / rate))


def gamma_sample(rng: np.random.Generator, shape: float, rate: float) -> float:
    _positive("shape", shape)
    _positive("rate", rate)
    return float(rng.gamma(shape, 1.0 / rate))


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> float:
    """Log density of N(mean, precision^-1)."""
    chol = linalg.cholesky(precision, lower=True)
    r = chol.T @ (np.asarray(x) - mean)
    return float(
        -0.5 * len(mean) * LOG_2PI + np.sum(np.log(np.diag(chol))) - 0.5 * r @ r
    )


def mvn_sample(
    rng: np.random.Generator, mean: np.ndarray, precision: np.ndarray
) -> np.ndarray:
    chol = linalg.cholesky(precision, lower=True)
    z = rng.standard_normal(len(mean))
    return mean + linalg.solve_triangular(chol.T, z, lower=False)


###############################################################################
# Zero-inflated Poisson


def zip_logpmf_rates(y, p_zero: float, rates):
    """Log pmf of counts `y` under ZIP(p_zero, rate), broadcast over both."""
    y = np.asarray(y)
    rates = np.asarray(rates, dtype=np.float64)
    with np.errstate(divide="ignore"):
        zero = np.log(p_zero + (1.0 - p_zero) * np.exp(-rates))
        positive = np.log1p(-p_zero) + stats.poisson.logpmf(y, rates)
    out = np.where(y == 0, zero, positive)
    return np.where((y < 0) | (y != np.floor(y)), -np.inf, out)


def zip_logpmf(y, params: ZIPParams):
    """Log pmf; `y` may be a scalar or an array of counts."""
    out = zip_logpmf_rates(y, params.p_zero, params.rate)
    return float(out) if out.ndim == 0 else out


def zip_sample(rng: np.random.Generator, params: ZIPParams, size=None):
    inflated = rng.random(size) < params.p_zero
    counts = rng.poisson(params.rate, size)
    if size is None:
        return 0 if inflated else int(counts)
    return np.where(inflated, 0, counts)
