"""
bclim.lincore.marginal

The marginalised likelihood term of one climate dimension,

    log N(0; μ, D⁻¹) - log N(0; V D μ, V),    V = (D + W)⁻¹,

where D holds the selected component precisions and W = Σ_i v_i⁻¹ z_i z_iᵀ
is the random-walk precision with z_i = e_{i+1} - e_i. Single-increment
changes of v are rank-one changes of D + W, which is what `MarginalCache`
exploits.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from bclim.lincore.tridiag import TriDiagPrecision


def _positive_vector(name, x, length=None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or (length is not None and len(x) != length):
        raise ValueError(f"{name} should be a vector of length {length}, got shape {x.shape}")
    if not np.all(np.isfinite(x) & (x > 0)):
        raise ValueError(f"{name} should be positive and finite")
    return x


def assemble(D_diag: np.ndarray, v: np.ndarray) -> TriDiagPrecision:
    """D + W as a tridiagonal precision."""
    D_diag = _positive_vector("precisions", D_diag)
    v = _positive_vector("volatilities", v, len(D_diag) - 1)
    inv = 1.0 / v
    diag = D_diag.copy()
    diag[:-1] += inv
    diag[1:] += inv
    return TriDiagPrecision(diag, -inv)


def marginal_logterm(mu: np.ndarray, D_diag: np.ndarray, v: np.ndarray) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    D_diag = np.asarray(D_diag, dtype=np.float64)
    P = assemble(D_diag, v)
    return _logterm(mu, D_diag, P, P.solve(D_diag * mu))


def _logterm(mu, D_diag, P, x) -> float:
    b = D_diag * mu
    return 0.5 * (float(np.sum(np.log(D_diag))) - P.logdet()) - 0.5 * float(mu @ b) + 0.5 * float(
        b @ x
    )


@dataclass(frozen=True)
class Proposal:
    """A scored single-increment change, ready to be committed."""

    i: int
    v_new: float
    delta: float
    log_ratio: float
    Vz: np.ndarray
    zx: float
    denom: float


@dataclass(frozen=True)
class LayerProposal:
    """A scored change of one layer's component, ready to be committed."""

    i: int
    mu_i: float
    tau_i: float
    d: float
    jump: float
    log_ratio: float
    y: np.ndarray
    through: float
    denom: float


def woodbury_log_ratio(cache: "MarginalCache", i: int, v_old: float, v_new: float) -> float | None:
    """log N(0; VDμ, V) - log N(0; V*Dμ, V*) for v_i: v_old -> v_new, from the
    cached x = V D μ and one solve for V z_i. None when the updated
    precision would not be positive definite."""
    if v_old != cache.v[i]:
        raise ValueError(f"increment {i} holds {cache.v[i]!r}, not {v_old!r}")
    proposal = cache.propose(i, v_new)
    return None if proposal is None else proposal.log_ratio


class MarginalCache:
    """The state of one climate dimension: (μ, D, v), the precision D + W and
    x = (D + W)⁻¹ D μ, kept current through rank-one commits.

    Single writer. The solve is refreshed from scratch every `refresh_every`
    commits (default n) to bound the drift of the incremental updates.
    """

    def __init__(self, mu, D_diag, v, refresh_every: int | None = None):
        self.D = _positive_vector("precisions", D_diag)
        self.mu = np.array(mu, dtype=np.float64)
        self.v = _positive_vector("volatilities", v, len(self.D) - 1).copy()
        self.refresh_every = refresh_every or len(self.D)
        self.commits = 0
        self.refresh()

    @property
    def n(self) -> int:
        return len(self.D)

    def refresh(self):
        self.P = assemble(self.D, self.v)
        self.x = self.P.solve(self.D * self.mu)

    def logterm(self) -> float:
        return _logterm(self.mu, self.D, self.P, self.x)

    def set_v(self, v):
        self.v = _positive_vector("volatilities", v, self.n - 1).copy()
        self.refresh()

    def trial_logterm(self, mu, D_diag) -> float:
        """The marginal term with the current v and another layer selection."""
        return marginal_logterm(mu, D_diag, self.v)

    def propose(self, i: int, v_new: float) -> Proposal | None:
        if not 0 <= i < self.n - 1:
            raise IndexError(f"increment {i} out of range for n={self.n}")
        delta = 1.0 / v_new - 1.0 / self.v[i]
        if delta == 0:
            return Proposal(i, v_new, 0.0, 0.0, np.zeros(self.n), 0.0, 1.0)
        z = np.zeros(self.n)
        z[i], z[i + 1] = -1.0, 1.0
        Vz = self.P.solve(z)
        s = Vz[i + 1] - Vz[i]
        denom = 1.0 + delta * s
        if not denom > 0:
            return None
        zx = self.x[i + 1] - self.x[i]
        log_ratio = -0.5 * math.log(denom) - zx * zx / (2.0 * (1.0 / delta + s))
        return Proposal(i, float(v_new), delta, log_ratio, Vz, zx, denom)

    def commit(self, proposal: Proposal):
        i = proposal.i
        self.v[i] = proposal.v_new
        if proposal.delta == 0:
            return
        self.P.add_pair(i, proposal.delta)
        if not self._refreshed():
            self.x -= (proposal.delta * proposal.zx / proposal.denom) * proposal.Vz

    def _refreshed(self) -> bool:
        self.commits += 1
        if self.commits % self.refresh_every == 0:
            self.refresh()
            return True
        return False

    def propose_layer(self, i: int, mu_i: float, tau_i: float) -> "LayerProposal":
        """Score replacing (μ_i, τ_i): a rank-one change of both the
        precision and b = D μ, at entry i."""
        if not tau_i > 0:
            raise ValueError(f"precision should be positive, got {tau_i!r}")
        d = tau_i - self.D[i]
        jump = tau_i * mu_i - self.D[i] * self.mu[i]
        e = np.zeros(self.n)
        e[i] = 1.0
        y = self.P.solve(e)
        denom = 1.0 + d * y[i]
        xi = self.x[i]
        b = self.D * self.mu
        quad_old = float(b @ self.x)
        through = xi + jump * y[i]
        quad_new = quad_old + 2.0 * jump * xi + jump * jump * y[i] - d * through * through / denom
        log_ratio = (
            0.5 * (math.log(tau_i) - math.log(self.D[i]) - math.log(denom))
            - 0.5 * (tau_i * mu_i * mu_i - self.D[i] * self.mu[i] ** 2)
            + 0.5 * (quad_new - quad_old)
        )
        return LayerProposal(i, float(mu_i), float(tau_i), d, jump, log_ratio, y, through, denom)

    def commit_layer(self, proposal: "LayerProposal"):
        i = proposal.i
        self.mu[i] = proposal.mu_i
        self.D[i] = proposal.tau_i
        self.P.add_diagonal(i, proposal.d)
        if not self._refreshed():
            self.x += (proposal.jump - proposal.d * proposal.through / proposal.denom) * proposal.y


def dense_oracle(mu, D_diag, v) -> tuple[np.ndarray, float, float]:
    """(V, log det (D + W), marginal term) by dense linear algebra."""
    mu = np.asarray(mu, dtype=np.float64)
    D_diag = np.asarray(D_diag, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = len(mu)
    if n > 200:
        raise ValueError(f"dense oracle is limited to n <= 200, got {n}")
    B = np.zeros((n - 1, n))
    B[np.arange(n - 1), np.arange(n - 1)] = -1.0
    B[np.arange(n - 1), np.arange(1, n)] = 1.0
    P = np.diag(D_diag) + B.T @ np.diag(1.0 / v) @ B
    V = np.linalg.inv(P)
    V = 0.5 * (V + V.T)
    _, logdet = np.linalg.slogdet(P)
    zero = np.zeros(n)
    term = stats.multivariate_normal.logpdf(
        zero, mean=mu, cov=np.diag(1.0 / D_diag)
    ) - stats.multivariate_normal.logpdf(zero, mean=V @ (D_diag * mu), cov=V)
    return V, float(logdet), float(term)
