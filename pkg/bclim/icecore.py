"""
bclim.icecore

Gibbs sampling for a directly observed, precisely dated series whose
increments follow an NIG process,

    o_i - o_{i-1} ~ N(μΔ_i + βv_i, v_i),    v_i ~ IG2(ηΔ_i, φΔ_i),

with Gamma priors on η and φ and Normal priors on μ and β. The η and φ
conditionals depend on the data only through v and Δ; the volatility
sampler in `bclim.engine` uses them as they are.
"""

import math
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np
import pandas as pd

from bclim import dists
from bclim.logger import log
from bclim.model import RunConfig, SeriesData
from bclim.posterior import GridSpec, cell_volatility


@dataclass(frozen=True)
class IceHyper:
    a_eta: float = 0.01
    b_eta: float = 0.01
    a_phi: float = 0.01
    b_phi: float = 0.01
    tau_mu: float = 0.01
    tau_beta: float = 0.01

    def __post_init__(self):
        for name in ("a_eta", "b_eta", "a_phi", "b_phi", "tau_mu", "tau_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} should be positive, got {getattr(self, name)!r}")

    @staticmethod
    def from_config(config: RunConfig) -> "IceHyper":
        return IceHyper(
            config.a_eta, config.b_eta, config.a_phi, config.b_phi, config.tau_mu, config.tau_beta
        )


@dataclass(frozen=True, eq=False)
class IceState:
    mu: float
    beta: float
    eta: float
    phi: float
    v: np.ndarray

    def __post_init__(self):
        if not (self.eta > 0 and self.phi > 0):
            raise ValueError(f"eta and phi should be positive: {self.eta!r}, {self.phi!r}")
        if not np.all(self.v > 0):
            raise ValueError("volatilities should be positive")

    @staticmethod
    def initial(data: SeriesData, eta: float = 1.0, phi: float = 1.0) -> "IceState":
        """Zero drift and skew, v at its prior mean."""
        return IceState(0.0, 0.0, eta, phi, eta * data.delta)


@dataclass(frozen=True)
class MCMCSettings:
    iters: int
    burnin: int
    thin: int = 1

    def __post_init__(self):
        if self.iters < 0 or self.burnin < 0 or self.thin < 1:
            raise ValueError(f"invalid run length {self}")
        if self.iters and self.iters <= self.burnin:
            raise ValueError(f"iters ({self.iters}) should exceed burnin ({self.burnin})")

    def keep(self, it: int) -> bool:
        return it >= self.burnin and (it - self.burnin + 1) % self.thin == 0

    @property
    def retained(self) -> int:
        return max(self.iters - self.burnin, 0) // self.thin

    def retained_iterations(self) -> list[int]:
        return [it for it in range(self.burnin, self.iters) if self.keep(it)]


###############################################################################
# complete conditionals


def sample_eta(
    rng: np.random.Generator, v: np.ndarray, delta: np.ndarray, phi: float, a: float, b: float
) -> float:
    """η | v, φ ~ GIG(N/2 + a, φ Σv, φ ΣΔ²/v + 2b)"""
    u1 = float(np.sum(v))
    u3 = float(np.sum(delta * delta / v))
    return dists.gig_sample(rng, dists.GIGParams(0.5 * len(v) + a, phi * u1, phi * u3 + 2.0 * b))


def phi_rate(v: np.ndarray, delta: np.ndarray, eta: float, b: float) -> float:
    u1 = float(np.sum(v))
    u2 = float(np.sum(delta)) - b
    u3 = float(np.sum(delta * delta / v))
    return u1 / (2.0 * eta) - u2 + u3 * eta / 2.0


def sample_phi(
    rng: np.random.Generator, v: np.ndarray, delta: np.ndarray, eta: float, a: float, b: float
) -> float:
    """φ | v, η ~ Ga(N/2 + a, Σv/(2η) - ΣΔ + b + η ΣΔ²/(2v))"""
    rate = phi_rate(v, delta, eta, b)
    # Σv/(2η) + ηΣΔ²/(2v) >= ΣΔ termwise, so the rate is at least b
    assert rate > 0, f"phi rate {rate!r} <= 0 (eta={eta!r}, sum v={np.sum(v)!r})"
    return dists.gamma_sample(rng, 0.5 * len(v) + a, rate)


def volatility_weights(
    x: np.ndarray,
    delta: np.ndarray,
    mu: float,
    beta: float,
    eta: float,
    phi: float,
    psi_form: Literal["derived", "printed"] = "derived",
) -> tuple[np.ndarray, np.ndarray]:
    """(χ_i, ψ_i) of v_i | · ~ GIG(-1, χ_i, ψ_i)."""
    chi = (x - mu * delta) ** 2 + phi * eta * delta * delta
    match psi_form:
        case "derived":
            psi = np.full_like(chi, beta * beta + phi / eta)
        case "printed":
            psi = (beta * delta) ** 2 + phi / eta
        case _:
            raise ValueError(f"psi_form should be 'derived' or 'printed', got {psi_form!r}")
    return chi, psi


def sample_drift(
    rng: np.random.Generator,
    x: np.ndarray,
    delta: np.ndarray,
    v: np.ndarray,
    tau_mu: float,
    tau_beta: float,
) -> tuple[float, float]:
    """(μ, β) | v ~ N(Q⁻¹r, Q⁻¹)"""
    Q = np.array(
        [
            [np.sum(delta * delta / v) + tau_mu, np.sum(delta)],
            [np.sum(delta), np.sum(v) + tau_beta],
        ]
    )
    r = np.array([np.sum(delta * x / v), np.sum(x)])
    mu, beta = dists.mvn_sample(rng, np.linalg.solve(Q, r), Q)
    return float(mu), float(beta)


def gibbs_step(
    state: IceState,
    data: SeriesData,
    hyper: IceHyper,
    rng: np.random.Generator,
    psi_form: Literal["derived", "printed"] = "derived",
) -> IceState:
    """One sweep, updating η, φ, v and (μ, β) in that order."""
    x, delta = data.increments, data.delta

    eta = sample_eta(rng, state.v, delta, state.phi, hyper.a_eta, hyper.b_eta)
    phi = sample_phi(rng, state.v, delta, eta, hyper.a_phi, hyper.b_phi)
    chi, psi = volatility_weights(x, delta, state.mu, state.beta, eta, phi, psi_form)
    # χ_i > 0 since Δ_i > 0
    v = dists.gig_sample_many(rng, -1.0, chi, psi)
    mu, beta = sample_drift(rng, x, delta, v, hyper.tau_mu, hyper.tau_beta)

    return IceState(mu, beta, eta, phi, v)


def iterate_icecore(
    data: SeriesData,
    hyper: IceHyper,
    mcmc: MCMCSettings,
    rng: np.random.Generator,
    init: IceState | None = None,
    psi_form: Literal["derived", "printed"] = "derived",
) -> Iterator[tuple[int, IceState]]:
    state = init or IceState.initial(data)
    report = max(mcmc.iters // 10, 1)
    for it in range(mcmc.iters):
        state = gibbs_step(state, data, hyper, rng, psi_form)
        if (it + 1) % report == 0:
            log.debug(f"iteration {it + 1}/{mcmc.iters}: eta={state.eta:.4g} phi={state.phi:.4g}")
        if mcmc.keep(it):
            yield it, state


def run_icecore(
    data: SeriesData,
    hyper: IceHyper,
    mcmc: MCMCSettings,
    rng: np.random.Generator,
    init: IceState | None = None,
    psi_form: Literal["derived", "printed"] = "derived",
) -> list[IceState]:
    return [s for _, s in iterate_icecore(data, hyper, mcmc, rng, init, psi_form)]


###############################################################################
# simulation and summaries


def simulate_series(
    rng: np.random.Generator,
    times: np.ndarray,
    mu: float,
    beta: float,
    eta: float,
    phi: float,
    start: float = 0.0,
) -> SeriesData:
    """A path of the model observed at `times`, starting at `start`."""
    times = np.asarray(times, dtype=np.float64)
    x = np.empty(len(times) - 1)
    for i, d in enumerate(np.diff(times)):
        x[i] = dists.nig_sample(rng, dists.NIGParams(mu, beta, eta, phi).over(d))
    return SeriesData(times, start + np.r_[0.0, np.cumsum(x)])


def summarize(states: list[IceState]) -> pd.DataFrame:
    """Posterior mean, sd and 95% interval of (μ, β, η, φ)."""
    if not states:
        raise ValueError("no retained states to summarize")
    chains = pd.DataFrame(
        {name: [getattr(s, name) for s in states] for name in ("mu", "beta", "eta", "phi")}
    )
    return pd.DataFrame(
        {
            "param": chains.columns,
            "mean": chains.mean().to_numpy(),
            "sd": chains.std(ddof=1).to_numpy() if len(states) > 1 else math.nan,
            "lo95": chains.quantile(0.025).to_numpy(),
            "hi95": chains.quantile(0.975).to_numpy(),
        }
    )


def chain_frame(states: list[IceState], mcmc: MCMCSettings) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "iter": mcmc.retained_iterations()[: len(states)],
            **{name: [getattr(s, name) for s in states] for name in ("mu", "beta", "eta", "phi")},
        }
    )


def volatility_grid(
    states: list[IceState],
    data: SeriesData,
    grid: GridSpec,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Per-cell volatility √v of every retained state, IG-bridged onto the grid.

    Cells not fully inside the series span carry NaN.
    """
    points = grid.points()
    rows = []
    for it, state in enumerate(states):
        vol = cell_volatility(data.t, state.v, points, state.eta, state.phi, rng)
        rows.append(pd.DataFrame({"grid_ka": points, "iter": it, "vol": vol}))
    return pd.concat(rows, ignore_index=True)


def settings_from_config(config: RunConfig) -> MCMCSettings:
    return MCMCSettings(config.icecore_iters, config.icecore_burnin, config.icecore_thin)
