"""
bclim.engine

The volatility sampler. Climates are integrated out, so the chain moves
over (v, K, t) and optionally (η, φ):

  * every v_ij by a log-normal random walk, scored with the rank-one
    update of the marginal term of dimension j;
  * every k_i by an independence proposal from the layer's mixture weights;
  * the chronology by an unconditioned redraw of a row (cut feedback);
  * η_j and φ_j, when not fixed, by their Gibbs conditionals.

A sweep resamples the chronology, then updates every volatility, then
every indicator, then the hyperparameters. With `evolution="brownian"`
the volatilities are not sampled but held at η_j Δ_i, which makes the
climate prior a Brownian motion.
"""

import math
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

import bclim
from bclim import dists, icecore
from bclim.icecore import IceHyper, MCMCSettings
from bclim.lincore import MarginalCache
from bclim.logger import log
from bclim.mixtures import MixtureTable
from bclim.model import ChainRecord, ChronologySet, RunConfig

TARGET_ACCEPTANCE = 0.44


@dataclass(frozen=True, eq=False)
class EngineConfig:
    iters: int
    burnin: int
    thin: int
    eta: np.ndarray
    phi: np.ndarray
    fix_hyper: bool = True
    proposal_sd: float = 0.5
    seed: int = 0
    adapt: bool = True
    scan: Literal["fixed", "random"] = "fixed"
    evolution: Literal["nig", "brownian"] = "nig"
    hyper: IceHyper = field(default_factory=IceHyper)

    def __post_init__(self):
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=np.float64)))
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, dtype=np.float64)))
        if self.eta.shape != self.phi.shape:
            raise ValueError(f"eta and phi should align: {self.eta.shape} vs {self.phi.shape}")
        if not (np.all(self.eta > 0) and np.all(self.phi > 0)):
            raise ValueError("eta and phi should be positive")
        if not self.proposal_sd > 0:
            raise ValueError(f"proposal_sd should be positive, got {self.proposal_sd}")
        if self.scan not in ("fixed", "random"):
            raise ValueError(f"scan should be 'fixed' or 'random', got {self.scan!r}")
        if self.evolution not in ("nig", "brownian"):
            raise ValueError(f"evolution should be 'nig' or 'brownian', got {self.evolution!r}")
        if self.evolution == "brownian" and not self.fix_hyper:
            raise ValueError("brownian evolution holds v at eta * delta, so it needs fix_hyper")
        MCMCSettings(self.iters, self.burnin, self.thin)

    @property
    def mcmc(self) -> MCMCSettings:
        return MCMCSettings(self.iters, self.burnin, self.thin)

    @property
    def m(self) -> int:
        return len(self.eta)

    @staticmethod
    def from_run_config(config: RunConfig, m: int, **overrides) -> "EngineConfig":
        values = dict(
            iters=config.iters,
            burnin=config.burnin,
            thin=config.thin,
            eta=config.per_dimension(config.eta, m),
            phi=config.per_dimension(config.phi, m),
            fix_hyper=config.fix_hyper,
            proposal_sd=config.proposal_sd,
            seed=config.require_seed(),
            adapt=config.adapt,
            scan=config.scan,
            evolution=config.evolution,
            hyper=IceHyper.from_config(config),
        )
        values.update(overrides)
        return EngineConfig(**values)


@dataclass
class Acceptance:
    v_proposed: int = 0
    v_accepted: int = 0
    k_proposed: int = 0
    k_accepted: int = 0

    @property
    def v_rate(self) -> float:
        return self.v_accepted / self.v_proposed if self.v_proposed else math.nan

    @property
    def k_rate(self) -> float:
        return self.k_accepted / self.k_proposed if self.k_proposed else math.nan

    def __str__(self):
        return f"v acceptance {self.v_rate:.3f} ({self.v_proposed} proposals), k acceptance {self.k_rate:.3f} ({self.k_proposed} proposals)"


@dataclass(eq=False)
class EngineState:
    table: MixtureTable
    chronologies: ChronologySet
    chron_idx: int
    delta: np.ndarray  # (n - 1,)
    v: np.ndarray  # (n - 1, m)
    k: np.ndarray  # (n,), 0-based
    eta: np.ndarray
    phi: np.ndarray
    caches: list[MarginalCache]
    log_sd: np.ndarray  # (n - 1, m) proposal scales on the log of v
    acceptance: Acceptance = field(default_factory=Acceptance)

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def m(self) -> int:
        return self.table.m

    def record(self, iteration: int) -> ChainRecord:
        return ChainRecord(
            iteration,
            self.chron_idx,
            self.v.copy(),
            self.k.copy(),
            self.eta.copy(),
            self.phi.copy(),
        )


def init_state(
    table: MixtureTable, chronologies: ChronologySet, config: EngineConfig
) -> EngineState:
    """K at each layer's heaviest component, v at the prior mean η_jΔ_i of
    the first chronology."""
    if chronologies.n != table.n:
        raise ValueError(
            f"chronologies have {chronologies.n} layers, mixtures have {table.n}"
        )
    if config.m != table.m:
        raise ValueError(f"eta/phi have {config.m} dimensions, mixtures have {table.m}")
    k = np.argmax(table.weights, axis=1)
    delta = chronologies.deltas(0)
    v = delta[:, None] * config.eta[None, :]
    caches = []
    for j in range(table.m):
        mu, D = table.layer_arrays(k, j)
        caches.append(MarginalCache(mu, D, v[:, j]))
    return EngineState(
        table,
        chronologies,
        0,
        delta,
        v,
        k,
        config.eta.copy(),
        config.phi.copy(),
        caches,
        np.full(v.shape, math.log(config.proposal_sd)),
    )


def update_volatility(state: EngineState, i: int, j: int, rng: np.random.Generator) -> bool:
    """Metropolis-Hastings for v_ij with a log-normal random walk."""
    v = state.v[i, j]
    v_new = v * math.exp(math.exp(state.log_sd[i, j]) * rng.standard_normal())
    state.acceptance.v_proposed += 1
    u = rng.random()
    if not (v_new > 0 and math.isfinite(v_new)):
        return False
    cache = state.caches[j]
    proposal = cache.propose(i, v_new)
    if proposal is None:
        return False

    mean = state.eta[j] * state.delta[i]
    shape = state.phi[j] * state.eta[j] * state.delta[i] ** 2
    log_r = (
        proposal.log_ratio
        + dists.ig_logpdf(v_new, mean, shape)
        - dists.ig_logpdf(v, mean, shape)
        # v^(-1/2) of the random-walk density, and the proposal's v*/v
        + 0.5 * (math.log(v_new) - math.log(v))
    )
    if math.log1p(-u) >= log_r:
        return False
    cache.commit(proposal)
    state.v[i, j] = proposal.v_new
    state.acceptance.v_accepted += 1
    return True


def update_indicator(state: EngineState, i: int, rng: np.random.Generator) -> bool:
    """Independence proposal k_i* ~ p_i·; the prior and proposal cancel, so
    the ratio is the change of the marginal terms."""
    G = int(state.table.counts[i])
    if G < 2:
        return False
    state.acceptance.k_proposed += 1
    k_new = int(rng.choice(G, p=state.table.weights[i, :G] / state.table.weights[i, :G].sum()))
    u = rng.random()
    if k_new == state.k[i]:
        state.acceptance.k_accepted += 1
        return True
    proposals = [
        cache.propose_layer(
            i, state.table.means[i, k_new, j], state.table.precisions[i, k_new, j]
        )
        for j, cache in enumerate(state.caches)
    ]
    log_r = sum(p.log_ratio for p in proposals)
    if math.log1p(-u) >= log_r:
        return False
    for cache, p in zip(state.caches, proposals):
        cache.commit_layer(p)
    state.k[i] = k_new
    state.acceptance.k_accepted += 1
    return True


def resample_chronology(state: EngineState, rng: np.random.Generator):
    """Redraw the chronology row uniformly; v and K stay as they are."""
    state.chron_idx = int(rng.integers(state.chronologies.R))
    state.delta = state.chronologies.deltas(state.chron_idx)


def update_hyper(state: EngineState, hyper: IceHyper, rng: np.random.Generator):
    for j in range(state.m):
        v = state.v[:, j]
        state.eta[j] = icecore.sample_eta(rng, v, state.delta, state.phi[j], hyper.a_eta, hyper.b_eta)
        state.phi[j] = icecore.sample_phi(rng, v, state.delta, state.eta[j], hyper.a_phi, hyper.b_phi)


def hold_volatility(state: EngineState):
    """Brownian evolution: v_ij = η_j Δ_i of the current chronology."""
    state.v[:] = state.delta[:, None] * state.eta[None, :]
    for j, cache in enumerate(state.caches):
        cache.set_v(state.v[:, j])


def _adapt(state: EngineState, i: int, j: int, accepted: bool, it: int):
    # Robbins-Monro on the log proposal scale, toward the target rate
    state.log_sd[i, j] += (float(accepted) - TARGET_ACCEPTANCE) / (it + 1) ** 0.6


def sweep(state: EngineState, config: EngineConfig, it: int, rng: np.random.Generator):
    resample_chronology(state, rng)
    if config.evolution == "brownian":
        hold_volatility(state)
        pairs = []
    else:
        pairs = [(i, j) for i in range(state.n - 1) for j in range(state.m)]
    layers = list(range(state.n))
    if config.scan == "random":
        pairs = [pairs[p] for p in rng.permutation(len(pairs))]
        layers = [int(i) for i in rng.permutation(state.n)]

    adapting = config.adapt and it < config.burnin
    for i, j in pairs:
        accepted = update_volatility(state, i, j, rng)
        if adapting:
            _adapt(state, i, j, accepted, it)
    for i in layers:
        update_indicator(state, i, rng)
    if not config.fix_hyper:
        update_hyper(state, config.hyper, rng)


def iterate(
    state: EngineState, config: EngineConfig, rng: np.random.Generator | None = None
) -> Iterator[ChainRecord]:
    """Run the sweeps and yield the retained records as they come."""
    rng = rng or bclim.rng(config.seed, 4)
    mcmc = config.mcmc
    report = max(mcmc.iters // 10, 1)
    for it in range(mcmc.iters):
        sweep(state, config, it, rng)
        if (it + 1) % report == 0:
            log.debug(f"iteration {it + 1}/{mcmc.iters}: {state.acceptance}")
        if mcmc.keep(it):
            yield state.record(it)


def run(
    table: MixtureTable, chronologies: ChronologySet, config: EngineConfig
) -> list[ChainRecord]:
    state = init_state(table, chronologies, config)
    records = list(iterate(state, config))
    log.debug(f"{len(records)} records retained, {state.acceptance}")
    return records
