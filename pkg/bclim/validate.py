"""
bclim.validate

End-to-end coverage checks on simulated data. A replicate simulates
(η, φ, v, c) and pseudo-data for one scenario, turns the pseudo-data into
marginal data posteriors, runs the volatility sampler with η and φ fixed
(possibly biased), draws climates, and counts how often the truth falls
inside the 90% and 50% central posterior intervals.

Scenarios:

  1   Gaussian pseudo-data with known per-layer precision
  2   three zero-inflated Poisson taxa, G = 5
  3   as 2 with G = 2
  4a  as 2, with η and φ handed to the sampler scaled by U(0.5, 1)
  4b  as 2, with η and φ handed to the sampler scaled by U(1, 5)
"""

import math
from dataclasses import dataclass, field
from typing import IO, Callable, Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

import bclim
from bclim import dists
from bclim.engine import EngineConfig, init_state, iterate
from bclim.logger import stage
from bclim.mixtures import (
    EMConfig,
    LayerMDP,
    MixtureTable,
    fit_mixture_em,
    gaussian_mdp,
)
from bclim.model import ChronologySet, MDPSampleSet, RunConfig
from bclim.posterior import draw_climate

ESS_WARNING = 50


@dataclass(frozen=True)
class Scenario:
    id: str
    detail: str
    likelihood: Literal["gaussian", "zip"]
    G: int
    bias: tuple[float, float] | None = None
    n: int = 100
    m: int = 3

    @property
    def index(self) -> int:
        return list(SCENARIOS).index(self.id) + 1


SCENARIOS = {
    "1": Scenario("1", "Gaussian likelihood", "gaussian", 1),
    "2": Scenario("2", "ZIP likelihood", "zip", 5),
    "3": Scenario("3", "ZIP likelihood, too few mixture components", "zip", 2),
    "4a": Scenario("4a", "ZIP likelihood, under-estimated IG parameters", "zip", 5, (0.5, 1.0)),
    "4b": Scenario("4b", "ZIP likelihood, over-estimated IG parameters", "zip", 5, (1.0, 5.0)),
}


def scenario(id: str) -> Scenario:
    try:
        return SCENARIOS[str(id)]
    except KeyError:
        raise ValueError(f"unknown scenario {id!r}, expected one of {', '.join(SCENARIOS)}") from None


@dataclass(frozen=True, eq=False)
class Truth:
    eta: np.ndarray  # (m,)
    phi: np.ndarray  # (m,)
    v: np.ndarray  # (n - 1, m)
    c: np.ndarray  # (n, m)


@dataclass(frozen=True, eq=False)
class PseudoData:
    """Per-layer observations and the likelihood c -> log π(y_i | c)."""

    y: np.ndarray  # (n, m) for the Gaussian scenario, (n, taxa) counts otherwise
    precision: np.ndarray | None = None  # (n,), Gaussian scenario only
    p_zero: np.ndarray | None = None  # (taxa,)
    a: np.ndarray | None = None  # (m,)

    def loglik(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        if self.precision is not None:
            tau = self.precision[i]
            y = self.y[i]
            return lambda c: 0.5 * (
                c.shape[1] * (math.log(tau) - dists.LOG_2PI) - tau * np.sum((c - y) ** 2, axis=1)
            )
        y = self.y[i]
        return lambda c: np.sum(
            [
                dists.zip_logpmf_rates(y[t], self.p_zero[t], rate)
                for t, rate in enumerate(zip_rates(self.a, c).T)
            ],
            axis=0,
        )


def zip_rates(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """(S, 3) taxon rates √(a₁c₁² + a₂c₂²), √(a₁c₁² + a₃c₃²), √(a₁c₁² + a₂c₂² + a₃c₃²)"""
    c = np.atleast_2d(c)
    s = a[None, :] * c * c
    return np.sqrt(np.stack([s[:, 0] + s[:, 1], s[:, 0] + s[:, 2], s.sum(axis=1)], axis=1))


def simulate_scenario(
    sc: Scenario,
    rng: np.random.Generator,
    delta_reading: Literal["precision", "variance"] = "precision",
) -> tuple[Truth, PseudoData]:
    """Unit time steps, c_1 = 0, and v_ij ~ IG2(η_j, φ_j)."""
    eta = rng.uniform(0.1, 10.0, sc.m)
    phi = rng.uniform(0.1, 10.0, sc.m)
    v = np.empty((sc.n - 1, sc.m))
    for j in range(sc.m):
        for i in range(sc.n - 1):
            v[i, j] = dists.ig2_sample(rng, dists.IG2Params(eta[j], phi[j]))
    c = np.zeros((sc.n, sc.m))
    c[1:] = np.cumsum(np.sqrt(v) * rng.standard_normal(v.shape), axis=0)
    truth = Truth(eta, phi, v, c)

    if sc.likelihood == "gaussian":
        delta = rng.uniform(0.02, 2.0, sc.n)
        match delta_reading:
            case "precision":
                precision = delta
            case "variance":
                precision = 1.0 / delta
            case _:
                raise ValueError(f"delta_reading should be 'precision' or 'variance', got {delta_reading!r}")
        y = c + rng.standard_normal(c.shape) / np.sqrt(precision)[:, None]
        return truth, PseudoData(y, precision=precision)

    p_zero = rng.uniform(0.0, 0.2, 3)
    a = np.abs(rng.standard_normal(sc.m))
    rates = zip_rates(a, c)
    y = np.empty(rates.shape, dtype=np.int64)
    for t in range(3):
        y[:, t] = [dists.zip_sample(rng, dists.ZIPParams(p_zero[t], r)) for r in rates[:, t]]
    return truth, PseudoData(y, p_zero=p_zero, a=a)


def truth_box(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per dimension, the range of the true climates widened by 5 sds."""
    sd = c.std(axis=0)
    sd[sd == 0] = 1.0
    return c.min(axis=0) - 5 * sd, c.max(axis=0) + 5 * sd


def importance_mdp(
    loglik: Callable[[np.ndarray], np.ndarray],
    box: tuple[np.ndarray, np.ndarray],
    S: int,
    rng: np.random.Generator,
    oversample: int = 10,
) -> tuple[np.ndarray, float]:
    """Sampling-importance-resampling under a flat prior on the box: S draws
    and the effective sample size of the `oversample * S` weighted proposals."""
    if S < 2000:
        raise ValueError(f"importance sampling needs S >= 2000, got {S}")
    lo, hi = box
    proposals = rng.uniform(lo, hi, (oversample * S, len(lo)))
    logw = loglik(proposals)
    if not np.any(np.isfinite(logw)):
        raise ValueError("every importance proposal has zero likelihood")
    w = np.exp(logw - np.max(logw))
    w /= w.sum()
    ess = 1.0 / float(np.sum(w * w))
    return proposals[rng.choice(len(w), size=S, p=w)], ess


@dataclass(frozen=True)
class ValidationConfig:
    iters: int = 3000
    burnin: int = 1000
    thin: int = 2
    importance_samples: int = 2000
    delta_reading: Literal["precision", "variance"] = "precision"
    em: EMConfig = field(default_factory=EMConfig)

    @staticmethod
    def from_run_config(config: RunConfig) -> "ValidationConfig":
        return ValidationConfig(
            config.validate_iters,
            config.validate_burnin,
            config.validate_thin,
            config.importance_samples,
            config.delta_reading,
            EMConfig(config.restarts, config.tol, config.max_em_iter, config.min_weight),
        )


def scenario_mdps(
    sc: Scenario, truth: Truth, data: PseudoData, config: ValidationConfig, rng, log
) -> tuple[list[LayerMDP], list[np.ndarray], list[int]]:
    """(MDPs, the samples they were fitted to, low-ESS layers)"""
    if sc.likelihood == "gaussian":
        mdps = [gaussian_mdp(i + 1, data.y[i], data.precision[i]) for i in range(sc.n)]
        return mdps, [], []
    box = truth_box(truth.c)
    mdps, samples, flagged = [], [], []
    for i in range(sc.n):
        draws, ess = importance_mdp(data.loglik(i), box, config.importance_samples, rng)
        if ess < ESS_WARNING:
            log.warning(f"layer {i + 1}: importance ESS {ess:.1f} < {ESS_WARNING}")
            flagged.append(i + 1)
        samples.append(draws)
        mdps.append(fit_mixture_em(draws, sc.G, config.em, rng, layer_index=i + 1))
    return mdps, samples, flagged


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    inside90: int = 0
    inside50: int = 0
    total: int = 0
    flagged_layers: tuple[int, ...] = ()
    error: str | None = None


def run_replicate(sc: Scenario, index: int, config: ValidationConfig, seed: int) -> ReplicateResult:
    """One simulate, fit, sample, and score job. Failures are returned, not raised."""
    log = stage(f"s{sc.id}/r{index:03d}")
    rng = bclim.rng(seed, 6, sc.index, index)
    try:
        truth, data = simulate_scenario(sc, rng, config.delta_reading)
        mdps, _, flagged = scenario_mdps(sc, truth, data, config, rng, log)
        table = MixtureTable.from_layers(mdps)

        eta, phi = truth.eta, truth.phi
        if sc.bias is not None:
            eta = eta * rng.uniform(*sc.bias, sc.m)
            phi = phi * rng.uniform(*sc.bias, sc.m)
        engine = EngineConfig(config.iters, config.burnin, config.thin, eta, phi, seed=seed)
        state = init_state(table, ChronologySet.unit(sc.n), engine)
        records = list(iterate(state, engine, rng))
        if not records:
            raise ValueError("no records retained")
        climates = np.array([draw_climate(r, table, rng).c for r in records])

        q05, q25, q75, q95 = np.quantile(climates, [0.05, 0.25, 0.75, 0.95], axis=0)
        inside90 = int(np.sum((q05 <= truth.c) & (truth.c <= q95)))
        inside50 = int(np.sum((q25 <= truth.c) & (truth.c <= q75)))
        log.debug(f"{inside90}/{truth.c.size} inside 90%, {inside50} inside 50%, {state.acceptance}")
        return ReplicateResult(index, inside90, inside50, truth.c.size, tuple(flagged))
    except Exception as e:
        log.warning(f"replicate failed: {e!r}")
        return ReplicateResult(index, error=repr(e))


@dataclass(frozen=True)
class CoverageReport:
    scenario: str
    detail: str
    cov90: float
    cov50: float
    replicates: int
    failed: tuple[int, ...] = ()

    @staticmethod
    def frame(reports: list["CoverageReport"]) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "scenario": [r.scenario for r in reports],
                "detail": [r.detail for r in reports],
                "cov90": [r.cov90 for r in reports],
                "cov50": [r.cov50 for r in reports],
                "replicates": [r.replicates for r in reports],
            }
        )

    @staticmethod
    def write(fp: IO, reports: list["CoverageReport"], header: str):
        print(header, file=fp)
        CoverageReport.frame(reports).to_csv(fp, index=False, lineterminator="\n")


def coverage_report(
    sc: Scenario,
    replicates: int,
    config: ValidationConfig,
    seed: int,
    threads: int = 1,
) -> CoverageReport:
    """Pool the interval indicators over every (layer, dimension, replicate)."""
    if replicates < 1:
        raise ValueError(f"replicates should be >= 1, got {replicates}")
    results = Parallel(n_jobs=threads)(
        delayed(run_replicate)(sc, r, config, seed) for r in range(1, replicates + 1)
    )
    ok = [r for r in results if r.error is None]
    failed = tuple(r.index for r in results if r.error is not None)
    total = sum(r.total for r in ok)
    return CoverageReport(
        sc.id,
        sc.detail,
        sum(r.inside90 for r in ok) / total if total else math.nan,
        sum(r.inside50 for r in ok) / total if total else math.nan,
        len(ok),
        failed,
    )


###############################################################################
# fixtures


def simulate_fixture(
    sc: Scenario,
    rng: np.random.Generator,
    chronologies: int,
    span: float = 14.0,
    samples: int = 2000,
    delta_reading: Literal["precision", "variance"] = "precision",
) -> tuple[MDPSampleSet, ChronologySet]:
    """MDP samples from a simulated scenario and jittered, evenly spread
    chronologies over (0, span) ka."""
    truth, data = simulate_scenario(sc, rng, delta_reading)
    if sc.likelihood == "gaussian":
        layers = tuple(
            data.y[i] + rng.standard_normal((samples, sc.m)) / math.sqrt(data.precision[i])
            for i in range(sc.n)
        )
    else:
        box = truth_box(truth.c)
        layers = tuple(
            importance_mdp(data.loglik(i), box, samples, rng)[0] for i in range(sc.n)
        )
    slots = np.arange(sc.n) + 0.5
    draws = (slots[None, :] + rng.uniform(-0.4, 0.4, (chronologies, sc.n))) * span / sc.n
    return MDPSampleSet(layers), ChronologySet(draws)
