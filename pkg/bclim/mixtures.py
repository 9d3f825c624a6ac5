"""
bclim.mixtures

Finite Gaussian mixture approximations of the per-layer marginal data
posteriors. Each layer gets its own mixture, fitted by EM with
distance-weighted farthest-point seeding and several restarts; components
carry diagonal precisions so that the marginalised posterior factorises
over climate dimensions.

A full-covariance fit exists for diagnostics. Its components report
`diagonal == False` and are refused by `marginal_slices` and the sampler.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Literal

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp

import bclim
from bclim import dists
from bclim.logger import log
from bclim.model import FormatError, MDPSampleSet


@dataclass(frozen=True)
class MixtureComponent:
    """One weighted Gaussian. `precision` is the diagonal of the precision
    matrix, or (diagnostics only) the full matrix as a tuple of rows."""

    weight: float
    mean: tuple[float, ...]
    precision: tuple

    def __post_init__(self):
        if not 0 <= self.weight <= 1:
            raise ValueError(f"weight should be a probability, got {self.weight}")
        if self.diagonal:
            if len(self.precision) != len(self.mean):
                raise ValueError("mean and precision should have the same length")
            if not all(p > 0 and math.isfinite(p) for p in self.precision):
                raise ValueError(f"precisions should be positive: {self.precision}")

    @property
    def diagonal(self) -> bool:
        return not isinstance(self.precision[0], tuple)

    @property
    def m(self) -> int:
        return len(self.mean)

    def precision_matrix(self) -> np.ndarray:
        if self.diagonal:
            return np.diag(self.precision)
        return np.array(self.precision)

    def to_json(self) -> dict:
        key = "precision_diag" if self.diagonal else "precision_full"
        prec = list(self.precision) if self.diagonal else [list(r) for r in self.precision]
        return {"weight": self.weight, "mean": list(self.mean), key: prec}

    @staticmethod
    def from_json(json: dict) -> "MixtureComponent":
        if "precision_diag" in json:
            prec = tuple(float(x) for x in json["precision_diag"])
        else:
            prec = tuple(tuple(float(x) for x in r) for r in json["precision_full"])
        return MixtureComponent(
            float(json["weight"]), tuple(float(x) for x in json["mean"]), prec
        )

    def sort_key(self):
        return (-self.weight, self.mean[0])


@dataclass(frozen=True)
class LayerMDP:
    """The mixture approximation of one layer's marginal data posterior."""

    layer_index: int
    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError(f"layer {self.layer_index} has no components")
        total = math.fsum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"layer {self.layer_index} weights sum to {total!r}")
        if len({c.m for c in self.components}) != 1:
            raise ValueError(f"layer {self.layer_index} mixes dimensions")

    @property
    def G(self) -> int:
        return len(self.components)

    @property
    def m(self) -> int:
        return self.components[0].m

    @property
    def diagonal(self) -> bool:
        return all(c.diagonal for c in self.components)

    @staticmethod
    def ordered(layer_index: int, components) -> "LayerMDP":
        return LayerMDP(layer_index, tuple(sorted(components, key=MixtureComponent.sort_key)))

    def to_json(self) -> dict:
        return {
            "layer": self.layer_index,
            "components": [c.to_json() for c in self.components],
        }

    @staticmethod
    def from_json(json: dict) -> "LayerMDP":
        return LayerMDP(
            int(json["layer"]),
            tuple(MixtureComponent.from_json(c) for c in json["components"]),
        )


@dataclass(frozen=True)
class EMConfig:
    restarts: int = 10
    tol: float = 1e-8
    max_iter: int = 1000
    min_weight: float = 1e-3
    var_floor: float = 1e-6
    covariance: Literal["diag", "full"] = "diag"


###############################################################################
# densities


def mixture_logpdf_many(mdp: LayerMDP, c: np.ndarray) -> np.ndarray:
    """log Σ_g p_g N(c; μ_g, τ_g^-1) for every row of `c`."""
    c = np.atleast_2d(c)
    if c.shape[1] != mdp.m:
        raise ValueError(f"expected {mdp.m}-vectors, got {c.shape[1]}")
    terms = np.empty((c.shape[0], mdp.G))
    for g, comp in enumerate(mdp.components):
        if comp.diagonal:
            tau = np.array(comp.precision)
            r = c - np.array(comp.mean)
            terms[:, g] = 0.5 * (np.sum(np.log(tau)) - mdp.m * dists.LOG_2PI) - 0.5 * (
                r * r
            ) @ tau
        else:
            mean, prec = np.array(comp.mean), comp.precision_matrix()
            terms[:, g] = [dists.mvn_logpdf(x, mean, prec) for x in c]
        with np.errstate(divide="ignore"):
            terms[:, g] += math.log(comp.weight) if comp.weight > 0 else -math.inf
    return logsumexp(terms, axis=1)


def mixture_logpdf(mdp: LayerMDP, c: np.ndarray) -> float:
    return float(mixture_logpdf_many(mdp, np.asarray(c, dtype=np.float64)[None, :])[0])


def marginal_slices(mdp: LayerMDP, j: int) -> list[tuple[float, float, float]]:
    """The (mean, precision, weight) of every component in dimension j."""
    if not mdp.diagonal:
        raise ValueError(
            f"layer {mdp.layer_index} has full-covariance components; "
            "per-dimension slices need diagonal precisions"
        )
    return [(c.mean[j], c.precision[j], c.weight) for c in mdp.components]


def gaussian_mdp(layer_index: int, mean, precision) -> LayerMDP:
    """A single-component MDP, for a Gaussian likelihood with known precision."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    precision = np.broadcast_to(np.asarray(precision, dtype=np.float64), mean.shape)
    return LayerMDP(
        layer_index,
        (MixtureComponent(1.0, tuple(map(float, mean)), tuple(map(float, precision))),),
    )


###############################################################################
# EM


def _seed_means(X: np.ndarray, G: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted farthest-point seeding on standardised samples."""
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = X / scale
    chosen = [int(rng.integers(len(X)))]
    d2 = np.sum((Z - Z[chosen[0]]) ** 2, axis=1)
    for _ in range(1, G):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(len(X), p=d2 / total))
        else:
            nxt = int(rng.integers(len(X)))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((Z - Z[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _log_joint_diag(X, weights, means, var):
    log_det = np.sum(np.log(var), axis=1)
    quad = np.stack([np.sum((X - mu) ** 2 / v, axis=1) for mu, v in zip(means, var)], axis=1)
    with np.errstate(divide="ignore"):
        return np.log(weights) - 0.5 * (X.shape[1] * dists.LOG_2PI + log_det + quad)


def _log_joint_full(X, weights, means, covs):
    out = np.empty((len(X), len(weights)))
    for g, (mu, cov) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(cov)
        r = np.linalg.solve(chol, (X - mu).T)
        out[:, g] = (
            math.log(weights[g]) if weights[g] > 0 else -math.inf
        ) - 0.5 * (X.shape[1] * dists.LOG_2PI + 2 * np.sum(np.log(np.diag(chol))) + np.sum(r * r, axis=0))
    return out


@dataclass
class _EMRun:
    weights: np.ndarray
    means: np.ndarray
    spread: np.ndarray  # variances (G, m) or covariances (G, m, m)
    trace: list[float]
    degenerate: bool

    @property
    def loglik(self) -> float:
        return self.trace[-1]


def _em(X, means, floor, config: EMConfig) -> _EMRun:
    N, m = X.shape
    G = len(means)
    full = config.covariance == "full"
    weights = np.full(G, 1.0 / G)
    var = np.tile(X.var(axis=0), (G, 1))
    spread = np.stack([np.diag(v) for v in var]) if full else var
    trace: list[float] = []
    for _ in range(config.max_iter):
        if full:
            log_joint = _log_joint_full(X, weights, means, spread)
        else:
            log_joint = _log_joint_diag(X, weights, means, spread)
        per_sample = logsumexp(log_joint, axis=1)
        ll = float(per_sample.sum())
        if trace and abs(ll - trace[-1]) <= config.tol * abs(trace[-1]):
            trace.append(ll)
            break
        trace.append(ll)

        resp = np.exp(log_joint - per_sample[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk <= 1e-10 * N):
            return _EMRun(weights, means, spread, trace, True)
        weights = nk / N
        means = (resp.T @ X) / nk[:, None]
        if full:
            spread = np.empty((G, m, m))
            for g in range(G):
                diff = X - means[g]
                spread[g] = (resp[:, g] * diff.T) @ diff / nk[g]
                spread[g].flat[:: m + 1] = np.maximum(spread[g].diagonal(), floor)
        else:
            spread = np.stack(
                [resp[:, g] @ (X - means[g]) ** 2 / nk[g] for g in range(G)]
            )
            spread = np.maximum(spread, floor)

    variances = np.stack([np.diag(s) for s in spread]) if full else spread
    degenerate = bool(
        np.any(weights < config.min_weight) or np.any(variances <= floor * (1 + 1e-9))
    )
    return _EMRun(weights, means, spread, trace, degenerate)


def _components(run: _EMRun, full: bool) -> list[MixtureComponent]:
    weights = run.weights / math.fsum(run.weights)
    out = []
    for w, mu, s in zip(weights, run.means, run.spread):
        if full:
            prec = np.linalg.inv(s)
            prec = 0.5 * (prec + prec.T)
            precision = tuple(tuple(map(float, r)) for r in prec)
        else:
            precision = tuple(float(1.0 / x) for x in s)
        out.append(MixtureComponent(float(w), tuple(map(float, mu)), precision))
    # renormalise after rounding into floats so the layer sums to one
    total = math.fsum(c.weight for c in out)
    return [MixtureComponent(c.weight / total, c.mean, c.precision) for c in out]


def fit_mixture_em(
    samples: np.ndarray,
    G: int,
    config: EMConfig,
    rng: np.random.Generator,
    layer_index: int = 1,
) -> LayerMDP:
    """Fit a G-component Gaussian mixture by EM, keeping the best of
    `config.restarts` runs. Degenerate fits are refitted with G - 1."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0:
        raise ValueError(f"layer {layer_index}: no samples to fit")
    if G < 1:
        raise ValueError(f"G should be >= 1, got {G}")
    if len(X) < 10 * G:
        raise ValueError(f"layer {layer_index}: {len(X)} samples is fewer than 10 * G = {10 * G}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"layer {layer_index}: samples should be finite")

    sample_var = X.var(axis=0)
    floor = config.var_floor * np.where(sample_var > 0, sample_var, 1.0)

    best = None
    for _ in range(config.restarts if G > 1 else 1):
        run = _em(X, _seed_means(X, G, rng), floor, config)
        if run.degenerate and G > 1:
            continue
        if best is None or run.loglik > best.loglik:
            best = run

    if best is None:
        log.warning(f"layer {layer_index}: every fit with G={G} was degenerate, refitting with G={G - 1}")
        return fit_mixture_em(X, G - 1, config, rng, layer_index)

    log.trace(f"layer {layer_index}: G={G} loglik={best.loglik:.6g} after {len(best.trace)} iterations")
    return LayerMDP.ordered(layer_index, _components(best, config.covariance == "full"))


def fit_layers(
    sample_set: MDPSampleSet,
    G: int,
    config: EMConfig,
    seed: int,
    threads: int = 1,
) -> list[LayerMDP]:
    """Fit every layer. Layer i draws from its own substream, so the result
    does not depend on `threads`."""

    def fit(i, samples):
        return fit_mixture_em(samples, G, config, bclim.rng(seed, 1, i), layer_index=i)

    layers = Parallel(n_jobs=threads)(
        delayed(fit)(i, s) for i, s in enumerate(sample_set.samples, start=1)
    )
    for mdp, samples in zip(layers, sample_set.samples):
        ll = float(mixture_logpdf_many(mdp, samples).sum())
        log.debug(f"layer {mdp.layer_index}: G={mdp.G} loglik={ll:.6g}")
    return layers


###############################################################################
# the table the sampler reads


@dataclass(frozen=True, eq=False)
class MixtureTable:
    """All layers' diagonal mixtures as padded arrays.

    Layers with fewer components than the widest are padded with weight-0
    entries, which are never proposed.
    """

    weights: np.ndarray  # (n, G)
    means: np.ndarray  # (n, G, m)
    precisions: np.ndarray  # (n, G, m)
    counts: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def G(self) -> int:
        return self.weights.shape[1]

    @property
    def m(self) -> int:
        return self.means.shape[2]

    @staticmethod
    def from_layers(layers: list[LayerMDP]) -> "MixtureTable":
        if not layers:
            raise ValueError("no layers")
        m = layers[0].m
        G = max(mdp.G for mdp in layers)
        n = len(layers)
        weights = np.zeros((n, G))
        means = np.zeros((n, G, m))
        precisions = np.ones((n, G, m))
        for i, mdp in enumerate(layers):
            if mdp.m != m:
                raise ValueError(f"layer {mdp.layer_index} has dimension {mdp.m}, expected {m}")
            if not mdp.diagonal:
                raise ValueError(
                    f"layer {mdp.layer_index} has full-covariance components, "
                    "which cannot feed the sampler"
                )
            for g, comp in enumerate(mdp.components):
                weights[i, g] = comp.weight
                means[i, g] = comp.mean
                precisions[i, g] = comp.precision
        return MixtureTable(weights, means, precisions, np.array([mdp.G for mdp in layers]))

    def layer_arrays(self, k: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(μ_jK, diag D_jK) for the indicator tuple k."""
        rows = np.arange(self.n)
        return self.means[rows, k, j].copy(), self.precisions[rows, k, j].copy()


###############################################################################
# files


def write_mixtures(fp: IO, layers: list[LayerMDP]):
    """Write the layers as a bare JSON array, youngest first."""
    json.dump([mdp.to_json() for mdp in layers], fp, indent=2)
    fp.write("\n")


def read_mixtures(path: Path) -> list[LayerMDP]:
    with open(path, encoding="utf-8") as fp:
        try:
            data = json.load(fp)
        except json.JSONDecodeError as e:
            raise FormatError(path, e.lineno, e.msg) from e
    try:
        # older files wrap the array as {"meta": ..., "layers": [...]}
        layers = data["layers"] if isinstance(data, dict) else data
        out = [LayerMDP.from_json(x) for x in layers]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(path, 1, f"not a mixture file: {e}") from e
    for i, mdp in enumerate(out, start=1):
        if mdp.layer_index != i:
            raise FormatError(path, 1, f"layers should be 1-based and contiguous, got {mdp.layer_index}")
    return out
