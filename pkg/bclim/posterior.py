"""
bclim.posterior

Latent climate paths given retained volatility-sampler states, and their
interpolation onto a regular time grid.

Given (K, v) the climates of one dimension are Gaussian with precision
D_K + W, so a path is one solve for the mean plus back-substitution noise.
Between layers, volatility mass is split with the Inverse Gaussian bridge
and climates are filled in with the Brownian bridge that the split
volatilities define.

Grid conventions: the value at grid point g_k is the climate at g_k and
the volatility of the cell [g_k, g_{k+1}]. The last point has no cell.
Anything outside a chronology's span [t_1, t_n] is NaN.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numba import njit

import bclim
from bclim.lincore import assemble
from bclim.mixtures import MixtureTable
from bclim.model import ChainRecord, ChronologySet

_TINY = float(np.nextafter(0.0, 1.0))

Evolution = Literal["nig", "brownian"]


@dataclass(frozen=True)
class GridSpec:
    start: float = 0.0
    end: float = 14.0
    step: float = 0.1

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"grid start {self.start} should be before its end {self.end}")
        if not self.step > 0:
            raise ValueError(f"grid step should be positive, got {self.step}")

    @property
    def cells(self) -> int:
        return int(round((self.end - self.start) / self.step))

    def points(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.cells + 1)


@dataclass(frozen=True, eq=False)
class ClimateDraw:
    record: ChainRecord
    c: np.ndarray  # (n, m)


###############################################################################
# bridges


@njit(cache=True)
def _split(rng, v, a, b):
    # root selection on the chi-square variable (a - c u)² / (v u (1 - u)),
    # u = v1 / v, a = √(φη) Δ1, b = √(φη) Δ2
    c = a + b
    z = rng.standard_normal()
    qv = z * z * v
    lin = 2.0 * a * c + qv
    lower = 2.0 * a * a / (lin + math.sqrt(qv * (4.0 * a * b + qv)))
    upper = a * a / ((c * c + qv) * lower)
    if rng.random() * c * (a * (1.0 - lower) + b * lower) <= a * b:
        u = lower
    else:
        u = upper
    v2 = v - v * u
    if v2 <= 0.0:
        v2 = _TINY
    v1 = v - v2
    if v1 <= 0.0:
        v1 = _TINY
    return v1, v2


@njit(cache=True)
def _bridge_path(rng, times, v, c, bounds, scale, with_c, proportional):
    n = times.shape[0]
    nb = bounds.shape[0]
    lefts = np.empty(n - 1 + nb)
    pieces = np.empty(n - 1 + nb)
    at_bounds = np.full(nb, np.nan)
    p = 0
    b = 0
    for i in range(n - 1):
        left = times[i]
        right = times[i + 1]
        rest = v[i]
        level = c[i] if with_c else 0.0
        while b < nb and bounds[b] < right:
            g = bounds[b]
            if proportional:
                # a Brownian increment splits its variance in proportion to time
                v1 = rest * (g - left) / (right - left)
                rest = rest - v1
            else:
                v1, rest = _split(rng, rest, scale * (g - left), scale * (right - g))
            if with_c:
                total = v1 + rest
                mean = level + v1 / total * (c[i + 1] - level)
                level = mean + math.sqrt(v1 * rest / total) * rng.standard_normal()
                at_bounds[b] = level
            lefts[p] = left
            pieces[p] = v1
            p += 1
            left = g
            b += 1
        lefts[p] = left
        pieces[p] = rest
        p += 1
    return lefts[:p], pieces[:p], at_bounds


def ig_bridge_split(
    v_total: float,
    delta1: float,
    delta2: float,
    eta: float,
    phi: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Split the IG2 increment v_total over Δ1 + Δ2 at the interior time."""
    for name, x in (("v_total", v_total), ("delta1", delta1), ("delta2", delta2), ("eta", eta), ("phi", phi)):
        if not (x > 0 and math.isfinite(x)):
            raise ValueError(f"{name} should be positive, got {x!r}")
    scale = math.sqrt(phi * eta)
    v1, v2 = _split(rng, float(v_total), scale * delta1, scale * delta2)
    return float(v1), float(v2)


def brownian_bridge_point(
    c_left: float, c_right: float, v1: float, v2: float, rng: np.random.Generator
) -> float:
    total = v1 + v2
    mean = c_left + v1 / total * (c_right - c_left)
    return float(mean + math.sqrt(v1 * v2 / total) * rng.standard_normal())


def _proportional(evolution: str) -> bool:
    if evolution not in ("nig", "brownian"):
        raise ValueError(f"evolution should be 'nig' or 'brownian', got {evolution!r}")
    return evolution == "brownian"


def _interior(times: np.ndarray, points: np.ndarray) -> np.ndarray:
    inside = (points > times[0]) & (points < times[-1])
    return np.ascontiguousarray(points[inside & ~np.isin(points, times)], dtype=np.float64)


def bridge_increments(
    times: np.ndarray,
    v: np.ndarray,
    boundaries: np.ndarray,
    eta: float,
    phi: float,
    rng: np.random.Generator,
    evolution: Evolution = "nig",
) -> tuple[np.ndarray, np.ndarray]:
    """Split every increment at the boundaries it contains, left to right.

    Returns the knots (layer times and interior boundaries, sorted) and the
    volatility of each of the intervals between consecutive knots. Under
    `evolution="brownian"` the split is proportional to the interval lengths.
    """
    times = np.ascontiguousarray(times, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    bounds = _interior(times, np.sort(np.asarray(boundaries, dtype=np.float64)))
    lefts, pieces, _ = _bridge_path(
        rng,
        times,
        v,
        np.zeros(len(times)),
        bounds,
        math.sqrt(phi * eta),
        False,
        _proportional(evolution),
    )
    return np.r_[lefts, times[-1]], pieces


def _cells(times, lefts, pieces, points) -> np.ndarray:
    cell = np.searchsorted(points, lefts, side="right") - 1
    K = len(points) - 1
    ok = (cell >= 0) & (cell < K)
    mass = np.bincount(cell[ok], weights=pieces[ok], minlength=K)
    covered = (points[:-1] >= times[0]) & (points[1:] <= times[-1])
    vol = np.full(len(points), np.nan)
    vol[:-1][covered] = np.sqrt(mass[covered])
    return vol


def cell_volatility(times, v, points, eta, phi, rng) -> np.ndarray:
    """√ of the bridged volatility mass of every grid cell."""
    knots, pieces = bridge_increments(times, v, points, eta, phi, rng)
    return _cells(np.asarray(times), knots[:-1], pieces, points)


def interpolate_path(
    times: np.ndarray,
    c: np.ndarray,
    v: np.ndarray,
    points: np.ndarray,
    eta: float,
    phi: float,
    rng: np.random.Generator,
    evolution: Evolution = "nig",
) -> tuple[np.ndarray, np.ndarray]:
    """(climate at each grid point, volatility of each grid cell) for one
    dimension of one retained state."""
    times = np.ascontiguousarray(times, dtype=np.float64)
    bounds = _interior(times, points)
    lefts, pieces, at_bounds = _bridge_path(
        rng,
        times,
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(c, dtype=np.float64),
        bounds,
        math.sqrt(phi * eta),
        True,
        _proportional(evolution),
    )
    c_grid = np.full(len(points), np.nan)
    on_knot = np.isin(points, times)
    c_grid[on_knot] = c[np.searchsorted(times, points[on_knot])]
    c_grid[np.isin(points, bounds)] = at_bounds
    return c_grid, _cells(times, lefts, pieces, points)


###############################################################################
# climates


def draw_climate(
    record: ChainRecord, table: MixtureTable, rng: np.random.Generator
) -> ClimateDraw:
    """c_j ~ N(V D μ, V) with V = (D_K + W)⁻¹, for every dimension j."""
    if record.n != table.n or record.m != table.m:
        raise ValueError(
            f"record has (n={record.n}, m={record.m}), mixtures have (n={table.n}, m={table.m})"
        )
    c = np.empty((table.n, table.m))
    for j in range(table.m):
        mu, D = table.layer_arrays(record.k, j)
        P = assemble(D, record.v[:, j])
        c[:, j] = P.solve(D * mu) + P.noise(rng)
    return ClimateDraw(record, c)


def draw_climates(
    records: list[ChainRecord], table: MixtureTable, seed: int
) -> list[ClimateDraw]:
    return [draw_climate(r, table, bclim.rng(seed, 2, r.iteration)) for r in records]


@dataclass(frozen=True, eq=False)
class GridPosterior:
    points: np.ndarray
    iterations: np.ndarray
    c: np.ndarray  # (iterations, points, m)
    vol: np.ndarray  # (iterations, points, m), cell starting at the point

    @property
    def m(self) -> int:
        return self.c.shape[2]

    def frame(self) -> pd.DataFrame:
        """Long format: grid_ka, dim, iter, c, vol."""
        R, P, m = self.c.shape
        return pd.DataFrame(
            {
                "grid_ka": np.tile(np.repeat(self.points, m), R),
                "dim": np.tile(np.arange(1, m + 1), R * P),
                "iter": np.repeat(self.iterations, P * m),
                "c": self.c.ravel(),
                "vol": self.vol.ravel(),
            }
        )


def _interpolate_one(draw: ClimateDraw, times, points, seed, evolution):
    rng = bclim.rng(seed, 3, draw.record.iteration)
    c = np.empty((len(points), draw.c.shape[1]))
    vol = np.empty_like(c)
    for j in range(draw.c.shape[1]):
        c[:, j], vol[:, j] = interpolate_path(
            times,
            draw.c[:, j],
            draw.record.v[:, j],
            points,
            draw.record.eta[j],
            draw.record.phi[j],
            rng,
            evolution,
        )
    return c, vol


def interpolate(
    draws: list[ClimateDraw],
    chronologies: ChronologySet,
    grid: GridSpec,
    seed: int,
    threads: int = 1,
    evolution: Evolution = "nig",
) -> GridPosterior:
    """Bridge every retained state onto the grid. Each state draws from its
    own substream, so the result does not depend on `threads`."""
    _proportional(evolution)
    points = grid.points()
    spans = [chronologies.draws[d.record.chron_idx] for d in draws]
    if draws and not any(
        np.any((points >= t[0]) & (points <= t[-1])) for t in spans
    ):
        raise ValueError(f"grid [{grid.start}, {grid.end}] does not overlap any chronology")
    results = Parallel(n_jobs=threads)(
        delayed(_interpolate_one)(d, t, points, seed, evolution) for d, t in zip(draws, spans)
    )
    m = draws[0].c.shape[1] if draws else 0
    return GridPosterior(
        points,
        np.array([d.record.iteration for d in draws], dtype=np.int64),
        np.array([c for c, _ in results]).reshape(len(draws), len(points), m),
        np.array([v for _, v in results]).reshape(len(draws), len(points), m),
    )


def summarize(posterior: GridPosterior) -> pd.DataFrame:
    """Per grid point and dimension: posterior mean and 95% interval of c,
    95% interval of the cell volatility, and how many states cover it."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c_mean = np.nanmean(posterior.c, axis=0)
        c_lo, c_hi = np.nanquantile(posterior.c, [0.025, 0.975], axis=0)
        vol_lo, vol_hi = np.nanquantile(posterior.vol, [0.025, 0.975], axis=0)
    present = np.sum(~np.isnan(posterior.c), axis=0)
    m = posterior.m
    return pd.DataFrame(
        {
            "grid_ka": np.repeat(posterior.points, m),
            "dim": np.tile(np.arange(1, m + 1), len(posterior.points)),
            "c_mean": c_mean.ravel(),
            "c_lo95": c_lo.ravel(),
            "c_hi95": c_hi.ravel(),
            "vol_lo95": vol_lo.ravel(),
            "vol_hi95": vol_hi.ravel(),
            "n_present": present.ravel(),
        }
    )
