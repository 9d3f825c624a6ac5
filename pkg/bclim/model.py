"""
bclim.model

This module provides the data model shared by the pipeline stages: the
observed series, chronology draws, marginal-data-posterior samples, chain
records, and the run configuration, together with their file formats.

All CSV files are RFC-4180, UTF-8, with a `.` decimal separator. Lines
starting with `#` are comments; every file bclim writes starts with one.
"""

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Iterable, Iterator

import numpy as np
import yaml

from bclim import __version__
from bclim.logger import summary64


class FormatError(ValueError):
    """A malformed input file, located by path and 1-based line number."""

    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def header_line(digest: str, seed: int | None) -> str:
    return f"# bclim {__version__} config={digest} seed={seed}"


def _rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    """Yield (line number, row) for every non-comment, non-blank row."""
    with open(path, newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        for row in reader:
            if not row or row[0].startswith("#") or all(not c.strip() for c in row):
                continue
            yield reader.line_num, [c.strip() for c in row]


def _floats(path, line, cells: Iterable[str]) -> list[float]:
    try:
        values = [float(c) for c in cells]
    except ValueError as e:
        raise FormatError(path, line, f"expected numbers: {e}") from e
    if not all(map(math.isfinite, values)):
        raise FormatError(path, line, "expected finite numbers")
    return values


def _header(path, rows: Iterator[tuple[int, list[str]]]) -> tuple[int, list[str]]:
    try:
        return next(rows)
    except StopIteration:
        raise FormatError(path, 1, "empty file") from None


@dataclass(frozen=True, eq=False)
class SeriesData:
    """A directly observed, precisely dated series o(t)."""

    t: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        if self.t.shape != self.o.shape or self.t.ndim != 1:
            raise ValueError(f"t and o should be aligned vectors: {self.t.shape} {self.o.shape}")
        if len(self.t) < 3:
            raise ValueError(f"a series needs at least 3 points, but got {len(self.t)}")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.o))):
            raise ValueError("series values should be finite")
        if not np.all(np.diff(self.t) > 0):
            raise ValueError("series times should be strictly increasing")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def delta(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.o)

    def standardized(self) -> "SeriesData":
        return SeriesData(self.t, (self.o - self.o.mean()) / self.o.std())

    @staticmethod
    def read(path: Path, standardize: bool = True) -> "SeriesData":
        """Read a `time_ka,value` file, sorting by time."""
        rows = _rows(path)
        line, header = _header(path, rows)
        if header != ["time_ka", "value"]:
            raise FormatError(path, line, f"expected header time_ka,value, got {header}")
        t, o = [], []
        for line, row in rows:
            if len(row) != 2:
                raise FormatError(path, line, f"expected 2 columns, got {len(row)}")
            a, b = _floats(path, line, row)
            t.append(a)
            o.append(b)
        t, o = np.array(t), np.array(o)
        order = np.argsort(t, kind="stable")
        t, o = t[order], o[order]
        if np.any(np.diff(t) == 0):
            raise FormatError(path, line, "duplicate times in series")
        data = SeriesData(t, o)
        return data.standardized() if standardize else data


@dataclass(frozen=True, eq=False)
class ChronologySet:
    """Monotone draws of the layer ages, one row per draw (ka BP)."""

    draws: np.ndarray

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[0] < 1:
            raise ValueError(f"expected a non-empty (draws x layers) matrix: {self.draws.shape}")
        bad = np.flatnonzero(~np.all(np.diff(self.draws, axis=1) > 0, axis=1))
        if len(bad):
            raise ValueError(f"chronology row {bad[0] + 1} is not strictly increasing")

    @property
    def R(self) -> int:
        return self.draws.shape[0]

    @property
    def n(self) -> int:
        return self.draws.shape[1]

    def deltas(self, row: int) -> np.ndarray:
        return np.diff(self.draws[row])

    def mean(self) -> "ChronologySet":
        """The single chronology of the column means, for runs with fixed ages."""
        return ChronologySet(self.draws.mean(axis=0, keepdims=True))

    @staticmethod
    def unit(n: int) -> "ChronologySet":
        """A single, fixed chronology 0, 1, ..., n - 1."""
        return ChronologySet(np.arange(n, dtype=np.float64)[None, :])

    @staticmethod
    def read(path: Path) -> "ChronologySet":
        rows = _rows(path)
        line, header = _header(path, rows)
        if header != [f"t{i}" for i in range(1, len(header) + 1)]:
            raise FormatError(path, line, "expected header t1,...,tn")
        draws = []
        for line, row in rows:
            if len(row) != len(header):
                raise FormatError(path, line, f"expected {len(header)} ages, got {len(row)}")
            ages = _floats(path, line, row)
            if not all(a < b for a, b in zip(ages, ages[1:])):
                raise FormatError(path, line, "ages should be strictly increasing")
            draws.append(ages)
        if not draws:
            raise FormatError(path, line, "no chronology draws")
        return ChronologySet(np.array(draws))

    def write(self, fp: IO, header: str):
        print(header, file=fp)
        w = csv.writer(fp, lineterminator="\n")
        w.writerow([f"t{i}" for i in range(1, self.n + 1)])
        for row in self.draws:
            w.writerow([repr(float(a)) for a in row])


@dataclass(frozen=True, eq=False)
class MDPSampleSet:
    """Per-layer draws from the marginal data posteriors π(c_i | y_i)."""

    samples: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.samples:
            raise ValueError("no layers")
        ms = {s.shape[1] for s in self.samples}
        if len(ms) != 1 or min(ms) < 1:
            raise ValueError(f"all layers should share one dimension m >= 1, got {ms}")

    @property
    def n_layers(self) -> int:
        return len(self.samples)

    @property
    def m(self) -> int:
        return self.samples[0].shape[1]

    @staticmethod
    def read(path: Path) -> "MDPSampleSet":
        rows = _rows(path)
        line, header = _header(path, rows)
        m = len(header) - 2
        if m < 1 or header != ["layer", "sample"] + [f"c{j}" for j in range(1, m + 1)]:
            raise FormatError(path, line, "expected header layer,sample,c1,...,cm")
        layers: dict[int, list[list[float]]] = {}
        for line, row in rows:
            if len(row) != m + 2:
                raise FormatError(path, line, f"expected {m + 2} columns, got {len(row)}")
            try:
                layer = int(row[0])
            except ValueError:
                raise FormatError(path, line, f"layer should be an integer: {row[0]!r}") from None
            if layer not in layers and layer != len(layers) + 1:
                raise FormatError(
                    path, line, f"layers should be 1-based and contiguous, got {layer}"
                )
            if layer != len(layers) and layer in layers:
                raise FormatError(path, line, f"layer {layer} is not contiguous")
            layers.setdefault(layer, []).append(_floats(path, line, row[2:]))
        if not layers:
            raise FormatError(path, line, "no samples")
        return MDPSampleSet(tuple(np.array(layers[i]) for i in range(1, len(layers) + 1)))

    def write(self, fp: IO, header: str):
        print(header, file=fp)
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["layer", "sample"] + [f"c{j}" for j in range(1, self.m + 1)])
        for i, layer in enumerate(self.samples, start=1):
            for s, c in enumerate(layer, start=1):
                w.writerow([i, s] + [repr(float(x)) for x in c])


@dataclass(frozen=True, eq=False)
class ChainRecord:
    """One retained state of the volatility sampler.

    `k` holds 0-based component indices; files use 1-based ones.
    """

    iteration: int
    chron_idx: int
    v: np.ndarray
    k: np.ndarray
    eta: np.ndarray
    phi: np.ndarray

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def m(self) -> int:
        return len(self.eta)

    @staticmethod
    def columns(n: int, m: int) -> list[str]:
        return (
            ["iter", "chron_idx"]
            + [f"k_{i}" for i in range(1, n + 1)]
            + [f"v_{i}_{j}" for i in range(1, n) for j in range(1, m + 1)]
            + [f"eta_{j}" for j in range(1, m + 1)]
            + [f"phi_{j}" for j in range(1, m + 1)]
        )

    def encode(self) -> list[str]:
        return (
            [str(self.iteration), str(self.chron_idx)]
            + [str(int(k) + 1) for k in self.k]
            + [repr(float(x)) for x in self.v.ravel()]
            + [repr(float(x)) for x in self.eta]
            + [repr(float(x)) for x in self.phi]
        )

    @staticmethod
    def decode(row: list[str], n: int, m: int) -> "ChainRecord":
        it, ci = int(row[0]), int(row[1])
        k = np.array([int(x) - 1 for x in row[2 : 2 + n]])
        at = 2 + n
        v = np.array([float(x) for x in row[at : at + (n - 1) * m]]).reshape(n - 1, m)
        at += (n - 1) * m
        eta = np.array([float(x) for x in row[at : at + m]])
        phi = np.array([float(x) for x in row[at + m : at + 2 * m]])
        return ChainRecord(it, ci, v, k, eta, phi)


class ChainWriter:
    """Streams records to a chain CSV as they are retained."""

    def __init__(self, fp: IO, n: int, m: int, header: str):
        self.fp = fp
        self.writer = csv.writer(fp, lineterminator="\n")
        print(header, file=fp)
        self.writer.writerow(ChainRecord.columns(n, m))

    def __call__(self, record: ChainRecord):
        self.writer.writerow(record.encode())


def read_chain(path: Path) -> list[ChainRecord]:
    rows = _rows(path)
    line, header = _header(path, rows)
    n = sum(1 for h in header if h.startswith("k_"))
    m = sum(1 for h in header if h.startswith("eta_"))
    if n < 1 or m < 1 or header != ChainRecord.columns(n, m):
        raise FormatError(path, line, "not a chain file")
    records = []
    for line, row in rows:
        if len(row) != len(header):
            raise FormatError(path, line, f"expected {len(header)} columns, got {len(row)}")
        try:
            records.append(ChainRecord.decode(row, n, m))
        except ValueError as e:
            raise FormatError(path, line, str(e)) from e
    return records


def _tuple_of_floats(value) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),)
    return tuple(float(x) for x in value)


def _is_assignment(line: str) -> bool:
    eq, colon = line.find("="), line.find(":")
    return eq > 0 and (colon < 0 or eq < colon)


@dataclass(frozen=True)
class RunConfig:
    """Every key a pipeline run reads, with its default.

    Config files hold one `key=value` per line; values follow YAML scalar
    rules, so `eta=[1.0, 2.0]` is a list and `fix_hyper=false` a bool.
    """

    # paths
    mdp_samples: str | None = None
    chronologies: str | None = None
    series: str | None = None
    mixture_out: str = "mixtures.json"
    chain_out: str = "chain.csv"
    grid_out: str = "grid.csv"
    summary_out: str = "grid_summary.csv"
    icecore_out: str = "icecore.csv"
    icecore_grid_out: str | None = None
    report_out: str = "coverage.csv"

    # volatility sampler
    iters: int = 100_000
    burnin: int = 20_000
    thin: int = 40
    eta: tuple[float, ...] = (2.66,)
    phi: tuple[float, ...] = (15.33,)
    fix_hyper: bool = True
    proposal_sd: float = 0.5
    adapt: bool = True
    scan: str = "fixed"
    chronology_mode: str = "sample"
    evolution: str = "nig"

    # priors of (eta, phi, mu, beta)
    a_eta: float = 0.01
    b_eta: float = 0.01
    a_phi: float = 0.01
    b_phi: float = 0.01
    tau_mu: float = 0.01
    tau_beta: float = 0.01

    # grid
    grid_start: float = 0.0
    grid_end: float = 14.0
    grid_step: float = 0.1

    # mixture fitting
    G: int = 5
    restarts: int = 10
    tol: float = 1e-8
    max_em_iter: int = 1000
    min_weight: float = 1e-3

    # ice core
    standardize: bool = True
    psi_form: str = "derived"
    icecore_iters: int = 100_000
    icecore_burnin: int = 20_000
    icecore_thin: int = 80

    # validation and fixtures
    scenario: str = "1"
    replicates: int = 200
    validate_iters: int = 3000
    validate_burnin: int = 1000
    validate_thin: int = 2
    importance_samples: int = 2000
    delta_reading: str = "precision"
    fixture_chronologies: int = 50

    seed: int | None = None
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eta", _tuple_of_floats(self.eta))
        object.__setattr__(self, "phi", _tuple_of_floats(self.phi))
        object.__setattr__(self, "scenario", str(self.scenario))
        if self.iters < 0 or self.burnin < 0 or self.thin < 1:
            raise ValueError("iters and burnin should be >= 0 and thin >= 1")
        if self.threads < 1:
            raise ValueError(f"threads should be >= 1, got {self.threads}")

    @staticmethod
    def keys() -> list[str]:
        return [f.name for f in dataclasses.fields(RunConfig)]

    @staticmethod
    def from_file(path: Path) -> "RunConfig":
        """Read a flat `key=value` file; blank lines and `#` comments are
        skipped. A YAML mapping of `key: value` pairs is read as well."""
        text = Path(path).read_text(encoding="utf-8")
        lines = [
            (number, line.strip())
            for number, line in enumerate(text.splitlines(), start=1)
            if line.strip() and not line.lstrip().startswith("#")
        ]
        if lines and all(_is_assignment(line) for _, line in lines):
            config = RunConfig()
            for number, line in lines:
                try:
                    config = config.assign(line)
                except (ValueError, TypeError, yaml.YAMLError) as e:
                    raise FormatError(path, number, str(e)) from e
            return config
        try:
            values = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise FormatError(path, mark.line + 1 if mark else 1, str(e)) from e
        if not isinstance(values, dict):
            raise FormatError(path, 1, "expected key=value lines")
        return RunConfig().update(values)

    def update(self, values: dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(values) - set(self.keys()))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return dataclasses.replace(self, **values)

    def assign(self, assignment: str) -> "RunConfig":
        key, sep, value = assignment.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {assignment!r}")
        return self.update({key.strip(): yaml.safe_load(value)})

    def digest(self) -> str:
        return summary64(
            ";".join(f"{k}={getattr(self, k)!r}" for k in self.keys() if k != "threads")
        )

    def header(self) -> str:
        return header_line(self.digest(), self.seed)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValueError("a seed is required (config key `seed` or --seed)")
        return int(self.seed)

    def per_dimension(self, values: tuple[float, ...], m: int) -> np.ndarray:
        if len(values) == 1:
            return np.full(m, values[0])
        if len(values) != m:
            raise ValueError(f"expected 1 or {m} values, got {len(values)}")
        return np.array(values)
