"""bclim

Bayesian inference for latent multivariate time series under a
Normal-Inverse-Gaussian process prior, with marginal data posteriors and
uncertain chronologies.
"""

from importlib.metadata import version as _version, PackageNotFoundError

import numpy as np

try:
    __version__ = _version("bclim")
except PackageNotFoundError:
    __version__ = "0.1.0"


def rng(seed: int, *stream: int) -> np.random.Generator:
    """A generator for a (seed, substream...) pair.

    Every random stream in bclim is named this way, so that replicates,
    layers, and retained iterations can be reproduced independently.
    """
    if seed is None:
        raise ValueError("a seed is required; bclim never seeds from the clock")
    return np.random.default_rng([int(seed), *map(int, stream)])
