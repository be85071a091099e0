"""Weighted multi-source sampling with per-epoch subsampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class MixtureConfig:
    sources: tuple          # ((name, weight), ...)
    fractions: tuple = ()   # per-source epoch subsample fraction, default 1.0
    seed: int = 0

    def __post_init__(self):
        sources = tuple((str(n), float(w)) for n, w in self.sources)
        if not sources:
            raise ConfigError("mixture needs at least one source")
        if any(w <= 0 or not math.isfinite(w) for _, w in sources):
            raise ConfigError("mixture weights must be positive")
        fractions = tuple(float(f) for f in self.fractions) or (1.0,) * len(sources)
        if len(fractions) != len(sources):
            raise ConfigError("one fraction per source is required")
        if any(not 0 < f <= 1 for f in fractions):
            raise ConfigError("fractions must lie in (0, 1]")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "fractions", fractions)

    @property
    def weights(self) -> np.ndarray:
        w = np.array([w for _, w in self.sources])
        return w / w.sum()

    @property
    def names(self) -> list:
        return [n for n, _ in self.sources]


def epoch_rng(seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), int(stream)]))


def epoch_subsample(n: int, fraction: float, seed: int, epoch: int, source: int) -> np.ndarray:
    """floor(fraction * n) distinct indices drawn without replacement, sorted."""
    k = math.floor(fraction * n + 1e-9)
    if k < 1:
        raise ConfigError(f"source {source}: fraction {fraction} of {n} records leaves nothing to sample")
    if k == n:
        return np.arange(n)
    rng = epoch_rng(seed, epoch, 1000 + source)
    return np.sort(rng.choice(n, size=k, replace=False))


def mixing_sampler(lengths, config: MixtureConfig, epoch: int, num_draws: int | None = None):
    """Draw ``num_draws`` (source, index) pairs for one epoch.

    Each draw picks a source with probability equal to its normalized weight,
    then a uniform record from that source's subsample for this epoch. The
    whole sequence is a pure function of (config.seed, epoch). By default an
    epoch has as many draws as the subsamples hold records in total.
    """
    lengths = [int(n) for n in lengths]
    if len(lengths) != len(config.sources):
        raise ConfigError(f"{len(lengths)} source lengths for {len(config.sources)} configured sources")
    for (name, _), n in zip(config.sources, lengths):
        if n <= 0:
            raise ConfigError(f"source {name!r} is empty")
    pools = [epoch_subsample(n, f, config.seed, epoch, s)
             for s, (n, f) in enumerate(zip(lengths, config.fractions))]
    if num_draws is None:
        num_draws = sum(len(p) for p in pools)
    rng = epoch_rng(config.seed, epoch, 0)
    src = rng.choice(len(pools), size=num_draws, p=config.weights)
    u = rng.random(num_draws)
    sizes = np.array([len(p) for p in pools])
    pos = np.minimum((u * sizes[src]).astype(np.int64), sizes[src] - 1)
    return [(int(s), int(pools[s][i])) for s, i in zip(src, pos)]
