"""Process-wide caches of the expensive runs shared by several test modules."""

import functools
import math

from ricci_transport.cli import compute_atlas, compute_trajectory
from ricci_transport.config import initial_metric, preset
from ricci_transport.transport import KimMilmanMap

TWO_PI = 2.0 * math.pi


@functools.lru_cache(maxsize=None)
def config(name, eps=0.05, L=32, v=TWO_PI):
    return preset(name, v=v, eps=eps, L=L)


@functools.lru_cache(maxsize=None)
def metric0(name, eps=0.05, L=32, v=TWO_PI):
    return initial_metric(config(name, eps, L, v))


@functools.lru_cache(maxsize=None)
def trajectory(name, eps=0.05, L=32, v=TWO_PI):
    """Converged trajectory with potentials at every checkpoint."""
    return compute_trajectory(config(name, eps, L, v))


@functools.lru_cache(maxsize=None)
def kmap(name, eps=0.05, L=32, v=TWO_PI):
    return KimMilmanMap(trajectory(name, eps, L, v))


@functools.lru_cache(maxsize=None)
def atlas(name, eps=0.05, L=32, v=TWO_PI, threads=1):
    """Full default sample set: grid nodes plus the seeded 10k spiral."""
    return compute_atlas(trajectory(name, eps, L, v), config(name, eps, L, v), threads,
                         kmap=kmap(name, eps, L, v))
