"""Seeded random streams.

Every random draw in the package goes through a ``numpy.random.Generator``
backed by the PCG64 bit generator (PCG XSL-RR 128/64), seeded through
``SeedSequence([seed, *stream_ids])``. Uniform reals are
``(next_uint64 >> 11) * 2**-53`` (``Generator.random``). Gaussian draws use
Box-Muller on consecutive uniform pairs ``(u1, u2)``::

    r  = sqrt(-2 * log(1 - u1))
    z0 = r * cos(2 * pi * u2)
    z1 = r * sin(2 * pi * u2)

emitted in the order ``z0, z1, z0', z1', ...``. ``numpy``'s own
``standard_normal`` (ziggurat) is never used, so the normal stream is a plain
function of the uniform stream.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "uniform", "normal"]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``.

    Distinct stream ids give statistically independent generators, so batch
    work keyed by ``(seed, index)`` does not depend on evaluation order.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seed and stream ids must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(int(seed_or_rng))


def uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform reals in [0, 1) with 53 random bits each."""
    return rng.random(size)


def normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws via Box-Muller (see module docstring)."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = rng.random(2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n].reshape(shape)
