"""Counter-based splittable random streams.

A stream is a pure function of (key, counter): draw i of stream k is
``mix64(k + (i+1)*GAMMA)`` where ``mix64`` is the splitmix64 finalizer.
Random access by counter is what makes pause/resume of simulations and
order-independent parallel batches possible; key derivation is what makes
the streams splittable (per trajectory, per site, per sweep, ...).

The scalar path here must match the compiled stepping kernel bit for bit;
the vectorized path is used for environment generation.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF

_U64_GAMMA = np.uint64(GAMMA)
_U64_M1 = np.uint64(_M1)
_U64_M2 = np.uint64(_M2)

# 2^-53, so uniforms live on the 53-bit grid in [0, 1)
_INV53 = 1.0 / 9007199254740992.0


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2^64)."""
    z = x & _MASK
    z = (z ^ (z >> 30)) * _M1 & _MASK
    z = (z ^ (z >> 27)) * _M2 & _MASK
    return z ^ (z >> 31)


def mix64_array(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over a uint64 array."""
    z = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _U64_M1
        z ^= z >> np.uint64(27)
        z *= _U64_M2
        z ^= z >> np.uint64(31)
    return z


def derive_key(parent: int, *children: int) -> int:
    """Derive a child stream key; folds each child id into the parent key."""
    h = parent & _MASK
    for c in children:
        h = mix64((h ^ mix64((c + 1) * GAMMA & _MASK)) + GAMMA & _MASK)
    return h


def site_keys(key: int, sites: np.ndarray) -> np.ndarray:
    """Vectorized key derivation for an (n, d) int array of lattice sites."""
    sites = np.asarray(sites, dtype=np.int64)
    h = np.full(sites.shape[0], key & _MASK, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(sites.shape[1]):
            c = sites[:, j].astype(np.uint64)
            h = mix64_array((h ^ mix64_array((c + np.uint64(1)) * _U64_GAMMA)) + _U64_GAMMA)
    return h


def raw64(key: int, counter: int) -> int:
    """Draw `counter` (0-based) of stream `key` as a uint64."""
    return mix64((key + (counter + 1) * GAMMA) & _MASK)


def uniform(key: int, counter: int) -> float:
    """Draw `counter` of stream `key` as a float64 uniform in [0, 1)."""
    return (raw64(key, counter) >> 11) * _INV53


def uniform_block(keys: np.ndarray, counter0: int, n: int) -> np.ndarray:
    """Uniform draws counter0..counter0+n-1 for each key; shape (len(keys), n)."""
    keys = np.asarray(keys, dtype=np.uint64)
    idx = np.arange(counter0 + 1, counter0 + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = keys[:, None] + idx[None, :] * _U64_GAMMA
    out = mix64_array(state)
    return (out >> np.uint64(11)).astype(np.float64) * _INV53


class CounterStream:
    """Stateful view of one stream: remembers how many draws were consumed."""

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = key & _MASK
        self.counter = counter

    def next_uniform(self) -> float:
        u = uniform(self.key, self.counter)
        self.counter += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        out = uniform_block(np.array([self.key], dtype=np.uint64), self.counter, n)[0]
        self.counter += n
        return out

    def spawn(self, index: int) -> "CounterStream":
        return CounterStream(derive_key(self.key, index))
