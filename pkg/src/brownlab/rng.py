"""Reproducible random streams.

Two mechanisms share one seed space:

* ``RngStream`` hands out numpy Philox generators keyed by
  ``(master_seed, stream_id)``, for bulk Gaussian work.
* ``hash_uniform`` is a stateless counter hash (SplitMix64 finaliser) used
  wherever a random decision must depend only on *which* object is being
  sampled, not on batch order. Walks and durations in crossing trees use it,
  so a node's children are identical whether it is built alone or in a batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# salts separating the different uses of a node key
SALT_WALK = 0x5A17
SALT_DURATION = 0xD0A7
SALT_CHILD = 0xC41D
SALT_RETRY = 0x2E72


def mix64_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def derive_key(key, index, salt: int) -> np.ndarray:
    """Key of the ``index``-th sub-object of ``key``; vectorised over both."""
    key = np.asarray(key, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        inner = mix64((index + np.uint64(1)) * np.uint64(GOLDEN) ^ np.uint64(salt))
    return mix64(key ^ inner)


def hash_uniform(key, counter) -> np.ndarray:
    """Uniform in the open interval (0, 1), a pure function of (key, counter)."""
    key = np.asarray(key, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64(key + (counter + np.uint64(1)) * np.uint64(GOLDEN))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


# numba twins of the helpers above; tests pin them to the numpy versions

@numba.njit(cache=True, inline="always")
def nb_mix64(z):
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(0x94D049BB133111EB)
    return z ^ (z >> numba.uint64(31))


@numba.njit(cache=True, inline="always")
def nb_derive_key(key, index, salt):
    inner = nb_mix64((numba.uint64(index) + numba.uint64(1)) * numba.uint64(GOLDEN)
                     ^ numba.uint64(salt))
    return nb_mix64(numba.uint64(key) ^ inner)


@numba.njit(cache=True, inline="always")
def nb_uniform(key, counter):
    z = nb_mix64(numba.uint64(key) + (numba.uint64(counter) + numba.uint64(1))
                 * numba.uint64(GOLDEN))
    return (float(z >> numba.uint64(11)) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class RngStream:
    """Named random stream; equal (master_seed, stream_id) give equal draws."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.master_seed <= MASK64 and 0 <= self.stream_id <= MASK64):
            raise ValueError("seed and stream id must be unsigned 64-bit integers")

    @property
    def key(self) -> int:
        return mix64_int(mix64_int(self.master_seed) ^ mix64_int(self.stream_id * GOLDEN + 1))

    def substream(self, *labels) -> "RngStream":
        sid = self.stream_id
        for lab in labels:
            if isinstance(lab, str):
                lab = int.from_bytes(lab.encode()[:8].ljust(8, b"\0"), "little")
            sid = mix64_int(sid ^ mix64_int((int(lab) + 1) * GOLDEN))
        return RngStream(self.master_seed, sid)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.master_seed, self.stream_id]))


def as_stream(seed_or_stream) -> RngStream:
    if isinstance(seed_or_stream, RngStream):
        return seed_or_stream
    return RngStream(int(seed_or_stream))
