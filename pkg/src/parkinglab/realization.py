"""Deterministic randomness source for parking-model realizations.

One realization of the model consists of, for every lattice vertex v:

  * an initial site label (car with probability p, vacant spot otherwise),
  * a full simple-random-walk increment sequence (the path the car placed
    at v would follow),
  * a sequence of tie-break uniforms, indexed by time, used when several
    cars arrive at the same vacant spot simultaneously.

All three streams are produced by a counter-based construction: each value
is a stateless 64-bit hash of (master seed, stream kind, vertex
coordinates, index).  Repeated queries therefore return identical values
no matter the query order, process, or thread count, which is what makes
parallel replication and the staged re-simulation used by the fast engine
exact rather than approximate.

The same hash is implemented three times in this package (scalar Python
here, vectorized numpy below, nopython numba in ``engine_fast``); the
parity of the three is covered by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

# Distinct salts keep the three per-vertex streams independent of each other.
SALT_LABEL = 0x53D1F2A9B4E6C807
SALT_WALK = 0xA1E6B2C44D903577
SALT_TIE = 0x6C62272E07BB0142


def mix64(z: int) -> int:
    """64-bit finalizer (splitmix64): a bijection with full avalanche."""
    z &= MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK64
    z ^= z >> 31
    return z


def chain(h: int, w: int) -> int:
    """Absorb one 64-bit word into a running hash state."""
    return mix64(h ^ (w & MASK64))


# Vectorized copy of the same construction (numpy uint64, wrapping mul).
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _C1
    z ^= z >> np.uint64(27)
    z *= _C2
    z ^= z >> np.uint64(31)
    return z


def chain_np(h: np.ndarray | int, w: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.uint64)
    w = np.asarray(w).astype(np.int64).view(np.uint64)
    return mix64_np(h ^ w)


class DomainError(ValueError):
    """Raised when a vertex lies outside the configured domain."""


def car_threshold(p: float) -> tuple[int, bool]:
    """(threshold, all_cars): a site is a car iff hash < threshold or all_cars."""
    return min(int(p * 2.0**64), MASK64), p >= 1.0


@dataclass(frozen=True)
class TruncatedBox:
    """Initial data restricted to the box [-radius, radius]^d.

    Cars may walk outside the box; sites out there carry neither cars nor
    spots, so nothing ever parks outside.  With radius >= 2*t the outcome
    at the origin through time t matches the infinite lattice exactly
    (information travels at speed one).
    """

    radius: int

    def __post_init__(self):
        if not (1 <= self.radius <= 1 << 20):
            raise ValueError(f"box radius must be in [1, 2^20], got {self.radius}")

    def contains(self, v: tuple[int, ...]) -> bool:
        return all(abs(c) <= self.radius for c in v)

    def canonical(self, v: tuple[int, ...]) -> tuple[int, ...]:
        return v


@dataclass(frozen=True)
class Torus:
    """Periodic domain of side L; coordinates are reduced mod L."""

    side: int

    def __post_init__(self):
        if not (3 <= self.side <= 1 << 20):
            raise ValueError(f"torus side must be in [3, 2^20], got {self.side}")

    def contains(self, v: tuple[int, ...]) -> bool:
        return True

    def canonical(self, v: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(c % self.side for c in v)


Domain = TruncatedBox | Torus


@dataclass(frozen=True)
class ModelParams:
    """Full parameterization of one experiment's probability space."""

    d: int
    p: float
    seed: int
    domain: Domain

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"car density must be in [0, 1], got {self.p}")
        if not (0 <= self.seed <= MASK64):
            raise ValueError("seed must fit in 64 bits")


CAR = "car"
SPOT = "spot"


class RealizationSource:
    """Pure-function view of one sample of the model's probability space.

    Immutable after construction; safe to share across any number of
    workers.  All queries are O(coordinates) with no stored state.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.d = params.d
        self.domain = params.domain
        seed = params.seed & MASK64
        self._h_label = mix64(seed ^ SALT_LABEL)
        self._h_walk = mix64(seed ^ SALT_WALK)
        self._h_tie = mix64(seed ^ SALT_TIE)
        # Car iff hash < threshold; p == 1 handled by flag so it is exact.
        self._car_threshold, self._all_cars = car_threshold(params.p)

    # -- site labels ---------------------------------------------------

    def _label_u64(self, v: tuple[int, ...]) -> int:
        h = self._h_label
        for c in v:
            h = chain(h, c)
        return h

    def is_car(self, v: tuple[int, ...]) -> bool:
        if not self.domain.contains(v):
            raise DomainError(f"vertex {v} outside domain {self.domain}")
        v = self.domain.canonical(v)
        if self._all_cars:
            return True
        return self._label_u64(v) < self._car_threshold

    def site_label(self, v: tuple[int, ...]) -> str:
        return CAR if self.is_car(v) else SPOT

    # -- walk increments -----------------------------------------------

    def walk_increment(self, v: tuple[int, ...], k: int) -> tuple[int, ...]:
        """Unit step taken at time k (k >= 1) by the walk attached to v."""
        if k < 1:
            raise ValueError(f"step index must be >= 1, got {k}")
        v = self.domain.canonical(v)
        h = self._h_walk
        for c in v:
            h = chain(h, c)
        r = chain(h, k) % (2 * self.d)
        axis, sign = r >> 1, 1 - 2 * (r & 1)
        return tuple(sign if i == axis else 0 for i in range(self.d))

    def walk_position(self, v: tuple[int, ...], k: int) -> tuple[int, ...]:
        """Walk position after k steps; equals v at k = 0."""
        if k < 0:
            raise ValueError(f"step count must be >= 0, got {k}")
        pos = list(self.domain.canonical(v))
        for step in range(1, k + 1):
            inc = self.walk_increment(v, step)
            for i in range(self.d):
                pos[i] += inc[i]
        return tuple(self.domain.canonical(tuple(pos)))

    # -- tie-break uniforms ----------------------------------------------

    def tiebreak_u64(self, v: tuple[int, ...], s: int) -> int:
        """Raw 64-bit tie-break word for the car of origin v at time s.

        Ties are keyed by (origin vertex of the arriving car, arrival
        time); distinct cars have distinct origins so the keys never
        collide.  Equal 64-bit values (probability ~2^-64 per pair) are
        resolved by lexicographic origin order in the dynamics.
        """
        if s < 1:
            raise ValueError(f"time index must be >= 1, got {s}")
        v = self.domain.canonical(v)
        h = self._h_tie
        for c in v:
            h = chain(h, c)
        return chain(h, s)

    def tiebreak_value(self, v: tuple[int, ...], s: int) -> float:
        return self.tiebreak_u64(v, s) / 2.0**64

    # -- vectorized views (used by tests and the estimators) -------------

    def label_u64_grid(self, coords: np.ndarray) -> np.ndarray:
        """Label hashes for an (n, d) array of canonical coordinates."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim == 1:
            coords = coords[:, None]
        h = np.full(coords.shape[0], self._h_label, dtype=np.uint64)
        for i in range(coords.shape[1]):
            h = chain_np(h, coords[:, i])
        return h

    def is_car_grid(self, coords: np.ndarray) -> np.ndarray:
        if self._all_cars:
            coords = np.asarray(coords)
            n = coords.shape[0] if coords.ndim > 0 else 1
            return np.ones(n, dtype=bool)
        return self.label_u64_grid(coords) < np.uint64(self._car_threshold)
