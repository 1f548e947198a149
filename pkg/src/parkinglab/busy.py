"""Busy subgraphs: counting bound, lattice-animal enumeration, certificates.

A finite connected vertex set is *busy* when it initially carries at
least as many cars as spots.  If the origin's car is still unparked at
time t, a busy connected set containing its trajectory exists inside the
l1-ball of radius 2t, which is what turns the per-subgraph probability
bound (2 sqrt(p(1-p)))^j plus the exit-time machinery into a tail bound
via a union over lattice animals.  This module provides each ingredient
exactly, plus an extractor that builds a certificate from a realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .realization import CAR, RealizationSource, TruncatedBox
from .spectral import Point, SubgraphH, exit_survival, unit_steps


class EnumerationBudgetError(RuntimeError):
    """Raised when the animal enumeration exceeds its output budget."""


class CertificateInvariantError(RuntimeError):
    """A constructed certificate violated one of its invariants (a bug)."""


class PreconditionError(RuntimeError):
    """The realization does not satisfy the operation's precondition."""


def is_busy(h: SubgraphH, src: RealizationSource) -> bool:
    """True iff h carries at least as many initial cars as spots.

    Requires a connected subgraph (the notion is defined for those).
    """
    if not h.is_connected:
        raise ValueError("busy-ness is defined for connected subgraphs")
    cars = sum(1 for v in h.vertices if src.site_label(v) == CAR)
    return cars >= h.n - cars


def busy_probability_bound(p: float, j: int) -> float:
    """(2 sqrt(p(1-p)))^j, valid for p < 1/2 and a fixed j-vertex subgraph."""
    if not (0.0 <= p < 0.5):
        raise ValueError(f"bound only asserted for 0 <= p < 1/2, got {p}")
    if j < 1:
        raise ValueError(f"j must be >= 1, got {j}")
    return (2.0 * math.sqrt(p * (1.0 - p))) ** j


def enumerate_animals(d: int, j_max: int, budget: int = 10_000_000):
    """Yield every connected vertex set of size <= j_max containing 0, once.

    Canonical-order growth (untried-set recursion): each animal is
    produced by exactly one sequence of cell additions, so no
    deduplication storage is needed and memory stays linear in the
    recursion depth.  Raises EnumerationBudgetError past `budget` yields.
    """
    if d < 1 or j_max < 1:
        raise ValueError("d and j_max must be >= 1")
    origin: Point = tuple(0 for _ in range(d))
    steps = unit_steps(d)
    yielded = 0

    def neighbors(v: Point):
        for s in steps:
            yield tuple(a + b for a, b in zip(v, s))

    considered: set[Point] = {origin}
    frontier0 = []
    for w in neighbors(origin):
        considered.add(w)
        frontier0.append(w)

    current: list[Point] = [origin]

    def rec(frontier: list[Point]):
        nonlocal yielded
        yielded += 1
        if yielded > budget:
            raise EnumerationBudgetError(f"enumeration exceeded budget of {budget} animals")
        yield SubgraphH(tuple(current))
        if len(current) == j_max:
            return
        for i, u in enumerate(frontier):
            current.append(u)
            fresh = []
            for w in neighbors(u):
                if w not in considered:
                    considered.add(w)
                    fresh.append(w)
            yield from rec(frontier[i + 1 :] + fresh)
            for w in fresh:
                considered.remove(w)
            current.pop()

    yield from rec(frontier0)


def enumerate_animals_naive(d: int, j_max: int):
    """Independent re-enumeration by breadth-first growth with dedup.

    Quadratic in output size; used only to cross-validate the canonical
    enumerator on small sizes.
    """
    origin: Point = tuple(0 for _ in range(d))
    steps = unit_steps(d)
    level = {frozenset([origin])}
    for size in range(1, j_max + 1):
        for s in sorted(level, key=sorted):
            yield SubgraphH(tuple(s))
        if size == j_max:
            break
        nxt = set()
        for s in level:
            for v in s:
                for st in steps:
                    w = tuple(a + b for a, b in zip(v, st))
                    if w not in s:
                        nxt.add(s | {w})
        level = nxt


def animal_counts(d: int, j_max: int, naive: bool = False) -> dict[int, int]:
    """Number of animals per size, from either enumerator."""
    counts: dict[int, int] = {j: 0 for j in range(1, j_max + 1)}
    gen = enumerate_animals_naive(d, j_max) if naive else enumerate_animals(d, j_max)
    for h in gen:
        counts[h.n] += 1
    return counts


@dataclass
class BusyCertificate:
    h: SubgraphH
    car_count: int
    spot_count: int
    trajectory_contained: bool

    @property
    def is_busy(self) -> bool:
        return self.car_count >= self.spot_count


def extract_certificate(src: RealizationSource, t: int) -> BusyCertificate:
    """Build a busy certificate from a realization with tau > t.

    Closure construction: start from the origin car's trajectory through
    time t; whenever the set contains a spot that was parked by time t,
    add the full trajectory (origin through parking position) of the car
    that parked it; repeat to a fixpoint.  The result is connected, busy,
    contains the trajectory, and stays in the l1-ball of radius 2t; all
    four are verified and any failure raises CertificateInvariantError.
    """
    from .dynamics import init_world, step

    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if not isinstance(src.domain, TruncatedBox) or src.domain.radius < 2 * t:
        raise ValueError("certificate extraction needs a truncated box of radius >= 2t")
    origin: Point = tuple(0 for _ in range(src.d))
    if not src.is_car(origin):
        raise PreconditionError("no car at the origin, so tau = 0 <= t")

    world = init_world(src)
    for _ in range(t):
        step(world)
    if origin not in world.unparked:
        raise PreconditionError(f"tau <= {t} on this realization")

    parked_at = {ev.spot: (ev.car_origin, ev.time) for ev in world.parking_log}

    def trajectory(v: Point, upto: int) -> list[Point]:
        pos = list(v)
        out = [tuple(pos)]
        for k in range(1, upto + 1):
            inc = src.walk_increment(v, k)
            pos = [a + b for a, b in zip(pos, inc)]
            out.append(tuple(pos))
        return out

    h_set: set[Point] = set(trajectory(origin, t))
    queue = [v for v in h_set if v in parked_at]
    pulled: set[Point] = set(queue)
    while queue:
        spot = queue.pop()
        car_origin, t_park = parked_at[spot]
        for v in trajectory(car_origin, t_park):
            if v not in h_set:
                h_set.add(v)
                if v in parked_at and v not in pulled:
                    pulled.add(v)
                    queue.append(v)

    # Under tau > t every spot the closure can reach was parked by time t;
    # a vacant spot on any included trajectory would contradict the rules.
    for v in h_set:
        if not src.is_car(v) and v not in parked_at:
            raise CertificateInvariantError(f"vacant spot {v} inside certificate set")

    h = SubgraphH(tuple(h_set))
    cars = sum(1 for v in h.vertices if src.is_car(v))
    cert = BusyCertificate(
        h=h,
        car_count=cars,
        spot_count=h.n - cars,
        trajectory_contained=h_set.issuperset(trajectory(origin, t)),
    )
    if not cert.is_busy:
        raise CertificateInvariantError("certificate set is not busy")
    if not h.is_connected:
        raise CertificateInvariantError("certificate set is not connected")
    if max(sum(abs(c) for c in v) for v in h.vertices) > 2 * t:
        raise CertificateInvariantError("certificate set leaves the l1-ball of radius 2t")
    if not cert.trajectory_contained:
        raise CertificateInvariantError("certificate set misses the origin trajectory")
    return cert


@dataclass
class UnionBoundRow:
    j: int
    count: int
    bound_term: float
    survival_max: float
    contribution: float


@dataclass
class UnionBoundResult:
    """Exact enumerated part of the tail union bound, plus the analytic tail.

    enumerated = sum over sizes 2..j_cap and all animals H of that size of
    (2 sqrt(p(1-p)))^|H| * P(exit time of H > t).  Size 1 is excluded
    because a single-vertex set is exited at the first step.  The part
    beyond j_cap is bounded by the geometric series with ratio
    4 d e sqrt(p(1-p)), reported separately; when that ratio is >= 1 the
    tail bound is infinite and `tail_diverges` is set.
    """

    p: float
    d: int
    t: int
    j_cap: int
    enumerated: float
    rows: list[UnionBoundRow]
    tail_ratio: float
    tail_bound: float
    tail_diverges: bool


def union_bound_rhs(p: float, d: int, t: int, j_cap: int, budget: int = 2_000_000) -> UnionBoundResult:
    if not (0.0 <= p < 0.5):
        raise ValueError(f"requires p < 1/2, got {p}")
    if j_cap < 2:
        raise ValueError("j_cap must be >= 2")
    rows: dict[int, UnionBoundRow] = {
        j: UnionBoundRow(j, 0, busy_probability_bound(p, j), 0.0, 0.0) for j in range(2, j_cap + 1)
    }
    total = 0.0
    for h in enumerate_animals(d, j_cap, budget=budget):
        if h.n < 2:
            continue
        row = rows[h.n]
        surv = exit_survival(h, t)
        row.count += 1
        row.survival_max = max(row.survival_max, surv)
        row.contribution += row.bound_term * surv
        total += row.bound_term * surv
    ratio = 4.0 * d * math.e * math.sqrt(p * (1.0 - p))
    if ratio >= 1.0:
        tail, diverges = math.inf, p > 0
    else:
        tail, diverges = ratio ** (j_cap + 1) / (1.0 - ratio), False
    return UnionBoundResult(
        p=p,
        d=d,
        t=t,
        j_cap=j_cap,
        enumerated=total,
        rows=sorted(rows.values(), key=lambda r: r.j),
        tail_ratio=ratio,
        tail_bound=tail,
        tail_diverges=diverges,
    )
