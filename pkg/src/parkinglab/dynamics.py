"""Synchronous parking dynamics: the reference (dict-based) engine.

Every vertex starts as a car or a vacant spot.  At each integer time all
unparked cars take one step of their walks simultaneously; a car arriving
at a vacant spot parks there and the spot becomes occupied, with
simultaneous arrivals resolved in favor of the largest tie-break value.
Arrivals at occupied spots or at car-origin sites just keep driving.

This engine stores sparse state (active cars, touched sites) and is the
single source of truth for parking logs, certificates, and the pairing
replay; the numba engine in ``engine_fast`` is held to exact agreement
with it by the parity tests.

Parking-time conventions for the origin:

  * tau = number of timesteps the origin's car stays unparked (0 when no
    car starts there);  tau > t  iff the car is still unparked after the
    time-t move.
  * sigma = time at which the origin's spot is parked in (0 when no spot
    starts there).
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .realization import CAR, RealizationSource, Torus, TruncatedBox

Point = tuple[int, ...]

CAR_ORIGIN = 0
VACANT_SPOT = 1
OCCUPIED_SPOT = 2
OUTSIDE = 3


class TruncationError(ValueError):
    """Box too small for the requested horizon to be exact."""


@dataclass
class ParkEvent:
    car_origin: Point
    spot: Point
    time: int

    def to_json(self) -> str:
        return json.dumps(
            {"car_origin": list(self.car_origin), "spot": list(self.spot), "time": self.time}
        )


class WorldState:
    """Evolving configuration of one realization.

    Only initial-domain sites carry cars or spots.  On a truncated box,
    cars may wander outside; out-of-box sites never hold spots, so they
    are traversed without parking.
    """

    def __init__(self, src: RealizationSource):
        self.src = src
        self.time = 0
        self._status: dict[Point, int] = {}
        self.unparked: dict[Point, Point] = {}
        self.visit_count: Counter[Point] = Counter()
        self.parking_log: list[ParkEvent] = []
        self._init_cars()

    def _init_cars(self):
        for v in domain_sites(self.src):
            if self.src.is_car(v):
                self.unparked[v] = v

    def site_status(self, v: Point) -> int:
        dom = self.src.domain
        if not dom.contains(v):
            return OUTSIDE
        v = dom.canonical(v)
        cached = self._status.get(v)
        if cached is not None:
            return cached
        status = CAR_ORIGIN if self.src.is_car(v) else VACANT_SPOT
        self._status[v] = status
        return status

    @property
    def parked_count(self) -> int:
        return len(self.parking_log)

    def check_conservation(self, initial_cars: int):
        occupied = sum(1 for s in self._status.values() if s == OCCUPIED_SPOT)
        assert occupied == self.parked_count
        assert self.parked_count + len(self.unparked) == initial_cars


def domain_sites(src: RealizationSource) -> Iterable[Point]:
    dom = src.domain
    if isinstance(dom, Torus):
        rng = range(dom.side)
    else:
        rng = range(-dom.radius, dom.radius + 1)
    return _product(rng, src.d)


def _product(rng, d):
    if d == 1:
        for x in rng:
            yield (x,)
    else:
        for x in rng:
            for rest in _product(rng, d - 1):
                yield (x, *rest)


def init_world(src: RealizationSource) -> WorldState:
    return WorldState(src)


def step(world: WorldState) -> WorldState:
    """Advance one timestep in place (returned for chaining).

    Move order: all cars move, then all parkings of the new time are
    resolved, then time advances.  The tie rule is therefore well defined
    per (spot, time): among simultaneous arrivals at a vacant spot the
    car with the largest tie-break word parks (lexicographically largest
    origin on the zero-probability event of equal words).
    """
    src = world.src
    dom = src.domain
    t = world.time + 1

    arrivals: dict[Point, list[Point]] = defaultdict(list)
    for origin, pos in world.unparked.items():
        inc = src.walk_increment(origin, t)
        new = dom.canonical(tuple(a + b for a, b in zip(pos, inc)))
        world.unparked[origin] = new
        world.visit_count[new] += 1
        arrivals[new].append(origin)

    for site, arrivers in arrivals.items():
        if world.site_status(site) != VACANT_SPOT:
            continue
        winner = max(arrivers, key=lambda o: (src.tiebreak_u64(o, t), o))
        world._status[site] = OCCUPIED_SPOT
        del world.unparked[winner]
        world.parking_log.append(ParkEvent(winner, site, t))

    world.time = t
    return world


@dataclass
class ParkingOutcome:
    """Censored origin observables of one realization.

    Values t_max + 1 encode survival past the horizon.  The trajectory
    covers times 0..min(tau, t_max) of the origin car (empty when no car
    starts at the origin).
    """

    t_max: int
    tau_censored: int
    sigma_censored: int
    trajectory: tuple[Point, ...] = field(default_factory=tuple)


def _require_exact(src: RealizationSource, t_max: int, approximate: bool):
    dom = src.domain
    if isinstance(dom, TruncatedBox) and dom.radius < 2 * t_max and not approximate:
        raise TruncationError(
            f"box radius {dom.radius} < 2*t_max = {2 * t_max}: outcome would depend on "
            "missing initial data (pass approximate=True to override)"
        )


def run_outcome(src: RealizationSource, t_max: int, approximate: bool = False) -> ParkingOutcome:
    """Run the process and report censored tau and sigma for the origin."""
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    _require_exact(src, t_max, approximate)
    origin: Point = tuple(0 for _ in range(src.d))
    world = init_world(src)
    has_car = origin in world.unparked
    watch_spot = not has_car  # every non-car site in the domain starts as a spot

    tau = 0 if not has_car else t_max + 1
    sigma = 0 if not watch_spot else t_max + 1
    trajectory: list[Point] = [origin] if has_car else []

    for _ in range(t_max):
        step(world)
        t = world.time
        if has_car and tau > t_max:
            if origin in world.unparked:
                trajectory.append(world.unparked[origin])
            else:
                tau = next(ev.time for ev in world.parking_log if ev.car_origin == origin)
                trajectory.append(next(ev.spot for ev in world.parking_log if ev.car_origin == origin))
        if watch_spot and sigma > t_max and world.site_status(origin) == OCCUPIED_SPOT:
            sigma = next(ev.time for ev in world.parking_log if ev.spot == origin)
        tau_done = (not has_car) or tau <= t_max
        sigma_done = (not watch_spot) or sigma <= t_max
        if tau_done and sigma_done:
            break

    return ParkingOutcome(
        t_max=t_max,
        tau_censored=tau,
        sigma_censored=sigma,
        trajectory=tuple(trajectory),
    )


def count_visits(src: RealizationSource, t: int, approximate: bool = False) -> int:
    """Total arrivals at the origin through time t (ties all counted)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    _require_exact(src, t, approximate)
    origin: Point = tuple(0 for _ in range(src.d))
    world = init_world(src)
    for _ in range(t):
        step(world)
    return world.visit_count[origin]


def export_parking_log(world: WorldState, path) -> int:
    """Write the parking log as JSON lines {car_origin, spot, time}."""
    n = 0
    with open(path, "w") as fh:
        for ev in world.parking_log:
            fh.write(ev.to_json() + "\n")
            n += 1
    return n
