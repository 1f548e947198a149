"""d = 1 supercritical machinery: surplus ledger, car labels, pairing.

For p > 1/2 the origin's spot can survive for a long time only if the
surplus cars that must eventually reach it are all delayed.  The objects
here make that argument's combinatorics executable:

  * the ledger D(j) = (cars minus spots among sites 0..j);
  * labeled surplus cars c_1, c_2, ...: scanning rightward, c_r is the
    first car after c_{r-1} from whose position the ledger never drops
    below r-1;
  * a pairing of the remaining cars to spots strictly to their right
    within the blocks between consecutive labels;
  * a replay of the parking process that maintains the pairing (re-pair
    on thefts, transfer labels when a label-holder parks into a paired
    spot) and audits the invariants: injectivity, partner spots strictly
    to the right of their car's current position, and strictly-leftward
    label movement on every transfer.

The strictly-after-previous-label scan keeps label positions distinct
(the raw "first j with D(k) >= r-1 for all k >= j" rule can repeat a
position: with all sites cars it puts c_1 and c_2 both at 0); it also
makes the within-block pairing provably complete, so only cars left of
c_1 stay unpaired.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import init_world, step
from .realization import MASK64, ModelParams, RealizationSource, TruncatedBox


class SupercriticalError(ValueError):
    pass


class PairingInvariantError(RuntimeError):
    """An evolve-time bookkeeping invariant failed (a bug, not noise)."""


@dataclass
class Ledger:
    """Prefix car-minus-spot counts D(0..W) for one realization."""

    window: int
    d_counts: np.ndarray  # D(j) for j in [0, W]

    def increments(self) -> np.ndarray:
        return np.diff(np.concatenate(([0], self.d_counts)))

    def is_car(self, j: int) -> bool:
        prev = self.d_counts[j - 1] if j > 0 else 0
        return bool(self.d_counts[j] - prev == 1)


def build_ledger(src: RealizationSource, w: int) -> Ledger:
    if src.d != 1:
        raise SupercriticalError("the ledger construction is one-dimensional")
    if w < 0:
        raise ValueError("window must be >= 0")
    labels = src.is_car_grid(np.arange(w + 1, dtype=np.int64))
    steps = np.where(labels, 1, -1)
    return Ledger(window=w, d_counts=np.cumsum(steps))


@dataclass
class LabeledCars:
    """Positions of the labeled surplus cars c_1 .. c_r on [0, W].

    A label is marked confident when the ledger ends at least `margin`
    above its threshold, so an excursion below the threshold beyond the
    window is a large-deviation event.
    """

    window: int
    positions: tuple[int, ...]
    confident: tuple[bool, ...]
    margin: int


def label_cars(ledger: Ledger, r_max: int, margin: int | None = None) -> LabeledCars:
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    w = ledger.window
    if margin is None:
        margin = math.ceil(3 * math.sqrt(max(w, 1)))
    d = ledger.d_counts
    suffix_min = np.minimum.accumulate(d[::-1])[::-1]
    positions: list[int] = []
    confident: list[bool] = []
    r = 1
    for j in range(w + 1):
        if r > r_max:
            break
        if ledger.is_car(j) and suffix_min[j] >= r - 1:
            positions.append(j)
            confident.append(bool(d[w] >= r - 1 + margin))
            r += 1
    return LabeledCars(
        window=w, positions=tuple(positions), confident=tuple(confident), margin=margin
    )


@dataclass
class RepairEvent:
    time: int
    kind: str  # "transfer" | "repair" | "theft" | "release" | "fulfill" | "retire"
    car: int
    spot: int
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "kind": self.kind, "car": self.car, "spot": self.spot,
             **self.detail}
        )


@dataclass
class PairingState:
    """Injective car -> spot map with partner spots to the right."""

    pairing: dict[int, int]
    unpaired_prefix: tuple[int, ...]
    repair_log: list[RepairEvent] = field(default_factory=list)

    def check_injective(self):
        if len(set(self.pairing.values())) != len(self.pairing):
            raise PairingInvariantError("pairing is not injective")


def pair_cars_spots(src: RealizationSource, labels: LabeledCars) -> PairingState:
    """Pair cars to spots within the open blocks between consecutive labels.

    Scanning each block left to right, a car is paired to the first
    still-unpaired spot to its right inside the block.  Cars left of the
    first label are not paired (they are the sketch's unpaired prefix);
    the within-block scan never leaves a car unmatched, which is audited.
    """
    if src.d != 1:
        raise SupercriticalError("pairing is one-dimensional")
    pos = labels.positions
    pairing: dict[int, int] = {}
    prefix = [j for j in range(0, pos[0] if pos else labels.window + 1)
              if src.is_car((j,))]
    for a, b in zip(pos, pos[1:]):
        waiting: list[int] = []
        for j in range(a + 1, b):
            if src.is_car((j,)):
                waiting.append(j)
            elif waiting:
                pairing[waiting.pop(0)] = j
        if waiting:
            raise PairingInvariantError(
                f"block ({a}, {b}) left cars {waiting} without rightward partners"
            )
    state = PairingState(pairing=pairing, unpaired_prefix=tuple(prefix))
    state.check_injective()
    for car, spot in pairing.items():
        if spot <= car:
            raise PairingInvariantError(f"partner spot {spot} not right of car {car}")
    return state


@dataclass
class EvolveAudit:
    transfers: int = 0
    repairs: int = 0
    thefts: int = 0
    releases: int = 0
    fulfillments: int = 0
    retirements: int = 0
    coincidences: int = 0
    tie_standstills: int = 0
    leftward_violations: int = 0


@dataclass
class EvolveResult:
    pairing: PairingState
    trajectories: dict[int, list[int]]  # label index r -> holder position per time
    holder_origin: dict[int, int]       # label index r -> current holder's origin
    retired: dict[int, int]             # label index r -> retirement time
    audit: EvolveAudit


def evolve_with_repairing(
    src: RealizationSource, labels: LabeledCars, pairing: PairingState, t: int
) -> EvolveResult:
    """Replay the parking process, maintaining pairing and label identity.

    Driven by the reference engine's parking log (one source of truth per
    realization).  Park events within a timestep are processed in
    tie-break order; any event touching a car or spot whose pairing was
    already modified in the same timestep is logged as a coincidence.

    Rules per park event (car c into spot s at time u):
      * c holds a label and s is paired to c': the label transfers to c'
        (to the left: in d = 1 an alive pair's car has never stepped on
        its vacant partner spot while it was vacant, so it sits left of
        it; equality happens exactly when c' lost the tie for s this very
        timestep and is standing on it, which is logged as a tie
        standstill rather than a violation);
      * c holds a label and s is unpaired: the label retires;
      * c is paired and s is its own partner: the pair is fulfilled;
      * c is paired and s is paired to c': c' is re-paired with c's
        former partner (a theft plus a repair);
      * c is paired and s is unpaired: c's former partner is released;
      * c is unpaired and s is paired to c': c' loses its partner.
    """
    if src.d != 1:
        raise SupercriticalError("the replay is one-dimensional")
    if not isinstance(src.domain, TruncatedBox) or src.domain.radius < 2 * t:
        raise SupercriticalError("replay needs a truncated box of radius >= 2t")
    if src.domain.radius < labels.window:
        raise SupercriticalError("window exceeds the realization domain")

    pair = dict(pairing.pairing)
    inv = {s: c for c, s in pair.items()}
    log = list(pairing.repair_log)
    audit = EvolveAudit()

    holder = {r: labels.positions[r] for r in range(len(labels.positions))}
    label_of = {pos: r for r, pos in holder.items()}
    holder_pos = {r: labels.positions[r] for r in holder}
    retired: dict[int, int] = {}
    trajectories = {r: [labels.positions[r]] for r in holder}

    world = init_world(src)
    for u in range(1, t + 1):
        prev_count = len(world.parking_log)
        step(world)
        for r, origin in holder.items():
            if r not in retired:
                inc = src.walk_increment((origin,), u)
                holder_pos[r] += inc[0]
        events = world.parking_log[prev_count:]
        events = sorted(
            events,
            key=lambda ev: (src.tiebreak_u64(ev.car_origin, u), ev.car_origin),
            reverse=True,
        )
        touched: set[int] = set()
        for ev in events:
            c = ev.car_origin[0]
            s = ev.spot[0]
            if c in touched or s in touched:
                audit.coincidences += 1
            touched.update((c, s))
            r = label_of.get(c)
            if r is not None:
                if s in inv:
                    c_new = inv.pop(s)
                    del pair[c_new]
                    new_pos = _walk_pos(src, c_new, u)
                    if new_pos > holder_pos[r]:
                        audit.leftward_violations += 1
                    elif new_pos == holder_pos[r]:
                        # the new holder lost the tie for s this timestep
                        # and is standing on it
                        audit.tie_standstills += 1
                    log.append(
                        RepairEvent(u, "transfer", c, s,
                                    {"label": r + 1, "new_holder": c_new,
                                     "from_pos": holder_pos[r], "to_pos": new_pos})
                    )
                    touched.add(c_new)
                    del label_of[c]
                    label_of[c_new] = r
                    holder[r] = c_new
                    holder_pos[r] = new_pos
                    audit.transfers += 1
                else:
                    log.append(RepairEvent(u, "retire", c, s, {"label": r + 1}))
                    retired[r] = u
                    del label_of[c]
                    audit.retirements += 1
            elif c in pair:
                s_own = pair.pop(c)
                del inv[s_own]
                if s_own == s:
                    log.append(RepairEvent(u, "fulfill", c, s))
                    audit.fulfillments += 1
                elif s in inv:
                    c_other = inv.pop(s)
                    del pair[c_other]
                    pair[c_other] = s_own
                    inv[s_own] = c_other
                    touched.update((c_other, s_own))
                    other_pos = _walk_pos(src, c_other, u)
                    if not other_pos < s_own:
                        raise PairingInvariantError(
                            f"re-paired car {c_other} at {other_pos} not left of spot {s_own}"
                        )
                    log.append(
                        RepairEvent(u, "repair", c, s,
                                    {"repaired_car": c_other, "new_spot": s_own})
                    )
                    audit.thefts += 1
                    audit.repairs += 1
                else:
                    touched.add(s_own)
                    log.append(RepairEvent(u, "release", c, s, {"released_spot": s_own}))
                    audit.releases += 1
            else:
                if s in inv:
                    c_other = inv.pop(s)
                    del pair[c_other]
                    touched.add(c_other)
                    log.append(RepairEvent(u, "theft", c, s, {"robbed_car": c_other}))
                    audit.thefts += 1
            if len(set(pair.values())) != len(pair):
                raise PairingInvariantError("pairing injectivity broken during replay")
        for r in holder:
            if r not in retired:
                trajectories[r].append(holder_pos[r])
            elif retired[r] == u:
                trajectories[r].append(holder_pos[r])

    final = PairingState(
        pairing=pair, unpaired_prefix=pairing.unpaired_prefix, repair_log=log
    )
    final.check_injective()
    return EvolveResult(
        pairing=final,
        trajectories=trajectories,
        holder_origin={r: o for r, o in holder.items()},
        retired=retired,
        audit=audit,
    )


def _walk_pos(src: RealizationSource, origin: int, k: int) -> int:
    return src.walk_position((origin,), k)[0]


def tail_curve_sigma(p: float, t_grid, reps: int, seed: int):
    """Survival curve of the origin spot's parking time (d = 1)."""
    from .estimators import EnsembleError, _censored_values, _curve_from_values

    if reps < 100:
        raise EnsembleError("fewer than 100 replications gives meaningless intervals")
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must be in [0, 1]")
    t_max = int(max(t_grid))
    params = ModelParams(d=1, p=p, seed=seed & MASK64, domain=TruncatedBox(max(2 * t_max, 1)))
    values = _censored_values("sigma", 1, p, seed, reps, t_max)
    return _curve_from_values("sigma", t_grid, values, reps, t_max, params)


def export_repair_log(result: EvolveResult, path) -> int:
    """Write the repair log as JSON lines."""
    n = 0
    with open(path, "w") as fh:
        for ev in result.pairing.repair_log:
            fh.write(ev.to_json() + "\n")
            n += 1
    return n
