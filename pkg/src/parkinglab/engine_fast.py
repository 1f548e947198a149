"""Compiled Monte Carlo kernels for large replication counts.

These kernels re-implement the reference dynamics of ``dynamics`` in
nopython numba, drawing from the identical counter-based streams, and the
parity tests hold them to *exact* agreement (same tau/sigma/visit values
per seed).  Two extra tricks make million-replication tail runs cheap:

  * per-replication seeds are master_seed XOR replication index, so the
    parallel loop is order- and thread-count-independent;
  * tail values are computed by staged doubling: horizon T is simulated
    on the box of radius 2T, which is exact for deciding values <= T
    (information travels at speed one), and undecided replications
    restart at horizon 2T.  Restarts replay identical randomness, so the
    staged result equals a single monolithic run at radius 2*t_max.

Only d = 1 and d = 2 are compiled; higher dimensions fall back to the
reference engine.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .realization import MASK64, SALT_LABEL, SALT_TIE, SALT_WALK, car_threshold

U64 = np.uint64

_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_SALT_LABEL = U64(SALT_LABEL)
_SALT_WALK = U64(SALT_WALK)
_SALT_TIE = U64(SALT_TIE)

CAR0 = np.uint8(0)
VACANT = np.uint8(1)
OCCUPIED = np.uint8(2)

WANT_TAU = 1
WANT_SIGMA = 2
WANT_VISITS = 4


@njit(inline="always")
def _mix64(z):
    z ^= z >> _S30
    z *= _M1
    z ^= z >> _S27
    z *= _M2
    z ^= z >> _S31
    return z


@njit(inline="always")
def _chain(h, w):
    return _mix64(h ^ U64(np.int64(w)))


@njit(cache=True)
def _run_d1(seed, thr, all_cars, radius, side, t_max, want, early):
    """One realization in d=1: returns (tau, sigma, visits), censored.

    side > 0 selects a torus of that side (radius ignored); otherwise the
    box [-radius, radius] with free movement outside it.
    """
    h_label = _mix64(seed ^ _SALT_LABEL)
    h_walk = _mix64(seed ^ _SALT_WALK)
    h_tie = _mix64(seed ^ _SALT_TIE)
    torus = side > 0
    nsites = side if torus else 2 * radius + 1
    origin_flat = 0 if torus else radius

    status = np.empty(nsites, np.uint8)
    ncars = 0
    for flat in range(nsites):
        x = flat if torus else flat - radius
        car = all_cars or _chain(h_label, x) < thr
        if car:
            status[flat] = CAR0
            ncars += 1
        else:
            status[flat] = VACANT

    origins = np.empty(ncars, np.int64)
    positions = np.empty(ncars, np.int64)
    hwalk = np.empty(ncars, U64)
    htie = np.empty(ncars, U64)
    alive = np.ones(ncars, np.bool_)
    i = 0
    origin_car = -1
    for flat in range(nsites):
        if status[flat] == CAR0:
            x = flat if torus else flat - radius
            origins[i] = x
            positions[i] = x
            hwalk[i] = _chain(h_walk, x)
            htie[i] = _chain(h_tie, x)
            if x == 0:
                origin_car = i
            i += 1

    tau = 0 if origin_car < 0 else t_max + 1
    watch_spot = status[origin_flat] == VACANT
    sigma = t_max + 1 if watch_spot else 0
    visits = 0

    best_tb = np.zeros(nsites, U64)
    best_car = np.zeros(nsites, np.int32)
    stamp = np.zeros(nsites, np.uint32)
    contenders = np.empty(max(ncars, 1), np.int32)

    for t in range(1, t_max + 1):
        tu = U64(t)
        ncon = 0
        for i in range(ncars):
            if not alive[i]:
                continue
            r = _mix64(hwalk[i] ^ tu) & U64(1)
            x = positions[i] + (1 - 2 * np.int64(r))
            if torus:
                if x < 0:
                    x += side
                elif x >= side:
                    x -= side
            positions[i] = x
            if x == 0 and (want & WANT_VISITS):
                visits += 1
            if torus or (-radius <= x <= radius):
                flat = x if torus else x + radius
                if status[flat] == VACANT:
                    tb = _mix64(htie[i] ^ tu)
                    if stamp[flat] != np.uint32(t):
                        stamp[flat] = np.uint32(t)
                        best_tb[flat] = tb
                        best_car[flat] = i
                    elif tb > best_tb[flat] or (
                        tb == best_tb[flat] and origins[i] > origins[best_car[flat]]
                    ):
                        best_tb[flat] = tb
                        best_car[flat] = i
                    contenders[ncon] = i
                    ncon += 1
        for k in range(ncon):
            i = contenders[k]
            x = positions[i]
            flat = x if torus else x + radius
            if status[flat] == VACANT and best_car[flat] == i:
                status[flat] = OCCUPIED
                alive[i] = False
                if i == origin_car:
                    tau = t
                if flat == origin_flat:
                    sigma = t
        if early and not (want & WANT_VISITS):
            tau_pending = (want & WANT_TAU) and origin_car >= 0 and tau > t_max
            sigma_pending = (want & WANT_SIGMA) and watch_spot and sigma > t_max
            if not tau_pending and not sigma_pending:
                break
    return tau, sigma, visits


@njit(cache=True)
def _run_d2(seed, thr, all_cars, radius, side, t_max, want, early):
    """One realization in d=2; see _run_d1."""
    h_label = _mix64(seed ^ _SALT_LABEL)
    h_walk = _mix64(seed ^ _SALT_WALK)
    h_tie = _mix64(seed ^ _SALT_TIE)
    torus = side > 0
    width = side if torus else 2 * radius + 1
    nsites = width * width
    origin_flat = 0 if torus else radius * width + radius

    status = np.empty(nsites, np.uint8)
    ncars = 0
    for flat in range(nsites):
        if torus:
            x = flat // width
            y = flat - x * width
        else:
            x = flat // width - radius
            y = flat % width - radius
        car = all_cars or _chain(_chain(h_label, x), y) < thr
        if car:
            status[flat] = CAR0
            ncars += 1
        else:
            status[flat] = VACANT

    ox = np.empty(ncars, np.int64)
    oy = np.empty(ncars, np.int64)
    px = np.empty(ncars, np.int64)
    py = np.empty(ncars, np.int64)
    oflat = np.empty(ncars, np.int64)
    hwalk = np.empty(ncars, U64)
    htie = np.empty(ncars, U64)
    alive = np.ones(ncars, np.bool_)
    i = 0
    origin_car = -1
    for flat in range(nsites):
        if status[flat] == CAR0:
            if torus:
                x = flat // width
                y = flat - x * width
            else:
                x = flat // width - radius
                y = flat % width - radius
            ox[i] = x
            oy[i] = y
            px[i] = x
            py[i] = y
            oflat[i] = flat
            hwalk[i] = _chain(_chain(h_walk, x), y)
            htie[i] = _chain(_chain(h_tie, x), y)
            if x == 0 and y == 0:
                origin_car = i
            i += 1

    tau = 0 if origin_car < 0 else t_max + 1
    watch_spot = status[origin_flat] == VACANT
    sigma = t_max + 1 if watch_spot else 0
    visits = 0

    best_tb = np.zeros(nsites, U64)
    best_car = np.zeros(nsites, np.int32)
    stamp = np.zeros(nsites, np.uint32)
    contenders = np.empty(max(ncars, 1), np.int32)

    for t in range(1, t_max + 1):
        tu = U64(t)
        ncon = 0
        for i in range(ncars):
            if not alive[i]:
                continue
            r = _mix64(hwalk[i] ^ tu) & U64(3)
            if r == 0:
                px[i] += 1
            elif r == 1:
                px[i] -= 1
            elif r == 2:
                py[i] += 1
            else:
                py[i] -= 1
            x = px[i]
            y = py[i]
            if torus:
                if x < 0:
                    x += side
                elif x >= side:
                    x -= side
                if y < 0:
                    y += side
                elif y >= side:
                    y -= side
                px[i] = x
                py[i] = y
            if x == 0 and y == 0 and (want & WANT_VISITS):
                visits += 1
            inside = torus or (-radius <= x <= radius and -radius <= y <= radius)
            if inside:
                flat = x * width + y if torus else (x + radius) * width + (y + radius)
                if status[flat] == VACANT:
                    tb = _mix64(htie[i] ^ tu)
                    if stamp[flat] != np.uint32(t):
                        stamp[flat] = np.uint32(t)
                        best_tb[flat] = tb
                        best_car[flat] = i
                    elif tb > best_tb[flat] or (
                        tb == best_tb[flat] and oflat[i] > oflat[best_car[flat]]
                    ):
                        best_tb[flat] = tb
                        best_car[flat] = i
                    contenders[ncon] = i
                    ncon += 1
        for k in range(ncon):
            i = contenders[k]
            x = px[i]
            y = py[i]
            flat = x * width + y if torus else (x + radius) * width + (y + radius)
            if status[flat] == VACANT and best_car[flat] == i:
                status[flat] = OCCUPIED
                alive[i] = False
                if i == origin_car:
                    tau = t
                if flat == origin_flat:
                    sigma = t
        if early and not (want & WANT_VISITS):
            tau_pending = (want & WANT_TAU) and origin_car >= 0 and tau > t_max
            sigma_pending = (want & WANT_SIGMA) and watch_spot and sigma > t_max
            if not tau_pending and not sigma_pending:
                break
    return tau, sigma, visits


@njit(cache=True)
def _tail_staged_d1(seed, thr, all_cars, t_max, want_sigma, first_stage):
    h_label = _mix64(seed ^ _SALT_LABEL)
    origin_car = all_cars or _chain(h_label, 0) < thr
    if want_sigma:
        if origin_car:
            return 0
    elif not origin_car:
        return 0
    want = WANT_SIGMA if want_sigma else WANT_TAU
    T = first_stage if first_stage < t_max else t_max
    while True:
        tau, sigma, _ = _run_d1(seed, thr, all_cars, 2 * T, 0, T, want, True)
        val = sigma if want_sigma else tau
        if val <= T:
            return val
        if T >= t_max:
            return t_max + 1
        T = T * 2 if T * 2 < t_max else t_max


@njit(cache=True)
def _tail_staged_d2(seed, thr, all_cars, t_max, want_sigma, first_stage):
    h_label = _mix64(seed ^ _SALT_LABEL)
    origin_car = all_cars or _chain(_chain(h_label, 0), 0) < thr
    if want_sigma:
        if origin_car:
            return 0
    elif not origin_car:
        return 0
    want = WANT_SIGMA if want_sigma else WANT_TAU
    T = first_stage if first_stage < t_max else t_max
    while True:
        tau, sigma, _ = _run_d2(seed, thr, all_cars, 2 * T, 0, T, want, True)
        val = sigma if want_sigma else tau
        if val <= T:
            return val
        if T >= t_max:
            return t_max + 1
        T = T * 2 if T * 2 < t_max else t_max


@njit(cache=True, parallel=True)
def _batch_tail(master, reps, d, thr, all_cars, t_max, want_sigma, first_stage):
    out = np.empty(reps, np.int32)
    for r in prange(reps):
        seed = U64(master) ^ U64(r)
        if d == 1:
            out[r] = _tail_staged_d1(seed, thr, all_cars, t_max, want_sigma, first_stage)
        else:
            out[r] = _tail_staged_d2(seed, thr, all_cars, t_max, want_sigma, first_stage)
    return out


@njit(cache=True, parallel=True)
def _batch_box(master, reps, d, thr, all_cars, radius, t_max, want, early):
    taus = np.empty(reps, np.int32)
    sigmas = np.empty(reps, np.int32)
    visits = np.empty(reps, np.int64)
    for r in prange(reps):
        seed = U64(master) ^ U64(r)
        if d == 1:
            tau, sigma, vis = _run_d1(seed, thr, all_cars, radius, 0, t_max, want, early)
        else:
            tau, sigma, vis = _run_d2(seed, thr, all_cars, radius, 0, t_max, want, early)
        taus[r] = tau
        sigmas[r] = sigma
        visits[r] = vis
    return taus, sigmas, visits


@njit(cache=True, parallel=True)
def _batch_torus(master, reps, d, thr, all_cars, side, t_max, want):
    taus = np.empty(reps, np.int32)
    sigmas = np.empty(reps, np.int32)
    visits = np.empty(reps, np.int64)
    for r in prange(reps):
        seed = U64(master) ^ U64(r)
        if d == 1:
            tau, sigma, vis = _run_d1(seed, thr, all_cars, 0, side, t_max, want, False)
        else:
            tau, sigma, vis = _run_d2(seed, thr, all_cars, 0, side, t_max, want, False)
        taus[r] = tau
        sigmas[r] = sigma
        visits[r] = vis
    return taus, sigmas, visits


def tail_values(d: int, p: float, master_seed: int, reps: int, t_max: int,
                sigma: bool = False, first_stage: int = 16) -> np.ndarray:
    """Censored tau (or sigma) per replication, staged-exact, int32 array."""
    if d not in (1, 2):
        raise ValueError("compiled kernels cover d in {1, 2}")
    thr, all_cars = car_threshold(p)
    return _batch_tail(
        U64(master_seed & MASK64), reps, d, U64(thr), all_cars, t_max, sigma, first_stage
    )


def box_outcomes(d: int, p: float, master_seed: int, reps: int, t_max: int, radius: int,
                 want_visits: bool = False, early: bool = True):
    """Monolithic box runs: (tau, sigma, visits) arrays per replication."""
    if d not in (1, 2):
        raise ValueError("compiled kernels cover d in {1, 2}")
    thr, all_cars = car_threshold(p)
    want = WANT_TAU | WANT_SIGMA | (WANT_VISITS if want_visits else 0)
    return _batch_box(
        U64(master_seed & MASK64), reps, d, U64(thr), all_cars, radius, t_max, want, early
    )


def torus_outcomes(d: int, p: float, master_seed: int, reps: int, t_max: int, side: int):
    """Full-horizon torus runs: (tau, sigma, visits) arrays per replication."""
    if d not in (1, 2):
        raise ValueError("compiled kernels cover d in {1, 2}")
    thr, all_cars = car_threshold(p)
    want = WANT_TAU | WANT_SIGMA | WANT_VISITS
    return _batch_torus(U64(master_seed & MASK64), reps, d, U64(thr), all_cars, side, t_max, want)
