"""Exact exit-time analysis of simple random walk on finite subsets of Z^d.

For a finite vertex set H containing the origin, the walk killed on
leaving H has the symmetric substochastic transition matrix P_H with
entries 1/(2d) on induced lattice edges.  The survival probability

    P(exit time > t) = sum_y (P_H^t)[0, y]

is computed by t sparse matrix-vector products.  With alpha the largest
eigenvalue of P_H, the survival is sandwiched between alpha^t and
sqrt(n) * alpha^t, which is the bound this module verifies numerically
and then uses for expected-exit-time truncation and for fitting the
uniform decay constant in  P(exit > t) <= sqrt(n) exp(-c t n^(-2/d)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

Point = tuple[int, ...]


class SubgraphError(ValueError):
    pass


def unit_steps(d: int) -> list[Point]:
    steps = []
    for axis in range(d):
        for sign in (1, -1):
            steps.append(tuple(sign if i == axis else 0 for i in range(d)))
    return steps


@dataclass(frozen=True)
class SubgraphH:
    """A finite set of lattice points containing the origin.

    The induced graph uses unit lattice edges.  Connectivity is checked
    once and recorded; operations state whether they require it.
    """

    vertices: tuple[Point, ...]

    def __post_init__(self):
        if not self.vertices:
            raise SubgraphError("subgraph must be nonempty")
        d = len(self.vertices[0])
        if any(len(v) != d for v in self.vertices):
            raise SubgraphError("inconsistent coordinate dimensions")
        if len(set(self.vertices)) != len(self.vertices):
            raise SubgraphError("duplicate vertices")
        origin = tuple(0 for _ in range(d))
        if origin not in set(self.vertices):
            raise SubgraphError("subgraph must contain the origin")
        object.__setattr__(self, "vertices", tuple(sorted(self.vertices)))

    @staticmethod
    def from_points(points) -> "SubgraphH":
        return SubgraphH(tuple(tuple(p) for p in points))

    @property
    def d(self) -> int:
        return len(self.vertices[0])

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def index(self) -> dict[Point, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def origin_index(self) -> int:
        return self.index[tuple(0 for _ in range(self.d))]

    @cached_property
    def edges(self) -> list[tuple[int, int]]:
        idx = self.index
        out = []
        for v, i in idx.items():
            for step in unit_steps(self.d):
                w = tuple(a + b for a, b in zip(v, step))
                j = idx.get(w)
                if j is not None and i < j:
                    out.append((i, j))
        return out

    @cached_property
    def is_connected(self) -> bool:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {self.origin_index}
        stack = [self.origin_index]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n

    def translate(self, shift: Point) -> "SubgraphH":
        return SubgraphH(tuple(tuple(a + b for a, b in zip(v, shift)) for v in self.vertices))

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Substochastic walk matrix: 1/(2d) per induced edge, symmetric."""
        n = self.n
        rows, cols = [], []
        for i, j in self.edges:
            rows += [i, j]
            cols += [j, i]
        data = np.full(len(rows), 1.0 / (2 * self.d))
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def op(self):
        """Matrix operator for the hot loops: dense below a size cutoff
        (sparse matvec overhead dominates tiny systems), sparse above."""
        if self.n <= 64:
            return self.matrix.toarray()
        return self.matrix


def exit_survival(h: SubgraphH, t: int, start: Point | None = None) -> float:
    """Exact P(walk from the origin stays inside h for t steps).

    Computed as the row sum of P_H^t at the start row via t sparse
    matrix-vector products; the final sum is compensated (math.fsum).
    Connectivity is not required: only the start vertex's component
    matters.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    row = h.origin_index if start is None else h.index[start]
    w = np.zeros(h.n)
    w[row] = 1.0
    m = h.op
    for _ in range(t):
        w = m.dot(w)
    return float(math.fsum(w.tolist()))


class PowerIterationError(RuntimeError):
    def __init__(self, msg, bracket):
        super().__init__(msg)
        self.bracket = bracket


def top_eigenvalue(h: SubgraphH, tol: float = 1e-12, max_iter: int = 500_000) -> float:
    """Largest eigenvalue of P_H, a value in [0, 1).

    Power iteration runs on I + P_H: induced subgraphs of Z^d are
    bipartite, so P_H has the eigenvalue pair +/-alpha and plain power
    iteration on P_H oscillates; the shift makes 1 + alpha the unique
    dominant eigenvalue while preserving eigenvectors.  Disconnected
    subgraphs are handled per component (the spectrum is the union).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not h.is_connected:
        return max(top_eigenvalue(comp, tol, max_iter) for comp in _components(h))
    n = h.n
    if n == 1 or not h.edges:
        return 0.0
    m = h.op
    v = np.ones(n) / math.sqrt(n)
    mu_prev = -1.0
    for _ in range(max_iter):
        w = v + m.dot(v)
        norm = np.linalg.norm(w)
        v = w / norm
        mu = float(v @ (v + m.dot(v)))  # Rayleigh quotient of I + P_H
        if abs(mu - mu_prev) < tol:
            return mu - 1.0
        mu_prev = mu
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations",
        bracket=(mu_prev - 1.0 - tol, mu_prev - 1.0 + tol),
    )


def _components(h: SubgraphH) -> list[SubgraphH]:
    """Connected components, each translated so it contains the origin."""
    adj = {v: [] for v in h.vertices}
    vset = set(h.vertices)
    for v in h.vertices:
        for step in unit_steps(h.d):
            w = tuple(a + b for a, b in zip(v, step))
            if w in vset:
                adj[v].append(w)
    seen = set()
    comps = []
    for v0 in h.vertices:
        if v0 in seen:
            continue
        comp = {v0}
        stack = [v0]
        seen.add(v0)
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    stack.append(w)
        anchor = min(comp)
        comps.append(SubgraphH(tuple(tuple(a - b for a, b in zip(v, anchor)) for v in comp)))
    return comps


def infinity_norm_power(h: SubgraphH, t: int) -> float:
    """Maximal row sum of P_H^t, i.e. the l_inf operator norm.

    By symmetry the row sums of P_H^t are the entries of P_H^t * ones,
    so one sequence of t matrix-vector products suffices.  Equals the
    survival probability maximized over starting vertices: the row sum
    at x is the survival of the walk from x, i.e. of the origin walk on
    H shifted by -x.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    w = np.ones(h.n)
    m = h.op
    for _ in range(t):
        w = m.dot(w)
    return float(w.max()) if h.n else 0.0


@dataclass
class SandwichReport:
    h_size: int
    t: int
    survival: float
    norm_inf: float
    alpha: float
    lower: float
    upper: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "H_size": self.h_size,
                "t": self.t,
                "survival": self.survival,
                "norm_inf": self.norm_inf,
                "alpha": self.alpha,
                "lower": self.lower,
                "upper": self.upper,
                "passed": self.passed,
            }
        )


def sandwich_check(h: SubgraphH, t: int, tol: float = 1e-10) -> SandwichReport:
    """Verify alpha^t <= ||P_H^t||_inf <= sqrt(n) * alpha^t within tol.

    The two-sided bound holds for the maximal row sum of P_H^t (for the
    Perron eigenvector v, ||P^t v||_inf / ||v||_inf = alpha^t); the row
    sum at one fixed vertex only obeys the upper half, which is also
    checked for the origin row.  Requires a connected subgraph.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if not h.is_connected:
        raise SubgraphError("sandwich_check requires a connected subgraph")
    alpha = top_eigenvalue(h, tol=min(1e-12, tol))
    surv = exit_survival(h, t)
    norm = infinity_norm_power(h, t)
    lower = alpha**t
    upper = math.sqrt(h.n) * alpha**t
    passed = (lower - tol <= norm) and (norm <= upper + tol) and (surv <= upper + tol)
    return SandwichReport(h.n, t, surv, norm, alpha, lower, upper, passed)


def lattice_ball(d: int, n: int) -> SubgraphH:
    """The n lattice points of smallest Euclidean norm (ties lexicographic)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    r = 1
    while True:
        rng = range(-r, r + 1)
        pts = [(p, sum(c * c for c in p)) for p in _box_points(d, r)]
        pts.sort(key=lambda it: (it[1], it[0]))
        if len(pts) >= n and pts[n - 1][1] <= r * r:
            return SubgraphH.from_points(p for p, _ in pts[:n])
        r *= 2


def _box_points(d: int, r: int):
    if d == 1:
        return [(x,) for x in range(-r, r + 1)]
    return [(x, *rest) for x in range(-r, r + 1) for rest in _box_points(d - 1, r)]


def expected_exit_time(h: SubgraphH, tol: float = 1e-12) -> float:
    """E[exit time] = sum_{t>=0} P(exit > t), truncated geometrically.

    Terms beyond t are bounded by sqrt(n) alpha^t / (1 - alpha); the sum
    stops once that bound drops below tol.
    """
    alpha = top_eigenvalue(h, tol=min(tol, 1e-13))
    if alpha >= 1.0:
        raise SubgraphError("top eigenvalue must be < 1")
    sqrt_n = math.sqrt(h.n)
    m = h.op
    w = np.zeros(h.n)
    w[h.origin_index] = 1.0
    total = 0.0
    t = 0
    while True:
        total += float(math.fsum(w.tolist()))
        t += 1
        tail = sqrt_n * alpha**t / (1.0 - alpha) if alpha > 0 else 0.0
        if tail < tol:
            return total
        w = m.dot(w)


def fit_c8(d: int, n_max: int, t_grid, animals=None) -> float:
    """Largest c with P(exit > t) <= sqrt(n) exp(-c t n^(-2/d)) on the sweep.

    The sweep covers every connected subgraph of size 2..n_max containing
    the origin (size-1 subgraphs are exited at the first step and give no
    constraint) and every t in t_grid.
    """
    from .busy import enumerate_animals

    if animals is None:
        animals = [h for h in enumerate_animals(d, n_max) if h.n >= 2]
    best = math.inf
    for h in animals:
        scale = h.n ** (2.0 / d)
        surv = None
        w = np.zeros(h.n)
        w[h.origin_index] = 1.0
        m = h.op
        prev_t = 0
        for t in sorted(t_grid):
            if t < 1:
                continue
            for _ in range(t - prev_t):
                w = m.dot(w)
            prev_t = t
            surv = float(math.fsum(w.tolist()))
            if surv <= 0.0:
                continue
            c = (scale / t) * math.log(math.sqrt(h.n) / surv)
            best = min(best, c)
    if not math.isfinite(best):
        raise SubgraphError("no usable (subgraph, t) pair in the sweep")
    return best
