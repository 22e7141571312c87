"""Maximal reachability probabilities for MDPs with a 0/1 goal marking.

Two backends: synchronous value iteration in binary64 (starting from the goal
indicator, so iterates approach the optimum from below) and an exact backend
based on policy iteration over rationals.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .model import TransitionSystem, _frozen

ARGMAX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ReachabilityMdp(TransitionSystem):
    """Transition structure plus goal marking.

    ``base`` and ``tag`` are set for augmented models built during synthesis:
    state ``i`` stands for the pair (``base[i]``, ``tag[i]``).
    """

    goal: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    base: np.ndarray | None = None
    tag: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "goal", _frozen(self.goal, bool))
        for name in ("base", "tag"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))

    def with_goal(self, goal) -> "ReachabilityMdp":
        """Same transitions, different goal marking (shares all cached structure)."""
        clone = object.__new__(ReachabilityMdp)
        clone.__dict__.update(self.__dict__)
        object.__setattr__(clone, "goal", _frozen(np.asarray(goal, bool).copy(), bool))
        return clone


@dataclass(frozen=True)
class SolverConfig:
    """Value-iteration settings; the stopping rule is the L1 sum of per-state updates."""

    epsilon: float = 1e-9
    max_iterations: int = 10**6
    workers: int = 1
    norm: str = "l1"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.norm != "l1":
            raise ValueError("only the l1 norm is supported")

    @classmethod
    def coarse(cls) -> "SolverConfig":
        """Coarse preset used for the large benchmark runs (epsilon 0.05)."""
        return cls(epsilon=0.05)


@dataclass(frozen=True, eq=False)
class StateValues:
    values: np.ndarray
    policy: np.ndarray
    rows: np.ndarray
    mode: str
    iterations: int = 0
    converged: bool = True

    def value(self, s: int):
        return self.values[s]


# --------------------------------------------------------------------------
# float backend


def _bellman_slices(rm: ReachabilityMdp, workers: int):
    n = rm.n_states
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(np.int64)
    P = rm.matrix()
    slices = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            continue
        r0, r1 = rm.row_start[lo], rm.row_start[hi]
        slices.append((lo, hi, P[r0:r1], rm.row_start[lo:hi] - r0))
    return slices


def value_iteration(rm: ReachabilityMdp, cfg: SolverConfig | None = None) -> StateValues:
    """Jacobi value iteration from x0 = goal indicator.

    Stops once the L1 sum of updates of a sweep is <= ``cfg.epsilon``.  The
    result is bit-identical for every ``cfg.workers``.
    """
    cfg = cfg or SolverConfig()
    goal = rm.goal
    x = goal.astype(np.float64)
    slices = _bellman_slices(rm, cfg.workers)
    pool = ThreadPoolExecutor(len(slices)) if len(slices) > 1 else None

    def sweep(part, x):
        lo, hi, sub, starts = part
        return np.maximum.reduceat(sub @ x, starts)

    iterations, converged = 0, False
    try:
        for _ in range(cfg.max_iterations):
            if pool is None:
                new = sweep(slices[0], x)
            else:
                new = np.concatenate(list(pool.map(lambda part: sweep(part, x), slices)))
            new[goal] = 1.0
            delta = float(np.abs(new - x).sum())
            x = new
            if delta > 0:
                iterations += 1
            if delta <= cfg.epsilon:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not converged:
        warnings.warn(f"value iteration hit the cap of {cfg.max_iterations} sweeps", RuntimeWarning)
    np.clip(x, 0.0, 1.0, out=x)
    rows = optimal_rows(rm, x)
    return StateValues(values=x, policy=rm.row_action[rows], rows=rows, mode="float",
                       iterations=iterations, converged=converged)


def row_values(rm: TransitionSystem, x) -> np.ndarray:
    """Expected successor value of every row, exact when ``x`` holds Fractions."""
    if isinstance(x, np.ndarray) and x.dtype != object:
        return rm.matrix() @ x
    prob = rm.prob if rm.exact else np.array([Fraction(p) for p in rm.prob], dtype=object)
    terms = prob * np.asarray(x, dtype=object)[rm.succ]
    out = np.empty(rm.n_rows, dtype=object)
    for r in range(rm.n_rows):
        out[r] = sum(terms[rm.edge_start[r]:rm.edge_start[r + 1]], Fraction(0))
    return out


def state_max(rm: TransitionSystem, q: np.ndarray) -> np.ndarray:
    if q.dtype != object:
        return np.maximum.reduceat(q, rm.row_start[:-1])
    return np.array([max(q[rm.row_start[s]:rm.row_start[s + 1]]) for s in range(rm.n_states)],
                    dtype=object)


def first_rows(rm: TransitionSystem, mask: np.ndarray) -> np.ndarray:
    """Per state, the lowest row with ``mask`` set (-1 when none)."""
    big = rm.n_rows
    idx = np.where(mask, np.arange(rm.n_rows), big)
    best = np.minimum.reduceat(idx, rm.row_start[:-1])
    return np.where(best == big, -1, best)


def argmax_rows(rm: TransitionSystem, q: np.ndarray, tol: float = ARGMAX_TOL):
    """Boolean row mask of the actions attaining each state's maximum."""
    best = state_max(rm, q)
    if q.dtype == object:
        return q == best[rm.row_state], best
    return q >= best[rm.row_state] - tol, best


def _structure(rm: TransitionSystem) -> sp.csr_matrix:
    cached = rm.__dict__.get("_structure")
    if cached is None:
        cached = sp.csr_matrix((np.ones(rm.n_edges, np.int32), rm.succ, rm.edge_start),
                               shape=(rm.n_rows, rm.n_states))
        object.__setattr__(rm, "_structure", cached)
    return cached


def attractor_rows(rm: TransitionSystem, target: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Rows that steer towards ``target`` using only ``allowed`` rows.

    Backward breadth-first layering: a state gets the lowest allowed row with a
    successor in an earlier layer.  States never reached get -1; target states
    get -1 as well (callers fill them in).
    """
    S = _structure(rm)
    assigned = np.asarray(target, bool).copy()
    choice = np.full(rm.n_states, -1, dtype=np.int64)
    rstate = rm.row_state
    while True:
        hit = (S @ assigned.astype(np.int32)) > 0
        cand = allowed & hit & ~assigned[rstate]
        rows = first_rows(rm, cand)
        new = rows >= 0
        if not new.any():
            return choice
        choice[new] = rows[new]
        assigned |= new


def optimal_rows(rm: ReachabilityMdp, x) -> np.ndarray:
    """Positional optimal policy for the values ``x``.

    Among the rows attaining the maximum, states are assigned in attractor
    order towards the goal, which rules out choices that idle forever inside
    an end component.  Goal states and value-0 states take the lowest argmax
    row.
    """
    q = row_values(rm, x)
    allowed, best = argmax_rows(rm, q)
    rows = attractor_rows(rm, rm.goal, allowed)
    fallback = first_rows(rm, allowed)
    return np.where(rows >= 0, rows, fallback)


# --------------------------------------------------------------------------
# exact backend


def solve_sparse(rows: list[dict[int, Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination over rationals on a sparse square system.

    No pivoting: intended for systems ``(I - Q) x = b`` with ``Q`` strictly
    substochastic on a transient class, whose LU factors exist.
    """
    n = len(rows)
    rows = [dict(r) for r in rows]
    rhs = list(rhs)
    below = [set() for _ in range(n)]
    for i, r in enumerate(rows):
        for j in r:
            if i > j:
                below[j].add(i)
    for k in range(n):
        rk = rows[k]
        piv = rk.get(k)
        if not piv:
            raise ZeroDivisionError(f"zero pivot at {k}")
        for i in sorted(below[k]):
            ri = rows[i]
            f = ri.pop(k) / piv
            for j, v in rk.items():
                if j == k:
                    continue
                nv = ri.get(j, 0) - f * v
                if nv:
                    ri[j] = nv
                    if i > j:
                        below[j].add(i)
                else:
                    ri.pop(j, None)
                    below[j].discard(i)
            rhs[i] -= f * rhs[k]
        below[k].clear()
    x = [Fraction(0)] * n
    for k in range(n - 1, -1, -1):
        acc = rhs[k]
        for j, v in rows[k].items():
            if j != k:
                acc -= v * x[j]
        x[k] = acc / rows[k][k]
    return x


def can_reach(rm: TransitionSystem, target: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """States with a positive-probability path to ``target`` (all rows, or the given ones)."""
    allowed = np.ones(rm.n_rows, bool)
    if rows is not None:
        allowed[:] = False
        allowed[rows[rows >= 0]] = True
    reach = np.asarray(target, bool).copy()
    S = _structure(rm)
    rstate = rm.row_state
    while True:
        hit = ((S @ reach.astype(np.int32)) > 0) & allowed
        new = np.zeros(rm.n_states, bool)
        new[rstate[hit]] = True
        new &= ~reach
        if not new.any():
            return reach
        reach |= new


def _exact_probs(rm: TransitionSystem) -> np.ndarray:
    if rm.exact:
        return rm.prob
    out = np.empty(rm.n_edges, dtype=object)
    out[:] = [Fraction(p) for p in rm.prob.tolist()]
    return out


def evaluate_policy_exact(rm: ReachabilityMdp, rows: np.ndarray) -> np.ndarray:
    """Exact reachability probabilities of the chain induced by one row per state."""
    goal = rm.goal
    live = can_reach(rm, goal, rows) & ~goal
    idx = np.nonzero(live)[0]
    pos = {int(s): i for i, s in enumerate(idx)}
    prob = _exact_probs(rm)
    A, b = [], []
    for s in idx.tolist():
        r = rows[s]
        row = {pos[s]: Fraction(1)}
        acc = Fraction(0)
        for e in range(rm.edge_start[r], rm.edge_start[r + 1]):
            t, p = int(rm.succ[e]), prob[e]
            if goal[t]:
                acc += p
            elif t in pos:
                j = pos[t]
                row[j] = row.get(j, 0) - p
                if not row[j]:
                    del row[j]
        A.append(row)
        b.append(acc)
    sol = solve_sparse(A, b) if idx.size else []
    x = np.empty(rm.n_states, dtype=object)
    x[:] = Fraction(0)
    x[goal] = Fraction(1)
    for s, v in zip(idx.tolist(), sol):
        x[s] = v
    return x


def exact_reach_values(rm: ReachabilityMdp) -> StateValues:
    """Exact maximal reachability probabilities by policy iteration over rationals.

    States without any path to the goal are fixed at 0; the initial policy is
    an attractor policy (it reaches the goal with positive probability from
    every other state), and improvements only switch on a strict gain.
    """
    goal = rm.goal
    positive = can_reach(rm, goal)
    allowed = np.ones(rm.n_rows, bool)
    rows = attractor_rows(rm, goal, allowed)
    rows = np.where(rows >= 0, rows, rm.row_start[:-1])
    iterations = 0
    while True:
        iterations += 1
        x = evaluate_policy_exact(rm, rows)
        q = row_values(rm, x)
        best = state_max(rm, q)
        improve = (best > x) & positive & ~goal
        if not improve.any():
            break
        for s in np.nonzero(improve)[0]:
            lo, hi = rm.row_start[s], rm.row_start[s + 1]
            seg = q[lo:hi].tolist()
            rows[s] = lo + seg.index(max(seg))
    rows = optimal_rows(rm, x)
    return StateValues(values=x, policy=rm.row_action[rows], rows=rows, mode="exact",
                       iterations=iterations, converged=True)


def solve(rm: ReachabilityMdp, backend: str = "float", cfg: SolverConfig | None = None) -> StateValues:
    if backend == "exact":
        return exact_reach_values(rm)
    if backend == "float":
        return value_iteration(rm, cfg)
    raise ValueError(f"unknown backend {backend!r}")
