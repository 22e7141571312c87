"""Finite-state policies: induced chains, exact risk measurement, simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .model import ModelError, ParityMdp
from .reach import ReachabilityMdp, can_reach, evaluate_policy_exact


@dataclass(eq=False)
class FiniteStatePolicy:
    """Policy automaton over the states of a parity MDP.

    Node ``n`` sits in product state ``state[n]`` and plays ``action[n]``.
    Its outgoing edges ``edge_start[n]:edge_start[n+1]`` map each successor
    state ``edge_succ[e]`` to the next node ``edge_target[e]``.  ``goal`` is
    the goal flag, ``goal_color`` the committed even color and ``budget`` the
    layer whose winning set certifies the node.
    """

    state: np.ndarray
    action: np.ndarray
    goal: np.ndarray
    goal_color: np.ndarray
    budget: np.ndarray
    edge_start: np.ndarray
    edge_succ: np.ndarray
    edge_target: np.ndarray
    start: int = 0
    k: int = 0
    p: object = None
    memory: tuple = field(default=(), repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.state)

    def successor(self, n: int, s: int) -> int:
        lo, hi = self.edge_start[n], self.edge_start[n + 1]
        hits = np.nonzero(self.edge_succ[lo:hi] == s)[0]
        if not len(hits):
            raise KeyError(f"node {n} has no edge for state {s}")
        return int(self.edge_target[lo + hits[0]])

    def nodes_at(self, s: int) -> np.ndarray:
        return np.nonzero(self.state == s)[0]


@dataclass(frozen=True, eq=False)
class InducedChain:
    """Markov chain on policy nodes (a reachability MDP with one row per node)."""

    mdp: ReachabilityMdp
    start: int

    @property
    def n_nodes(self) -> int:
        return self.mdp.n_states

    @property
    def goal(self) -> np.ndarray:
        return self.mdp.goal

    def distribution(self, n: int):
        return self.mdp.distribution(n)


def _row_of(pm: ParityMdp, pol: FiniteStatePolicy, n: int) -> int:
    r = pm.find_row(int(pol.state[n]), int(pol.action[n]))
    if r < 0:
        raise ModelError(f"node {n}: action {pol.action[n]} not enabled in state {pol.state[n]}")
    return r


def induced_chain(pm: ParityMdp, pol: FiniteStatePolicy) -> InducedChain:
    """Chain over nodes; node n moves to edge(n, s') with probability P(state, action)(s')."""
    succ, prob, starts = [], [], [0]
    for n in range(pol.n_nodes):
        r = _row_of(pm, pol, n)
        lo, hi = pol.edge_start[n], pol.edge_start[n + 1]
        targets = dict(zip(pol.edge_succ[lo:hi].tolist(), pol.edge_target[lo:hi].tolist()))
        dist = pm.distribution(r)
        if set(targets) != {t for t, _ in dist}:
            raise ModelError(f"node {n}: edges do not match the support of its action")
        merged: dict[int, object] = {}
        for t, pr in dist:
            node = targets[t]
            if int(pol.state[node]) != t:
                raise ModelError(f"node {n}: edge for state {t} leads to node of state {pol.state[node]}")
            merged[node] = merged.get(node, 0) + pr
        for node in sorted(merged):
            succ.append(node)
            prob.append(merged[node])
        starts.append(len(succ))
    if pm.exact:
        parr = np.empty(len(prob), dtype=object)
        parr[:] = prob
    else:
        parr = np.array(prob, dtype=np.float64)
    n = pol.n_nodes
    rm = ReachabilityMdp(
        state_names=tuple(f"n{i}" for i in range(n)),
        action_names=("step",),
        row_start=np.arange(n + 1),
        row_action=np.zeros(n, np.int64),
        edge_start=np.array(starts),
        succ=np.array(succ, dtype=np.int64),
        prob=parr,
        initial=pol.start,
        goal=pol.goal,
    )
    return InducedChain(rm, pol.start)


def reach_probabilities(chain: InducedChain, exact: bool | None = None) -> np.ndarray:
    """Probability of reaching a goal node in zero or more steps, per node."""
    rm = chain.mdp
    exact = rm.exact if exact is None else exact
    rows = np.arange(rm.n_states)
    if exact:
        return evaluate_policy_exact(rm, rows)
    goal = rm.goal
    live = can_reach(rm, goal, rows) & ~goal
    x = goal.astype(np.float64)
    idx = np.nonzero(live)[0]
    if idx.size:
        P = rm.matrix()
        A = sp.identity(idx.size, format="csc") - P[idx][:, idx].tocsc()
        b = P[idx][:, np.nonzero(goal)[0]].sum(axis=1).A.ravel()
        x[idx] = np.atleast_1d(spsolve(A, b))
    return np.clip(x, 0.0, 1.0)


def source_probabilities(chain: InducedChain, exact: bool | None = None) -> dict[int, object]:
    """For every source node (start, and goal nodes reachable from it): the
    probability of reaching a goal node in at least one step."""
    rm = chain.mdp
    R = reach_probabilities(chain, exact)
    reach = _forward_reachable(rm, chain.start)
    sources = [chain.start] + [int(n) for n in np.nonzero(rm.goal & reach)[0] if n != chain.start]
    out = {}
    for n in sources:
        lo, hi = rm.edge_start[n], rm.edge_start[n + 1]
        acc = Fraction(0) if R.dtype == object else 0.0
        for t, pr in zip(rm.succ[lo:hi].tolist(), rm.prob[lo:hi].tolist()):
            acc += pr * R[t]
        out[n] = acc
    return out


def verify_risk(chain: InducedChain, exact: bool | None = None):
    """Risk-averseness level actually achieved by the chain.

    Minimum over the start node and every goal node reachable from it of the
    probability to reach a goal node again after at least one step.
    """
    return min(source_probabilities(chain, exact).values())


def _forward_reachable(rm, start: int) -> np.ndarray:
    seen = np.zeros(rm.n_states, bool)
    seen[start] = True
    stack = [start]
    while stack:
        n = stack.pop()
        for t in rm.succ[rm.edge_start[rm.row_start[n]]:rm.edge_start[rm.row_start[n + 1]]].tolist():
            if not seen[t]:
                seen[t] = True
                stack.append(t)
    return seen


# --------------------------------------------------------------------------
# structural checks


@dataclass
class StructuralReport:
    violations: list[str] = field(default_factory=list)
    max_decreases: int | None = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "structural: clean" if self.ok else "\n".join(self.violations)


def decrease_bound(pol: FiniteStatePolicy) -> int | None:
    """Most goal-color decreases on any path from the start (None if unbounded)."""
    n = pol.n_nodes
    src = np.repeat(np.arange(n), np.diff(pol.edge_start))
    dst = pol.edge_target
    dec = pol.goal_color[src] > pol.goal_color[dst]
    graph = sp.csr_matrix((np.ones(len(src), np.int8), (src, dst)), shape=(n, n))
    ncomp, comp = connected_components(graph, directed=True, connection="strong")
    if np.any(dec & (comp[src] == comp[dst])):
        return None
    # longest path on the condensation, weights = decreasing edges
    csrc, cdst, w = comp[src], comp[dst], dec.astype(np.int64)
    cross = csrc != cdst
    out_edges: dict[int, list[tuple[int, int]]] = {}
    indeg = np.zeros(ncomp, np.int64)
    for a, b, wt in zip(csrc[cross].tolist(), cdst[cross].tolist(), w[cross].tolist()):
        out_edges.setdefault(a, []).append((b, wt))
        indeg[b] += 1
    best = np.full(ncomp, -1, np.int64)
    best[comp[pol.start]] = 0
    queue = [c for c in range(ncomp) if indeg[c] == 0]
    while queue:
        a = queue.pop()
        for b, wt in out_edges.get(a, ()):
            if best[a] >= 0:
                best[b] = max(best[b], best[a] + wt)
            indeg[b] -= 1
            if indeg[b] == 0:
                queue.append(b)
    return int(best.max())


def check_structural(pol: FiniteStatePolicy, pm: ParityMdp) -> StructuralReport:
    """Check the labeling rules of a policy against the colors of ``pm``.

    Goal colors must be even; odd-colored states need a goal color above
    their color; goal-flagged nodes need an even color at least the goal
    color; goal colors may decrease at most ``pol.k`` times on any path.
    """
    out: list[str] = []
    colors = pm.colors
    for n in range(pol.n_nodes):
        s, l = int(pol.state[n]), int(pol.goal_color[n])
        C = int(colors[s])
        name = pm.state_names[s]
        if l % 2:
            out.append(f"node {n} ({name}): goal color {l} is odd")
        if C % 2 and not l > C:
            out.append(f"node {n} ({name}): odd color {C} with goal color {l}")
        if pol.goal[n] and (C % 2 or C < l):
            out.append(f"node {n} ({name}): goal flag on color {C} with goal color {l}")
        if pm.find_row(s, int(pol.action[n])) < 0:
            out.append(f"node {n} ({name}): action not enabled")
            continue
        lo, hi = pol.edge_start[n], pol.edge_start[n + 1]
        support = {t for t, _ in pm.distribution(pm.find_row(s, int(pol.action[n])))}
        keys = pol.edge_succ[lo:hi].tolist()
        if set(keys) != support or len(keys) != len(support):
            out.append(f"node {n} ({name}): edges do not cover the action's support")
        for t, m in zip(keys, pol.edge_target[lo:hi].tolist()):
            if not 0 <= m < pol.n_nodes or int(pol.state[m]) != t:
                out.append(f"node {n} ({name}): edge for {pm.state_names[t]} targets a wrong node")
    bound = None
    if not out:
        bound = decrease_bound(pol)
        if bound is None:
            out.append("goal color decreases on a cycle (unbounded decreases)")
        elif bound > pol.k:
            out.append(f"goal color decreases {bound} times, declared bound k={pol.k}")
    return StructuralReport(out, bound)


def trace_accepting(prefix, cycle) -> bool:
    """Parity acceptance of the lasso ``prefix cycle^omega``: max cycle color is even."""
    cycle = list(cycle)
    if not cycle:
        raise ValueError("empty cycle")
    return max(cycle) % 2 == 0


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class Step:
    step: int
    node: int
    state: int
    action: int
    goal: bool
    color: int
    restart: bool = False


def _dead_and_final(chain: InducedChain) -> tuple[np.ndarray, np.ndarray]:
    """Nodes that cannot reach a goal, and goal nodes inside bottom components."""
    rm = chain.mdp
    dead = ~can_reach(rm, rm.goal, np.arange(rm.n_states))
    n = rm.n_states
    src = np.repeat(np.arange(n), np.diff(rm.edge_start))
    graph = sp.csr_matrix((np.ones(len(src), np.int8), (src, rm.succ)), shape=(n, n))
    _, comp = connected_components(graph, directed=True, connection="strong")
    leaves = np.ones(comp.max() + 1, bool)
    leaves[comp[src[comp[src] != comp[rm.succ]]]] = False
    return dead, rm.goal & leaves[comp]


def simulate(pm: ParityMdp, pol: FiniteStatePolicy, seed: int, max_steps: int,
             restart: bool = False, chain: InducedChain | None = None) -> list[Step]:
    """Sample a run of the induced chain.

    With ``restart`` the run jumps back to the start node right after it
    enters a node that cannot reach a goal any more, or a goal node inside a
    bottom component (nothing new can be learned by staying there).
    """
    chain = chain or induced_chain(pm, pol)
    rm = chain.mdp
    rng = np.random.default_rng(seed)
    probs = rm.float_prob()
    if restart:
        dead, final = _dead_and_final(chain)
    trace = []
    node, fresh = pol.start, False
    while len(trace) < max_steps:
        s = int(pol.state[node])
        trace.append(Step(len(trace), node, s, int(pol.action[node]), bool(pol.goal[node]),
                          int(pm.colors[s]), fresh))
        if restart and (dead[node] or final[node]):
            node, fresh = pol.start, True
            continue
        lo, hi = rm.edge_start[node], rm.edge_start[node + 1]
        cum = np.cumsum(probs[lo:hi])
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        node, fresh = int(rm.succ[lo + min(k, hi - lo - 1)]), False
    return trace


@dataclass
class GoalStats:
    trials: int
    successes: int
    expected: float
    variance: float

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    @property
    def expected_rate(self) -> float:
        return self.expected / self.trials if self.trials else float("nan")

    @property
    def standard_error(self) -> float:
        return float(np.sqrt(self.variance)) / self.trials if self.trials else float("nan")


def goal_success_stats(pm: ParityMdp, pol: FiniteStatePolicy, seed: int, steps: int) -> GoalStats:
    """Monte Carlo goal-to-goal trials with their exact expectations.

    A trial starts at every visit of a source node (start or goal) and ends at
    the next goal node (success) or at a node that cannot reach any goal
    (failure).  ``expected`` sums, over the trials, the exact success
    probability of the trial's source node; ``variance`` sums p(1-p).
    """
    chain = induced_chain(pm, pol)
    trace = simulate(pm, pol, seed, steps, restart=True, chain=chain)
    R = reach_probabilities(chain, exact=False)
    rm = chain.mdp
    dep = np.array([float(sum(p * R[t] for t, p in zip(rm.succ[rm.edge_start[n]:rm.edge_start[n + 1]].tolist(),
                                                     rm.float_prob()[rm.edge_start[n]:rm.edge_start[n + 1]].tolist())))
                    for n in range(rm.n_states)])
    dead = R <= 0
    trials = successes = 0
    expected = variance = 0.0
    source = None
    for st in trace:
        if st.restart:
            source = None
        if source is not None and (pol.goal[st.node] or dead[st.node]):
            trials += 1
            successes += int(pol.goal[st.node])
            expected += dep[source]
            variance += dep[source] * (1 - dep[source])
            source = None
        if source is None and (pol.goal[st.node] or st.node == pol.start):
            source = st.node
    return GoalStats(trials, successes, expected, variance)


def worst_source(chain: InducedChain, exact: bool | None = None) -> int:
    """Source node attaining :func:`verify_risk` (lowest id on ties)."""
    probs = source_probabilities(chain, exact)
    return min(probs, key=lambda n: (probs[n], n))


def source_success_stats(pm: ParityMdp, pol: FiniteStatePolicy, seed: int, steps: int,
                         source: int | None = None) -> GoalStats:
    """Monte Carlo trials that all start at one source node.

    Each trial leaves ``source`` and ends at the next goal node (success) or
    at a node that cannot reach a goal (failure); the next trial starts at
    ``source`` again.  ``steps`` bounds the total number of sampled
    transitions and an unfinished last trial is dropped.  By default the
    source is the node that attains :func:`verify_risk`, so the empirical
    rate estimates the achieved level itself.
    """
    chain = induced_chain(pm, pol)
    probs = source_probabilities(chain, exact=False)
    if source is None:
        source = min(probs, key=lambda n: (probs[n], n))
    elif source not in probs:
        raise ValueError(f"node {source} is not a source of the chain")
    rm = chain.mdp
    dead = reach_probabilities(chain, exact=False) <= 0
    P = rm.float_prob()
    rng = np.random.default_rng(seed)
    trials = successes = 0
    node = source
    for _ in range(steps):
        lo, hi = rm.edge_start[node], rm.edge_start[node + 1]
        cum = np.cumsum(P[lo:hi])
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        node = int(rm.succ[lo + min(k, hi - lo - 1)])
        if rm.goal[node] or dead[node]:
            trials += 1
            successes += int(rm.goal[node])
            node = source
    p = float(probs[source])
    return GoalStats(trials, successes, trials * p, trials * p * (1 - p))
