"""Risk-averse policy synthesis for parity MDPs.

The winning sets S_k[c] are computed layer by layer.  Layer k may use the
final sets of the earlier layers (the "carried" set: S[0] plus the members of
S[c] whose color is at least c) as goals that cost one decrease of the goal
color.  Within a layer the even colors are
processed from the top down; each S_k[c] is the greatest fixpoint of a
reachability test on an augmented MDP that tracks the odd colors seen since
the last goal.

Tag conventions on the augmented state (s, i):

* full construction: tag value ``c + 2*i`` is the least even number above every
  odd color seen so far (and >= c);
* simplified construction: ``i = 0`` (clean) or ``i = 1`` (an odd color > c
  has been seen).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import ParityMdp, TransitionSystem, _spread, restrict_rows
from .policy import FiniteStatePolicy, induced_chain, verify_risk
from .reach import (ARGMAX_TOL, ReachabilityMdp, SolverConfig, argmax_rows, first_rows,
                    row_values, solve, state_max)

FLOAT_SLACK = 1e-12
VARIANTS = ("full", "simplified")
BACKENDS = ("float", "exact")


def max_even_color(pm: ParityMdp) -> int:
    """Least even integer bounding every color of ``pm`` from above."""
    if pm.n_states == 0:
        raise ValueError("empty model")
    m = int(pm.colors.max())
    return m + (m & 1)


# --------------------------------------------------------------------------
# augmented reachability MDPs


def n_tags(c: int, cmax: int, variant: str) -> int:
    return 2 if variant == "simplified" else (cmax - c) // 2 + 1


def tag_update(tags: np.ndarray, colors: np.ndarray, c: int, variant: str) -> np.ndarray:
    """Tag after entering states of the given colors."""
    odd = (colors & 1) == 1
    if variant == "simplified":
        return np.where(odd & (colors > c), 1, tags)
    raised = np.maximum((colors + 1 - c) // 2, 0)
    return np.where(odd, np.maximum(tags, raised), tags)


def start_tags(colors: np.ndarray, c: int, variant: str) -> np.ndarray:
    """Tag of a state taken as the start of a trip with goal color ``c``.

    An odd-colored state cannot carry a goal color at or below its own
    color, so its tag is lifted past it.
    """
    return tag_update(np.zeros_like(colors), colors, c, variant)


def tag_values(c: int, cmax: int, variant: str) -> np.ndarray:
    """Goal color l carried by each tag while travelling."""
    if variant == "simplified":
        return np.array([c, cmax], dtype=np.int64)
    return np.arange(c, cmax + 1, 2, dtype=np.int64)


def _check_stage(pm: ParityMdp, c: int, variant: str) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    cmax = max_even_color(pm)
    if c % 2 or not 0 <= c <= cmax:
        raise ValueError(f"stage color must be even and in [0, {cmax}], got {c}")
    return cmax


def augment(pm: ParityMdp, c: int, variant: str = "full") -> ReachabilityMdp:
    """Augmented transition structure for stage color ``c`` with an all-zero goal.

    State ``s * T + i`` is (s, tag i); moving to s' copies P(s, a)(s') and
    updates the tag by the color of s'.
    """
    cmax = _check_stage(pm, c, variant)
    T = n_tags(c, cmax, variant)
    n = pm.n_states * T
    aug = np.arange(n)
    s_of, i_of = aug // T, aug % T
    rows_per = np.diff(pm.row_start)[s_of]
    orig_row = _spread(pm.row_start[:-1][s_of], rows_per)
    row_tag = np.repeat(i_of, rows_per)
    edges_per = np.diff(pm.edge_start)[orig_row]
    orig_edge = _spread(pm.edge_start[:-1][orig_row], edges_per)
    edge_tag = np.repeat(row_tag, edges_per)
    t = pm.succ[orig_edge]
    succ = t * T + tag_update(edge_tag, pm.colors[t], c, variant)
    values = tag_values(c, cmax, variant)
    if variant == "simplified":
        names = tuple(f"{pm.state_names[s]}@{'tainted' if i else 'clean'}" for s, i in zip(s_of, i_of))
    else:
        names = tuple(f"{pm.state_names[s]}@{values[i]}" for s, i in zip(s_of, i_of))
    return ReachabilityMdp(
        state_names=names,
        action_names=pm.action_names,
        row_start=np.concatenate([[0], np.cumsum(rows_per)]),
        row_action=pm.row_action[orig_row],
        edge_start=np.concatenate([[0], np.cumsum(edges_per)]),
        succ=succ,
        prob=pm.prob[orig_edge],
        initial=pm.initial * T + int(start_tags(pm.colors[pm.initial:pm.initial + 1], c, variant)[0]),
        goal=np.zeros(n, bool),
        base=s_of,
        tag=i_of,
    )


def stage_goal(pm: ParityMdp, c: int, current: np.ndarray, higher: dict[int, np.ndarray],
               carried: np.ndarray, variant: str = "full") -> np.ndarray:
    """Goal marking of the augmented states for stage color ``c``.

    ``current`` is the candidate S_k[c], ``higher[t]`` the final S_k[t] for
    even t > c and ``carried`` the set S_{k-1}.
    """
    cmax = _check_stage(pm, c, variant)
    T = n_tags(c, cmax, variant)
    colors = pm.colors
    even = (colors & 1) == 0
    goal = np.zeros((pm.n_states, T), bool)
    if variant == "simplified":
        goal[:, 0] = even & (colors >= c) & current
        goal[:, 1] = even & carried
    else:
        for i, t in enumerate(tag_values(c, cmax, variant)):
            members = current if t == c else higher[int(t)]
            goal[:, i] = even & (((colors >= t) & members) | carried)
    return goal.reshape(-1)


def stage_reachability(pm: ParityMdp, c: int, current, higher, carried) -> ReachabilityMdp:
    """Augmented reachability MDP tracking the running odd-color maximum."""
    base = augment(pm, c, "full")
    return base.with_goal(stage_goal(pm, c, np.asarray(current, bool), higher,
                                     np.asarray(carried, bool), "full"))


def stage_reachability_simplified(pm: ParityMdp, c: int, current, carried) -> ReachabilityMdp:
    """Augmented reachability MDP with a single clean/tainted bit."""
    base = augment(pm, c, "simplified")
    return base.with_goal(stage_goal(pm, c, np.asarray(current, bool), {},
                                     np.asarray(carried, bool), "simplified"))


# --------------------------------------------------------------------------
# winning sets


@dataclass(eq=False)
class Stage:
    """Solved stage (layer, c) at its fixpoint.

    ``values`` are the reachability values W of the augmented MDP, ``rows`` its
    optimal positional policy, ``departure``/``departure_rows`` the best value
    and row when leaving a state towards the next goal (at least one step).
    """

    layer: int
    color: int
    mdp: ReachabilityMdp
    values: np.ndarray
    rows: np.ndarray
    departure: np.ndarray
    departure_rows: np.ndarray
    members: np.ndarray
    start_index: np.ndarray
    inner_iterations: int

    def start_value(self, s: int):
        return self.departure[self.start_index[s]]


@dataclass(eq=False)
class Layer:
    index: int
    carried: np.ndarray
    sets: dict[int, np.ndarray]
    stages: dict[int, Stage]
    history: dict[int, list[np.ndarray]] = field(default_factory=dict)


@dataclass(eq=False)
class WinningSets:
    pm: ParityMdp
    p: object
    strict: bool
    variant: str
    backend: str
    cmax: int
    layers: list[Layer]
    feasible: bool
    lb_min: object = None

    @property
    def k_final(self) -> int:
        return len(self.layers)

    def sets(self, k: int) -> dict[int, np.ndarray]:
        """S_k[c] for layer ``k`` (1-based)."""
        return self.layers[k - 1].sets

    def contains(self, k: int, c: int, s: int) -> bool:
        return bool(self.layers[k - 1].sets[c][s])

    @property
    def winning(self) -> np.ndarray:
        return certified(self.pm, self.layers[-1].sets) | self.layers[-1].carried

    def carried_stage(self, s: int, upto: int) -> tuple[int, int] | None:
        """Lowest (layer, color) with m <= upto, s in S_m[c] and C(s) >= c."""
        C = int(self.pm.colors[s])
        for m in range(1, upto + 1):
            for c in range(0, min(C, self.cmax) + 1, 2):
                if self.layers[m - 1].sets[c][s]:
                    return m, c
        return None

    def first_layer(self, s: int, c: int, upto: int | None = None) -> int | None:
        """Smallest layer m <= upto with s in S_m[c]."""
        upto = self.k_final if upto is None else upto
        for m in range(1, upto + 1):
            if self.layers[m - 1].sets[c][s]:
                return m
        return None


def _as_threshold(p, backend: str):
    if backend == "exact":
        return Fraction(p) if not isinstance(p, float) else Fraction(str(p))
    return float(p)


def _passes(values: np.ndarray, p, strict: bool, backend: str) -> np.ndarray:
    if backend == "exact":
        if strict:
            return np.array([v > p for v in values], dtype=bool)
        return np.array([v >= p for v in values], dtype=bool)
    values = values.astype(np.float64)
    if strict:
        return values > p + FLOAT_SLACK
    return values >= p - FLOAT_SLACK


def _departure(aug: ReachabilityMdp, W):
    q = row_values(aug, W)
    allowed, best = argmax_rows(aug, q)
    return best, first_rows(aug, allowed)


def certified(pm: ParityMdp, sets: dict[int, np.ndarray]) -> np.ndarray:
    """States a later layer may switch to: S_k[0] plus S_k[c] members of color >= c.

    With the full construction this is S_k[0] itself (S_k[c] is contained
    in S_k[0]); the clean/tainted construction only reaches higher goal
    colors through this set.
    """
    out = sets[0].copy()
    for c, members in sets.items():
        out |= members & (pm.colors >= c)
    return out


def compute_winning_sets(pm: ParityMdp, p, variant: str = "simplified", backend: str = "float",
                         strict: bool = False, cfg: SolverConfig | None = None,
                         record: bool = False, max_layers: int | None = None) -> WinningSets:
    """Layered greatest-fixpoint computation of the (k, c)-winning sets.

    With ``strict`` the membership test is ``value > p`` and ``lb_min`` (the
    least value over all final stage members) is recorded.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    p = _as_threshold(p, backend)
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if backend == "exact" and not pm.exact:
        raise ValueError("exact backend needs a rational-mode model")
    cmax = max_even_color(pm)
    n = pm.n_states
    colors = range(cmax, -1, -2)
    structures = {c: augment(pm, c, variant) for c in colors}
    starts = {c: np.arange(n) * n_tags(c, cmax, variant) + start_tags(pm.colors, c, variant)
              for c in colors}
    carried = np.zeros(n, bool)
    layers: list[Layer] = []
    lb_min = None
    while True:
        k = len(layers) + 1
        sets: dict[int, np.ndarray] = {}
        stages: dict[int, Stage] = {}
        history: dict[int, list[np.ndarray]] = {}
        for c in colors:
            current = np.ones(n, bool)
            trail = [current.copy()] if record else None
            inner = 0
            while True:
                inner += 1
                goal = stage_goal(pm, c, current, sets, carried, variant)
                aug = structures[c].with_goal(goal)
                sv = solve(aug, backend, cfg)
                dep, dep_rows = _departure(aug, sv.values)
                dstart = dep[starts[c]]
                new = _passes(dstart, p, strict, backend) & current
                if record:
                    trail.append(new.copy())
                if np.array_equal(new, current):
                    break
                current = new
            sets[c] = current
            stages[c] = Stage(k, c, aug, sv.values, sv.rows, dep, dep_rows, current.copy(),
                              starts[c], inner)
            if record:
                history[c] = trail
            if strict and current.any():
                lb = min(dstart[current].tolist())
                lb_min = lb if lb_min is None else min(lb_min, lb)
        layers.append(Layer(k, carried.copy(), sets, stages, history))
        cert = certified(pm, sets)
        grown = cert & ~carried
        carried = carried | cert
        if not grown.any() or (max_layers is not None and k >= max_layers):
            break
    return WinningSets(pm, p, strict, variant, backend, cmax, layers,
                       bool(carried[pm.initial]), lb_min)


# --------------------------------------------------------------------------
# stitching


class InfeasibleError(RuntimeError):
    pass


def stitch_policy(ws: WinningSets, pm: ParityMdp | None = None, p=None) -> FiniteStatePolicy:
    """Finite-state policy assembled from the stage policies of ``ws``.

    Memory nodes are (state, layer, stage color, tag, mode) with mode one of
    start / goal / transit.  Start and goal nodes leave with the best
    departure row of their stage, transit nodes follow the stage's positional
    reachability policy.  On reaching a goal of the running stage the policy
    moves to the lowest layer that still certifies that goal: with the same
    goal color when the state is in S_m[tag] and has a high enough color,
    otherwise through the carried set with the lowest certifying layer and
    goal color (one decrease).
    """
    pm = ws.pm if pm is None else pm
    if not ws.feasible:
        raise InfeasibleError("no policy: the initial state is not winning")
    variant, cmax = ws.variant, ws.cmax
    colors = pm.colors
    s0 = pm.initial
    m0, c0 = ws.carried_stage(s0, ws.k_final)
    tagvals = {c: tag_values(c, cmax, variant) for c in range(0, cmax + 1, 2)}

    def stage(m, c) -> Stage:
        return ws.layers[m - 1].stages[c]

    def goal_node(s, m, tag_value, t_cur):
        # (s, m, tag) reached a goal of stage (m, c); pick the successor stage
        C = int(colors[s])
        if variant == "full":
            same = C >= tag_value and ws.contains(m, int(tag_value), s)
            c_new = int(tag_value)
        else:
            same = t_cur == 0
            c_new = int(tag_value)
        if same:
            return (s, ws.first_layer(s, c_new, m), c_new, 0, "goal")
        m2, c2 = ws.carried_stage(s, m - 1)
        return (s, m2, c2, 0, "goal")

    start_tag = int(start_tags(colors[s0:s0 + 1], c0, variant)[0])
    # an even start behaves exactly like a goal node and shares its key
    start = (s0, m0, c0, start_tag, "goal" if colors[s0] % 2 == 0 else "start")
    index = {start: 0}
    order = [start]
    node_state, node_action, node_goal, node_color, node_budget = [], [], [], [], []
    edge_start, edge_succ, edge_target = [0], [], []
    i = 0
    while i < len(order):
        s, m, c, t, mode = order[i]
        i += 1
        st = stage(m, c)
        T = n_tags(c, cmax, variant)
        x = s * T + t
        row = st.departure_rows[x] if mode != "transit" else st.rows[x]
        r = int(_base_row(pm, st.mdp, int(row)))
        node_state.append(s)
        node_action.append(int(pm.row_action[r]))
        node_goal.append(mode == "goal")
        node_color.append(int(tagvals[c][t]))
        node_budget.append(m)
        lo, hi = pm.edge_start[r], pm.edge_start[r + 1]
        for s2 in pm.succ[lo:hi].tolist():
            t2 = int(tag_update(np.array([t]), colors[s2:s2 + 1], c, variant)[0])
            if st.mdp.goal[s2 * T + t2]:
                key = goal_node(s2, m, tagvals[c][t2], t2)
            else:
                key = (s2, m, c, t2, "transit")
            if key not in index:
                index[key] = len(order)
                order.append(key)
            edge_succ.append(s2)
            edge_target.append(index[key])
        edge_start.append(len(edge_succ))
    return FiniteStatePolicy(
        state=np.array(node_state), action=np.array(node_action),
        goal=np.array(node_goal, bool), goal_color=np.array(node_color),
        budget=np.array(node_budget), edge_start=np.array(edge_start),
        edge_succ=np.array(edge_succ, dtype=np.int64), edge_target=np.array(edge_target, dtype=np.int64),
        start=0, k=ws.k_final, p=ws.lb_min if ws.strict else ws.p,
        memory=tuple(order))


def _base_row(pm: ParityMdp, aug: ReachabilityMdp, aug_row: int) -> int:
    """Row of ``pm`` that an augmented row copies."""
    s = int(aug.base[aug.row_state[aug_row]])
    a = int(aug.row_action[aug_row])
    return pm.find_row(s, a)


# --------------------------------------------------------------------------
# optimal search


@dataclass(eq=False)
class SearchOutcome:
    feasible: bool
    achieved_p: object
    policy: FiniteStatePolicy | None
    bracket: tuple
    winning_sets: WinningSets | None = None
    probes: list = field(default_factory=list)

    @property
    def k_final(self) -> int | None:
        return self.winning_sets.k_final if self.winning_sets is not None else None


def bisection_optimal(pm: ParityMdp, cutoff=0.001, variant: str = "simplified",
                      backend: str = "float", cfg: SolverConfig | None = None) -> SearchOutcome:
    """Bracket the best achievable risk-averseness level by interval halving.

    The lower end always carries a feasible policy; the first probe checks
    whether any positive level is attainable at all.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    zero = Fraction(0) if backend == "exact" else 0.0
    one = Fraction(1) if backend == "exact" else 1.0
    ws = compute_winning_sets(pm, zero, variant, backend, strict=True, cfg=cfg)
    probes = [(zero, ws.feasible)]
    if not ws.feasible:
        return SearchOutcome(False, zero, None, (zero, one), ws, probes)
    lo, hi, best = zero, one, ws
    while hi - lo > cutoff:
        mid = (lo + hi) / 2
        ws = compute_winning_sets(pm, mid, variant, backend, cfg=cfg)
        probes.append((mid, ws.feasible))
        if ws.feasible:
            lo, best = mid, ws
        else:
            hi = mid
    policy = stitch_policy(best)
    policy.p = lo
    return SearchOutcome(True, lo, policy, (lo, hi), best, probes)


def exact_optimal(pm: ParityMdp, variant: str = "simplified", backend: str = "exact",
                  cfg: SolverConfig | None = None) -> SearchOutcome:
    """Optimal level by repeated strict-threshold runs, raising p to lb_min each time.

    Stops at the first infeasible run; the previous policy is optimal and its
    level is exactly the last lb_min.
    """
    p = Fraction(0) if backend == "exact" else 0.0
    best = None
    probes = []
    while True:
        ws = compute_winning_sets(pm, p, variant, backend, strict=True, cfg=cfg)
        probes.append((p, ws.feasible))
        if not ws.feasible:
            break
        best = ws
        if ws.lb_min <= p:  # float rounding guard
            break
        p = ws.lb_min
    if best is None:
        return SearchOutcome(False, p, None, (p, p), ws, probes)
    policy = stitch_policy(best)
    return SearchOutcome(True, best.lb_min, policy, (best.lb_min, best.lb_min), best, probes)


def positional_level(pm: ParityMdp, rows, variant: str = "simplified") -> tuple:
    """Best level reachable by a fixed positional policy (one row per state).

    The labelings are still optimized: the search runs on the model
    restricted to the chosen rows and the result is checked with
    :func:`verify_risk`.  Returns (level, policy or None).
    """
    sub = restrict_rows(pm, np.asarray(rows))
    out = exact_optimal(sub, variant, "exact" if sub.exact else "float")
    if out.policy is None:
        return (Fraction(0) if sub.exact else 0.0), None
    return verify_risk(induced_chain(sub, out.policy)), out.policy
