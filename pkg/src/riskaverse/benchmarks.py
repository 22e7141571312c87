"""Grid-robot benchmark MDPs and small specification automata."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .model import Mdp, ParityAutomaton

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridWorkspace:
    """Rectangular grid; cell (x, y) covers [x, x+1] x [y, y+1]."""

    width: int
    height: int
    obstacles: frozenset = frozenset()
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("degenerate workspace")
        object.__setattr__(self, "obstacles", frozenset(self.obstacles))
        object.__setattr__(self, "regions", {k: frozenset(v) for k, v in self.regions.items()})
        for name, cells in [("obstacles", self.obstacles), *self.regions.items()]:
            for x, y in cells:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValueError(f"{name} cell {(x, y)} outside the workspace")

    def free(self, c: Cell) -> bool:
        x, y = c
        return 0 <= x < self.width and 0 <= y < self.height and c not in self.obstacles

    def region_of(self, c: Cell) -> str | None:
        for name, cells in self.regions.items():
            if c in cells:
                return name
        return None


def _box(x0, x1, y0, y1) -> set:
    return {(x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1)}


def walled_single_robot_workspace() -> GridWorkspace:
    """70 x 40 workspace: two walls with a central gap and a ledge on the bottom edge.

    The wall positions are calibrated so that the generated MDP has 681591
    edges; regions r1 / r2 sit left and right of the walls.
    """
    walls = set()
    for x in (12, 57):
        walls |= _box(x, x, 0, 15) | _box(x, x, 24, 39)
    walls |= _box(32, 38, 39, 39)
    return GridWorkspace(70, 40, frozenset(walls),
                         {"r1": _box(3, 6, 17, 22), "r2": _box(63, 66, 17, 22)})


def desk_single_robot_workspace() -> GridWorkspace:
    """15 x 9 workspace with two goal regions in the left and right thirds."""
    return GridWorkspace(15, 9, frozenset(),
                         {"r1": _box(2, 4, 3, 5), "r2": _box(10, 12, 3, 5)})


def delivery_multi_robot_workspace() -> GridWorkspace:
    obstacles = {(7, 0), (7, 1), (3, 2), (4, 2), (5, 2), (6, 2), (7, 2), (2, 5), (2, 6), (8, 9)}
    return GridWorkspace(11, 11, frozenset(obstacles), {
        "r1": {(2, 8)},
        "r2": {(8, 7)},
        "top_left": _box(0, 1, 0, 1),
        "top_right": _box(9, 10, 0, 1),
    })


# --------------------------------------------------------------------------
# single robot


SINGLE_ROBOT_ACTIONS = ("turn-left", "turn-right", "keep")


def _heading(d: int, n_dirs: int, shift, exact: bool):
    """Displacement for heading d; axis headings are exact, others rationalized in exact mode."""
    ang = 2 * math.pi * d / n_dirs
    out = []
    for v in (math.cos(ang), math.sin(ang)):
        if abs(v) < 1e-12:
            out.append(Fraction(0) if exact else 0.0)
        elif abs(abs(v) - 1) < 1e-12:
            out.append(Fraction(shift) * int(round(v)) if exact else float(shift) * round(v))
        elif exact:
            out.append(Fraction(shift * v).limit_denominator(10**6))
        else:
            out.append(shift * v)
    return out


def _footprint(dx, dy, inflate, zero):
    """Cells overlapped by the unit cell moved by (dx, dy) and inflated; offsets and areas."""
    x0, x1 = dx - inflate, dx + 1 + inflate
    y0, y1 = dy - inflate, dy + 1 + inflate
    out = []
    for i in range(math.floor(x0), math.ceil(x1)):
        wx = min(x1, i + 1) - max(x0, i)
        if wx <= zero:
            continue
        for j in range(math.floor(y0), math.ceil(y1)):
            wy = min(y1, j + 1) - max(y0, j)
            if wy > zero:
                out.append((i, j, wx * wy))
    return out


def gen_single_robot(ws: GridWorkspace, directions: int = 8, shift=2, inflate=Fraction(1, 10),
                     turn_fail=Fraction(1, 5), exact: bool = False) -> Mdp:
    """Unicycle robot on a grid.

    States are (cell, heading) plus an absorbing error state.  Each step the
    cell is shifted by ``shift`` cells along the current heading, the target
    square is inflated by ``inflate`` on every side, and the probability of
    each successor cell is proportional to its overlap area.  Mass on
    obstacles or outside the grid goes to the error state.  ``left`` /
    ``right`` change the heading of the successor by one step with
    probability 1 - ``turn_fail``; ``keep`` leaves it unchanged.  Motion
    always uses the heading before the turn.
    """
    W, H, D = ws.width, ws.height, directions
    num = Fraction if exact else float
    inflate, turn_fail = num(inflate), num(turn_fail)
    zero = 0
    total = (1 + 2 * inflate) ** 2
    moves = [_footprint(*_heading(d, D, shift, exact), inflate, zero) for d in range(D)]
    n_cells = W * H
    error = n_cells * D
    free = np.zeros((W, H), bool)
    for x in range(W):
        for y in range(H):
            free[x, y] = (x, y) not in ws.obstacles

    def state(x, y, d):
        return (x * H + y) * D + d

    row_start, row_action, edge_start, succ, prob = [0], [], [0], [], []
    ok_turn = 1 - turn_fail
    for x in range(W):
        for y in range(H):
            for d in range(D):
                cells, err = [], zero
                for i, j, area in moves[d]:
                    cx, cy = x + i, y + j
                    if 0 <= cx < W and 0 <= cy < H and free[cx, cy]:
                        cells.append((cx * H + cy, area / total))
                    else:
                        err += area
                # complement keeps float rows summing to one (exact mode: identical)
                err = 1 - sum(pr for _, pr in cells) if err > 0 else zero
                for a, name in enumerate(SINGLE_ROBOT_ACTIONS):
                    if name == "keep":
                        outs = [(c * D + d, pr) for c, pr in cells]
                    else:
                        d2 = (d + 1) % D if name == "turn-left" else (d - 1) % D
                        outs = [(c * D + d2, pr * ok_turn) for c, pr in cells]
                        outs += [(c * D + d, pr * turn_fail) for c, pr in cells]
                        outs = sorted(o for o in outs if o[1] > 0)
                    if err > 0:
                        outs.append((error, err))
                    for t, pr in outs:
                        succ.append(t)
                        prob.append(pr)
                    row_action.append(a)
                    edge_start.append(len(succ))
                row_start.append(len(row_action))
    row_action.append(SINGLE_ROBOT_ACTIONS.index("keep"))
    succ.append(error)
    prob.append(num(1))
    edge_start.append(len(succ))
    row_start.append(len(row_action))

    alphabet = ("none", *sorted(ws.regions), "crash")
    labels = np.zeros(error + 1, dtype=np.int64)
    for x in range(W):
        for y in range(H):
            r = ws.region_of((x, y))
            if r is not None:
                labels[(x * H + y) * D:(x * H + y + 1) * D] = alphabet.index(r)
    labels[error] = alphabet.index("crash")
    names = tuple(f"c{x}_{y}_h{d}" for x in range(W) for y in range(H) for d in range(D)) + ("error",)
    if exact:
        parr = np.empty(len(prob), dtype=object)
        parr[:] = prob
    else:
        parr = np.array(prob, dtype=np.float64)
    start = _start_cell(ws)
    return Mdp(state_names=names, action_names=SINGLE_ROBOT_ACTIONS,
               row_start=np.array(row_start), row_action=np.array(row_action),
               edge_start=np.array(edge_start), succ=np.array(succ), prob=parr,
               initial=state(*start, 0), alphabet=alphabet, labels=labels)


def _start_cell(ws: GridWorkspace) -> Cell:
    """Free cell closest to the workspace center (first in scan order on ties)."""
    cx, cy = (ws.width - 1) / 2, (ws.height - 1) / 2
    best = None
    for x in range(ws.width):
        for y in range(ws.height):
            if (x, y) in ws.obstacles:
                continue
            key = ((x - cx) ** 2 + (y - cy) ** 2, x, y)
            if best is None or key < best:
                best = key
    if best is None:
        raise ValueError("workspace has no free cell")
    return best[1], best[2]


# --------------------------------------------------------------------------
# two robots carrying an item


MOVES = {"L": (-1, 0), "R": (1, 0), "U": (0, -1), "D": (0, 1), "S": (0, 0)}


def _outcomes(a: str, fail):
    if a == "S":
        return [((0, 0), 1)]
    others = [b for b in "LRUD" if b != a]
    return [(MOVES[a], 1 - fail)] + [(MOVES[b], fail / 3) for b in others]


def gen_multi_robot(ws: GridWorkspace | None = None, move_fail=Fraction(2, 25),
                    starts: tuple[Cell, Cell] = ((1, 1), (5, 5)), exact: bool = True) -> Mdp:
    """Two robots on a grid that jointly carry an item from region r1 to region r2.

    States: both robots on distinct free cells (not carrying); carrying
    configurations with robot 2 exactly two cells right of robot 1; an error
    state and a ``delivered`` state.  Each robot moves L/R/U/D (intended
    direction with probability 1 - move_fail, each other direction
    move_fail/3) or stays.  Leaving the grid, entering an obstacle or (when
    not carrying) meeting in one cell is an error; while carrying, the item
    keeps the robots apart (a meeting outcome leaves both in place).  The item
    is lost, without error, when the carrying relation breaks.  ``pickup``
    is enabled when the robots flank the r1 cell, ``drop`` when they
    carry and flank the r2 cell; ``delivered`` returns to that flanking configuration.
    """
    ws = ws or delivery_multi_robot_workspace()
    for name in ("r1", "r2"):
        if len(ws.regions.get(name, ())) != 1:
            raise ValueError(f"workspace needs a single-cell {name!r} region")
    num = Fraction if exact else float
    fail = num(move_fail)
    free = sorted(((x, y) for y in range(ws.height) for x in range(ws.width) if ws.free((x, y))),
                  key=lambda c: (c[1], c[0]))
    loose = [(p, q) for p in free for q in free if p != q]
    carrying = [(p, (p[0] + 2, p[1])) for p in free if ws.free((p[0] + 2, p[1]))]
    index: dict = {}
    names = []
    for p, q in loose:
        index[(False, p, q)] = len(names)
        names.append(f"r{p[0]}_{p[1]}-r{q[0]}_{q[1]}")
    for p, q in carrying:
        index[(True, p, q)] = len(names)
        names.append(f"c{p[0]}_{p[1]}-c{q[0]}_{q[1]}")
    error = len(names)
    names.append("error")
    delivered = len(names)
    names.append("delivered")

    (px, py), = ws.regions["r1"]
    (dx, dy), = ws.regions["r2"]
    pick_state = (False, (px - 1, py), (px + 1, py))
    drop_state = (True, (dx - 1, dy), (dx + 1, dy))
    joint = [a + b for a in MOVES for b in MOVES]
    actions = tuple(joint) + ("pickup", "drop", "wait")
    outcomes = {a: _outcomes(a, fail) for a in MOVES}

    row_start, row_action, edge_start, succ, prob = [0], [], [0], [], []

    def emit(a, dist):
        row_action.append(actions.index(a))
        for t in sorted(dist):
            succ.append(t)
            prob.append(dist[t])
        edge_start.append(len(succ))

    for key in [(False, p, q) for p, q in loose] + [(True, p, q) for p, q in carrying]:
        carry, p, q = key
        for a in joint:
            dist: dict[int, object] = {}
            for (m1, w1), (m2, w2) in product(outcomes[a[0]], outcomes[a[1]]):
                p2 = (p[0] + m1[0], p[1] + m1[1])
                q2 = (q[0] + m2[0], q[1] + m2[1])
                w = w1 * w2
                if not ws.free(p2) or not ws.free(q2):
                    t = error
                elif p2 == q2:
                    t = index[key] if carry else error
                elif carry and q2 == (p2[0] + 2, p2[1]):
                    t = index[(True, p2, q2)]
                else:
                    t = index[(False, p2, q2)]
                dist[t] = dist.get(t, 0) + w
            emit(a, dist)
        if key == pick_state:
            emit("pickup", {index[(True, p, q)]: num(1)})
        if key == drop_state:
            emit("drop", {delivered: num(1)})
        row_start.append(len(row_action))
    emit("wait", {error: num(1)})
    row_start.append(len(row_action))
    emit("wait", {index[(False, drop_state[1], drop_state[2])]: num(1)})
    row_start.append(len(row_action))

    alphabet = ("none", "tl1", "tr2", "tl1_tr2", "forbidden", "delivered", "crash")
    labels = np.zeros(len(names), dtype=np.int64)
    tl, tr = ws.regions.get("top_left", frozenset()), ws.regions.get("top_right", frozenset())
    for (carry, p, q), s in index.items():
        if {p, q} & {(px, py), (dx, dy)}:
            lab = "forbidden"
        elif p in tl and q in tr:
            lab = "tl1_tr2"
        elif p in tl:
            lab = "tl1"
        elif q in tr:
            lab = "tr2"
        else:
            lab = "none"
        labels[s] = alphabet.index(lab)
    labels[error] = alphabet.index("crash")
    labels[delivered] = alphabet.index("delivered")
    if exact:
        parr = np.empty(len(prob), dtype=object)
        parr[:] = prob
    else:
        parr = np.array([float(v) for v in prob], dtype=np.float64)
    return Mdp(state_names=tuple(names), action_names=actions,
               row_start=np.array(row_start), row_action=np.array(row_action),
               edge_start=np.array(edge_start), succ=np.array(succ), prob=parr,
               initial=index[(False, starts[0], starts[1])], alphabet=alphabet, labels=labels)


# --------------------------------------------------------------------------
# specification automata


def _automaton(states, alphabet, colors, step, initial=0) -> ParityAutomaton:
    delta = np.array([[step(q, a) for a in alphabet] for q in range(len(states))], dtype=np.int64)
    return ParityAutomaton(tuple(states), tuple(alphabet), delta, initial,
                           np.array(colors, dtype=np.int64))


def builtin_spec_automata(name: str, alphabet=None) -> ParityAutomaton:
    """Small deterministic parity automata over region labels.

    * ``patrol-2``: visit r1 and r2 infinitely often (3 states, colors 1, 2).
    * ``ordered-visit-3``: infinitely often visit r1, r2, r3 in this order.
    * ``visit-avoid``: visit r1 infinitely often and never see ``bad`` or
      ``crash`` (those lead to a sink with the largest, odd, color).

    ``alphabet`` defaults to the symbols the automaton mentions plus
    ``none`` and ``crash``; extra symbols behave like ``none``.
    """
    if name == "patrol-2":
        base = ("none", "r1", "r2", "crash")
        alphabet = _merge(base, alphabet)

        def step(q, a):
            if q == 0:
                return 1 if a == "r1" else 0
            if q == 1:
                return 2 if a == "r2" else 1
            return 1 if a == "r1" else 0

        return _automaton(("wait_r1", "wait_r2", "done"), alphabet, (1, 1, 2), step)
    if name == "ordered-visit-3":
        base = ("none", "r1", "r2", "r3", "crash")
        alphabet = _merge(base, alphabet)
        want = ("r1", "r2", "r3")

        def step(q, a):
            k = q % 3 if q < 3 else 0
            if a == want[k]:
                return 3 if k == 2 else k + 1
            return k

        return _automaton(("wait_r1", "wait_r2", "wait_r3", "done"), alphabet, (1, 1, 1, 2), step)
    if name == "visit-avoid":
        base = ("none", "r1", "bad", "crash")
        alphabet = _merge(base, alphabet)

        def step(q, a):
            if q == 2 or a in ("bad", "crash"):
                return 2
            return 1 if a == "r1" else 0

        return _automaton(("away", "visit", "failed"), alphabet, (1, 2, 3), step)
    raise ValueError(f"unknown automaton {name!r}; choose from patrol-2, ordered-visit-3, visit-avoid")


def _merge(base, extra):
    if extra is None:
        return base
    return tuple(base) + tuple(a for a in extra if a not in base)


BUILTIN_AUTOMATA = ("patrol-2", "ordered-visit-3", "visit-avoid")
