"""Core data model: MDPs, deterministic parity automata and their product.

All models use dense integer indices for states, actions and symbols and keep
the display names in side tables.  Transitions are stored in a compressed
row layout: the enabled (state, action) pairs of state ``s`` are the rows
``row_start[s]:row_start[s + 1]`` and the successors of row ``r`` are
``succ[edge_start[r]:edge_start[r + 1]]`` with probabilities in ``prob``.

Probabilities are either a ``float64`` array (float mode) or an object array
of :class:`fractions.Fraction` (rational mode).
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

FLOAT_SUM_TOL = 1e-9


class ModelError(ValueError):
    """Raised for structurally unusable models (e.g. an alphabet mismatch)."""


def _frozen(a, dtype=None):
    a = np.asarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TransitionSystem:
    """Shared compressed transition structure of every MDP flavour."""

    state_names: tuple[str, ...]
    action_names: tuple[str, ...]
    row_start: np.ndarray
    row_action: np.ndarray
    edge_start: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    initial: int

    def __post_init__(self):
        for name in ("row_start", "row_action", "edge_start", "succ"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        prob = np.asarray(self.prob)
        if prob.dtype != object:
            prob = prob.astype(np.float64)
        object.__setattr__(self, "prob", _frozen(prob))

    @property
    def n_states(self) -> int:
        return len(self.row_start) - 1

    @property
    def n_rows(self) -> int:
        return len(self.row_action)

    @property
    def n_edges(self) -> int:
        return len(self.succ)

    @property
    def exact(self) -> bool:
        return self.prob.dtype == object

    def rows(self, s: int) -> range:
        return range(self.row_start[s], self.row_start[s + 1])

    def edges(self, r: int) -> range:
        return range(self.edge_start[r], self.edge_start[r + 1])

    def distribution(self, r: int) -> list[tuple[int, Fraction | float]]:
        lo, hi = self.edge_start[r], self.edge_start[r + 1]
        return list(zip(self.succ[lo:hi].tolist(), self.prob[lo:hi].tolist()))

    def enabled(self, s: int) -> list[int]:
        return self.row_action[self.row_start[s]:self.row_start[s + 1]].tolist()

    def find_row(self, s: int, a: int) -> int:
        """Row of the enabled pair ``(s, a)``, or -1 when ``a`` is not enabled."""
        lo, hi = self.row_start[s], self.row_start[s + 1]
        hits = np.nonzero(self.row_action[lo:hi] == a)[0]
        return int(lo + hits[0]) if len(hits) else -1

    @property
    def row_state(self) -> np.ndarray:
        cached = self.__dict__.get("_row_state")
        if cached is None:
            cached = np.repeat(np.arange(self.n_states), np.diff(self.row_start))
            object.__setattr__(self, "_row_state", cached)
        return cached

    @property
    def edge_row(self) -> np.ndarray:
        cached = self.__dict__.get("_edge_row")
        if cached is None:
            cached = np.repeat(np.arange(self.n_rows), np.diff(self.edge_start))
            object.__setattr__(self, "_edge_row", cached)
        return cached

    def float_prob(self) -> np.ndarray:
        if not self.exact:
            return self.prob
        cached = self.__dict__.get("_float_prob")
        if cached is None:
            cached = np.array([float(p) for p in self.prob], dtype=np.float64)
            object.__setattr__(self, "_float_prob", cached)
        return cached

    def matrix(self) -> sp.csr_matrix:
        """Row-by-state probability matrix (float), cached."""
        cached = self.__dict__.get("_matrix")
        if cached is None:
            cached = sp.csr_matrix(
                (self.float_prob(), self.succ, self.edge_start),
                shape=(self.n_rows, self.n_states))
            object.__setattr__(self, "_matrix", cached)
        return cached

    def successor_graph(self) -> sp.csr_matrix:
        """State-to-state adjacency (any action, positive probability)."""
        m = sp.csr_matrix(
            (np.ones(self.n_edges, dtype=np.int8), (self.row_state[self.edge_row], self.succ)),
            shape=(self.n_states, self.n_states))
        m.sum_duplicates()
        return m

    def state_index(self, name: str) -> int:
        index = self.__dict__.get("_state_index")
        if index is None:
            index = {n: i for i, n in enumerate(self.state_names)}
            object.__setattr__(self, "_state_index", index)
        return index[name]

    def to_float(self):
        """Copy of the model in float mode."""
        return dataclasses.replace(self, prob=self.float_prob().copy())


@dataclass(frozen=True, eq=False)
class Mdp(TransitionSystem):
    """Labeled MDP: each state carries one symbol of ``alphabet``."""

    alphabet: tuple[str, ...] = ()
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))


@dataclass(frozen=True, eq=False)
class ParityMdp(TransitionSystem):
    """MDP whose states carry nonnegative integer colors.

    ``origin`` optionally records the (mdp-state, automaton-state) pair each
    product state came from, as an ``(n, 2)`` integer array.
    """

    colors: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    origin: np.ndarray | None = None

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "colors", _frozen(self.colors, np.int64))
        if self.origin is not None:
            object.__setattr__(self, "origin", _frozen(self.origin, np.int64))


@dataclass(frozen=True, eq=False)
class ParityAutomaton:
    """Deterministic parity automaton.

    ``delta[q, a]`` is the successor of ``q`` on symbol ``a``; -1 marks a
    missing entry (which :func:`validate` reports).
    """

    state_names: tuple[str, ...]
    alphabet: tuple[str, ...]
    delta: np.ndarray
    initial: int
    colors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", _frozen(self.delta, np.int64))
        object.__setattr__(self, "colors", _frozen(self.colors, np.int64))

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def step(self, q: int, symbol: str | int) -> int:
        a = self.alphabet.index(symbol) if isinstance(symbol, str) else symbol
        return int(self.delta[q, a])

    def run(self, word: Iterable[str | int], q: int | None = None) -> list[int]:
        """Automaton states visited while reading ``word`` (excluding the start)."""
        q = self.initial if q is None else q
        out = []
        for sym in word:
            q = self.step(q, sym)
            out.append(q)
        return out


def pack_rows(table: Sequence[Sequence[tuple[int, Sequence[tuple[int, object]]]]], exact: bool):
    """Build compressed arrays from ``table[s] = [(action, [(succ, prob), ...]), ...]``."""
    row_start = [0]
    row_action, edge_start, succ, prob = [], [0], [], []
    for rows in table:
        for a, dist in rows:
            row_action.append(a)
            for t, p in dist:
                succ.append(t)
                prob.append(p)
            edge_start.append(len(succ))
        row_start.append(len(row_action))
    if exact:
        parr = np.empty(len(prob), dtype=object)
        parr[:] = [Fraction(p) for p in prob]
    else:
        parr = np.array([float(p) for p in prob], dtype=np.float64)
    return dict(row_start=row_start, row_action=row_action, edge_start=edge_start,
                succ=succ, prob=parr)


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "valid" if self.ok else "\n".join(self.findings)


def _validate_transitions(m: TransitionSystem, out: list[str]) -> None:
    n = m.n_states
    names = m.state_names
    if len(names) != n:
        out.append(f"state name table has {len(names)} entries for {n} states")
        names = tuple(str(i) for i in range(n))
    if not 0 <= m.initial < n:
        out.append(f"initial state {m.initial} out of range")
    if np.any(np.diff(m.row_start) < 0) or np.any(np.diff(m.edge_start) < 0):
        out.append("corrupt row layout")
        return
    for s in range(n):
        rows = m.rows(s)
        if len(rows) == 0:
            out.append(f"state {names[s]} has no enabled action")
        acts = m.row_action[rows.start:rows.stop].tolist()
        if len(set(acts)) != len(acts):
            out.append(f"state {names[s]} lists an action twice")
        for r in rows:
            a = int(m.row_action[r])
            aname = m.action_names[a] if 0 <= a < len(m.action_names) else str(a)
            if not 0 <= a < len(m.action_names):
                out.append(f"({names[s]}, {aname}): unknown action index")
            lo, hi = m.edge_start[r], m.edge_start[r + 1]
            targets = m.succ[lo:hi].tolist()
            probs = m.prob[lo:hi].tolist()
            if not targets:
                out.append(f"({names[s]}, {aname}): empty distribution")
                continue
            if len(set(targets)) != len(targets):
                out.append(f"({names[s]}, {aname}): duplicate successor")
            if any(not 0 <= t < n for t in targets):
                out.append(f"({names[s]}, {aname}): successor out of range")
            if any(not p > 0 or p > 1 for p in probs):
                out.append(f"({names[s]}, {aname}): probability outside (0, 1]")
            total = sum(probs)
            if m.exact:
                if total != 1:
                    out.append(f"({names[s]}, {aname}): probabilities sum to {total}")
            elif abs(total - 1.0) > FLOAT_SUM_TOL:
                out.append(f"({names[s]}, {aname}): probabilities sum to {total!r}")


def validate(model) -> ValidationReport:
    """List every violated invariant of ``model``; an empty report means valid."""
    out: list[str] = []
    if isinstance(model, ParityAutomaton):
        nq, ns = model.n_states, len(model.alphabet)
        if model.delta.shape != (nq, ns):
            out.append(f"transition table has shape {model.delta.shape}, expected {(nq, ns)}")
        else:
            for q in range(nq):
                for a in range(ns):
                    t = model.delta[q, a]
                    if t < 0:
                        out.append(f"missing transition for ({model.state_names[q]}, {model.alphabet[a]})")
                    elif t >= nq:
                        out.append(f"transition ({model.state_names[q]}, {model.alphabet[a]}) out of range")
        if len(model.colors) != nq:
            out.append("color table size mismatch")
        elif np.any(model.colors < 0):
            out.append("negative color")
        if not 0 <= model.initial < nq:
            out.append(f"initial state {model.initial} out of range")
        return ValidationReport(out)

    _validate_transitions(model, out)
    if isinstance(model, Mdp):
        if len(model.labels) != model.n_states:
            out.append("label table size mismatch")
        elif np.any((model.labels < 0) | (model.labels >= len(model.alphabet))):
            bad = np.nonzero((model.labels < 0) | (model.labels >= len(model.alphabet)))[0]
            out.append(f"state {model.state_names[bad[0]]} has an unknown label")
    elif isinstance(model, ParityMdp):
        if len(model.colors) != model.n_states:
            out.append("color table size mismatch")
        elif np.any(model.colors < 0):
            bad = np.nonzero(model.colors < 0)[0]
            out.append(f"state {model.state_names[bad[0]]} has a negative color")
    return ValidationReport(out)


# --------------------------------------------------------------------------
# product and pruning


def _spread(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of ``range(starts[i], starts[i] + counts[i])`` for all i."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, np.int64)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    return np.repeat(starts, counts) + (np.arange(total) - offsets)


def build_product(mdp: Mdp, automaton: ParityAutomaton) -> ParityMdp:
    """Product parity MDP on ``S x Q``; the product state ``(s, q)`` has index ``s * |Q| + q``.

    Moving to ``s'`` from ``(s, q)`` lands in ``(s', delta(q, L(s')))``; the
    color of ``(s, q)`` is the color of ``q``.
    """
    missing = [a for a in mdp.alphabet if a not in automaton.alphabet]
    if missing:
        raise ModelError(f"alphabet mismatch: automaton lacks symbols {missing}")
    sym_map = np.array([automaton.alphabet.index(a) for a in mdp.alphabet], dtype=np.int64)
    if np.any(automaton.delta < 0):
        raise ModelError("automaton transition function is not total")
    nS, nQ = mdp.n_states, automaton.n_states
    ps = np.arange(nS * nQ)
    s_of, q_of = ps // nQ, ps % nQ

    rows_per = np.diff(mdp.row_start)[s_of]
    orig_row = _spread(mdp.row_start[:-1][s_of], rows_per)
    row_q = np.repeat(q_of, rows_per)
    edges_per = np.diff(mdp.edge_start)[orig_row]
    orig_edge = _spread(mdp.edge_start[:-1][orig_row], edges_per)
    edge_q = np.repeat(row_q, edges_per)

    t = mdp.succ[orig_edge]
    sym = sym_map[mdp.labels[t]]
    new_succ = t * nQ + automaton.delta[edge_q, sym]

    names = tuple(f"{mdp.state_names[s]}|{automaton.state_names[q]}"
                  for s in range(nS) for q in range(nQ))
    return ParityMdp(
        state_names=names,
        action_names=mdp.action_names,
        row_start=np.concatenate([[0], np.cumsum(rows_per)]),
        row_action=mdp.row_action[orig_row],
        edge_start=np.concatenate([[0], np.cumsum(edges_per)]),
        succ=new_succ,
        prob=mdp.prob[orig_edge],
        initial=mdp.initial * nQ + automaton.initial,
        colors=automaton.colors[q_of],
        origin=np.stack([s_of, q_of], axis=1),
    )


def reachable_states(m: TransitionSystem) -> np.ndarray:
    """Boolean mask of states reachable from the initial state."""
    seen = np.zeros(m.n_states, dtype=bool)
    seen[m.initial] = True
    queue = deque([m.initial])
    rs, es, succ = m.row_start, m.edge_start, m.succ
    while queue:
        s = queue.popleft()
        for t in succ[es[rs[s]]:es[rs[s + 1]]].tolist():
            if not seen[t]:
                seen[t] = True
                queue.append(t)
    return seen


def restrict(m: TransitionSystem, keep: np.ndarray):
    """Sub-model on the states in ``keep`` (closed under successors)."""
    keep = np.asarray(keep, dtype=bool)
    new_index = np.full(m.n_states, -1, dtype=np.int64)
    kept = np.nonzero(keep)[0]
    new_index[kept] = np.arange(len(kept))
    rows_per = np.diff(m.row_start)[kept]
    rows = _spread(m.row_start[:-1][kept], rows_per)
    edges_per = np.diff(m.edge_start)[rows]
    edges = _spread(m.edge_start[:-1][rows], edges_per)
    succ = new_index[m.succ[edges]]
    if np.any(succ < 0):
        raise ModelError("restriction is not closed under successors")
    changes = dict(
        state_names=tuple(m.state_names[i] for i in kept),
        row_start=np.concatenate([[0], np.cumsum(rows_per)]),
        row_action=m.row_action[rows],
        edge_start=np.concatenate([[0], np.cumsum(edges_per)]),
        succ=succ,
        prob=m.prob[edges],
        initial=int(new_index[m.initial]),
    )
    if isinstance(m, Mdp):
        changes["labels"] = m.labels[kept]
    if isinstance(m, ParityMdp):
        changes["colors"] = m.colors[kept]
        if m.origin is not None:
            changes["origin"] = m.origin[kept]
    for extra in ("goal", "base", "tag"):
        val = getattr(m, extra, None)
        if val is not None:
            changes[extra] = val[kept]
    return dataclasses.replace(m, **changes)


def prune_unreachable(pm: TransitionSystem):
    """Restriction of ``pm`` to the states reachable from its initial state."""
    keep = reachable_states(pm)
    if keep.all():
        return pm
    return restrict(pm, keep)


def model_stats(m: TransitionSystem) -> dict[str, int]:
    return {"states": m.n_states, "pairs": m.n_rows, "edges": m.n_edges}


def restrict_rows(m: TransitionSystem, rows: np.ndarray):
    """Copy of ``m`` keeping only the given rows (one entry per state, or -1 to keep all)."""
    rows = np.asarray(rows, dtype=np.int64)
    keep = np.zeros(m.n_rows, bool)
    for s in range(m.n_states):
        if rows[s] < 0:
            keep[m.row_start[s]:m.row_start[s + 1]] = True
        else:
            if not m.row_start[s] <= rows[s] < m.row_start[s + 1]:
                raise ModelError(f"row {rows[s]} does not belong to state {s}")
            keep[rows[s]] = True
    kept = np.nonzero(keep)[0]
    rows_per = np.bincount(m.row_state[kept], minlength=m.n_states)
    edges_per = np.diff(m.edge_start)[kept]
    edges = _spread(m.edge_start[:-1][kept], edges_per)
    return dataclasses.replace(
        m,
        row_start=np.concatenate([[0], np.cumsum(rows_per)]),
        row_action=m.row_action[kept],
        edge_start=np.concatenate([[0], np.cumsum(edges_per)]),
        succ=m.succ[edges],
        prob=m.prob[edges],
    )
