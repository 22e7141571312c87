"""Line-oriented text formats for MDPs, parity automata, parity MDPs, policies and traces.

Every format is UTF-8, whitespace separated, with ``#`` starting a comment.
Probabilities are decimals or ``num/den`` rationals and are read exactly.
"""

from __future__ import annotations

import io
from fractions import Fraction
from pathlib import Path

import numpy as np

from .model import Mdp, ModelError, ParityAutomaton, ParityMdp, TransitionSystem, pack_rows
from .policy import FiniteStatePolicy, Step


class FormatError(ModelError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def parse_probability(tok: str, exact: bool = True):
    try:
        value = Fraction(tok)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"bad probability {tok!r}") from None
    return value if exact else float(value)


def format_probability(p) -> str:
    if isinstance(p, Fraction):
        return str(p)
    return repr(float(p))


def _lines(text: str):
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _header(lines, expected: str):
    try:
        no, toks = next(lines)
    except StopIteration:
        raise FormatError(f"empty input, expected header {expected}") from None
    if toks != [expected]:
        raise FormatError(f"expected header {expected!r}, got {' '.join(toks)!r}", no)


class _Index(dict):
    def add(self, name: str) -> int:
        if name not in self:
            self[name] = len(self)
        return self[name]


def _parse_transition_model(text: str, kind: str, exact: bool):
    lines = _lines(text)
    _header(lines, kind)
    states, actions, symbols = _Index(), _Index(), _Index()
    attr: dict[int, object] = {}
    init = None
    trans: list[tuple[int, int, int, object, int]] = []
    pending = []
    key = "LABEL" if kind == "MDP" else "COLOR"
    for no, toks in lines:
        tag = toks[0]
        if tag == "STATE":
            if len(toks) != 4 or toks[2] != key:
                raise FormatError(f"expected STATE <name> {key} <value>", no)
            if toks[1] in states:
                raise FormatError(f"duplicate state {toks[1]!r}", no)
            s = states.add(toks[1])
            if kind == "MDP":
                attr[s] = symbols.add(toks[3])
            else:
                try:
                    attr[s] = int(toks[3])
                except ValueError:
                    raise FormatError(f"bad color {toks[3]!r}", no) from None
        elif tag == "INIT":
            if len(toks) != 2:
                raise FormatError("expected INIT <name>", no)
            init = (toks[1], no)
        elif tag == "T":
            if len(toks) != 5:
                raise FormatError("expected T <state> <action> <succ> <prob>", no)
            try:
                prob = parse_probability(toks[4], exact)
            except ValueError as exc:
                raise FormatError(str(exc), no) from None
            pending.append((no, toks[1], toks[2], toks[3], prob))
        else:
            raise FormatError(f"unknown record {tag!r}", no)
    if not states:
        raise FormatError("no states declared")
    for no, s, a, t, prob in pending:
        for name in (s, t):
            if name not in states:
                raise FormatError(f"unknown state {name!r}", no)
        trans.append((states[s], actions.add(a), states[t], prob, no))
    if init is not None and init[0] not in states:
        raise FormatError(f"unknown initial state {init[0]!r}", init[1])
    initial = states[init[0]] if init is not None else 0
    n = len(states)
    table: list[dict[int, list]] = [dict() for _ in range(n)]
    for s, a, t, prob, _ in trans:
        table[s].setdefault(a, []).append((t, prob))
    packed = pack_rows([sorted(rows.items()) for rows in table], exact)
    names = tuple(states)
    common = dict(state_names=names, action_names=tuple(actions), initial=initial, **packed)
    values = np.array([attr[s] for s in range(n)], dtype=np.int64)
    if kind == "MDP":
        return Mdp(alphabet=tuple(symbols), labels=values, **common)
    return ParityMdp(colors=values, **common)


def parse_mdp(text: str, exact: bool = True) -> Mdp:
    return _parse_transition_model(text, "MDP", exact)


def parse_pmdp(text: str, exact: bool = True) -> ParityMdp:
    return _parse_transition_model(text, "PMDP", exact)


def parse_dpa(text: str) -> ParityAutomaton:
    lines = _lines(text)
    _header(lines, "DPA")
    states, symbols = _Index(), _Index()
    colors: dict[int, int] = {}
    init = None
    deltas = []
    for no, toks in lines:
        tag = toks[0]
        if tag == "STATE":
            if len(toks) != 4 or toks[2] != "COLOR":
                raise FormatError("expected STATE <name> COLOR <int>", no)
            if toks[1] in states:
                raise FormatError(f"duplicate state {toks[1]!r}", no)
            try:
                colors[states.add(toks[1])] = int(toks[3])
            except ValueError:
                raise FormatError(f"bad color {toks[3]!r}", no) from None
        elif tag == "INIT":
            if len(toks) != 2:
                raise FormatError("expected INIT <name>", no)
            init = (toks[1], no)
        elif tag == "ALPHABET":
            for sym in toks[1:]:
                symbols.add(sym)
        elif tag == "D":
            if len(toks) != 4:
                raise FormatError("expected D <state> <symbol> <succ>", no)
            deltas.append((no, toks[1], symbols.add(toks[2]), toks[3]))
        else:
            raise FormatError(f"unknown record {tag!r}", no)
    if not states:
        raise FormatError("no states declared")
    delta = np.full((len(states), len(symbols)), -1, dtype=np.int64)
    for no, q, a, q2 in deltas:
        for name in (q, q2):
            if name not in states:
                raise FormatError(f"unknown state {name!r}", no)
        if delta[states[q], a] >= 0 and delta[states[q], a] != states[q2]:
            raise FormatError(f"nondeterministic transition for ({q}, {list(symbols)[a]})", no)
        delta[states[q], a] = states[q2]
    if init is not None and init[0] not in states:
        raise FormatError(f"unknown initial state {init[0]!r}", init[1])
    return ParityAutomaton(
        state_names=tuple(states), alphabet=tuple(symbols), delta=delta,
        initial=states[init[0]] if init else 0,
        colors=np.array([colors[q] for q in range(len(states))], dtype=np.int64))


def _write_transitions(m: TransitionSystem, out: io.StringIO) -> None:
    for s in range(m.n_states):
        for r in m.rows(s):
            a = m.action_names[m.row_action[r]]
            for t, p in m.distribution(r):
                out.write(f"T {m.state_names[s]} {a} {m.state_names[t]} {format_probability(p)}\n")


def write_mdp(m: Mdp) -> str:
    out = io.StringIO()
    out.write("MDP\n")
    for s, name in enumerate(m.state_names):
        out.write(f"STATE {name} LABEL {m.alphabet[m.labels[s]]}\n")
    out.write(f"INIT {m.state_names[m.initial]}\n")
    _write_transitions(m, out)
    return out.getvalue()


def write_pmdp(m: ParityMdp) -> str:
    out = io.StringIO()
    out.write("PMDP\n")
    for s, name in enumerate(m.state_names):
        out.write(f"STATE {name} COLOR {int(m.colors[s])}\n")
    out.write(f"INIT {m.state_names[m.initial]}\n")
    _write_transitions(m, out)
    return out.getvalue()


def write_dpa(a: ParityAutomaton) -> str:
    out = io.StringIO()
    out.write("DPA\n")
    out.write("ALPHABET " + " ".join(a.alphabet) + "\n")
    for q, name in enumerate(a.state_names):
        out.write(f"STATE {name} COLOR {int(a.colors[q])}\n")
    out.write(f"INIT {a.state_names[a.initial]}\n")
    for q, name in enumerate(a.state_names):
        for i, sym in enumerate(a.alphabet):
            if a.delta[q, i] >= 0:
                out.write(f"D {name} {sym} {a.state_names[a.delta[q, i]]}\n")
    return out.getvalue()


def read_model(path, exact: bool = True):
    """Parse a file by its header (MDP, PMDP or DPA)."""
    text = Path(path).read_text(encoding="utf-8")
    head = next(_lines(text), (None, [None]))[1][0]
    if head == "MDP":
        return parse_mdp(text, exact)
    if head == "PMDP":
        return parse_pmdp(text, exact)
    if head == "DPA":
        return parse_dpa(text)
    raise FormatError(f"unknown model header {head!r}")


# --------------------------------------------------------------------------
# policies


def write_policy(pol: FiniteStatePolicy, pm: ParityMdp) -> str:
    out = io.StringIO()
    p = pol.p if pol.p is not None else 0
    out.write(f"POLICY k={pol.k} p={format_probability(p)}\n")
    order = [pol.start] + [n for n in range(pol.n_nodes) if n != pol.start]
    ids = {n: i for i, n in enumerate(order)}
    for n in order:
        out.write(f"NODE {ids[n]} STATE {pm.state_names[pol.state[n]]} "
                  f"ACTION {pm.action_names[pol.action[n]]} GOAL {int(pol.goal[n])} "
                  f"GOALCOLOR {int(pol.goal_color[n])} BUDGET {int(pol.budget[n])}\n")
    for n in order:
        for e in range(pol.edge_start[n], pol.edge_start[n + 1]):
            out.write(f"EDGE {ids[n]} {pm.state_names[pol.edge_succ[e]]} {ids[int(pol.edge_target[e])]}\n")
    return out.getvalue()


def _parse_level(tok: str):
    # rationals are written as num/den or integers, floats with repr()
    if any(ch in tok for ch in ".eEn"):
        return float(tok)
    return Fraction(tok)


def parse_policy(text: str, pm: ParityMdp) -> FiniteStatePolicy:
    """Read a policy for ``pm``; node 0 is the start node."""
    lines = _lines(text)
    try:
        no, toks = next(lines)
    except StopIteration:
        raise FormatError("empty policy") from None
    if toks[0] != "POLICY":
        raise FormatError("expected POLICY header", no)
    meta = dict(t.split("=", 1) for t in toks[1:] if "=" in t)
    try:
        k = int(meta.get("k", 0))
        p = _parse_level(meta["p"]) if "p" in meta else None
    except ValueError:
        raise FormatError("bad POLICY header values", no) from None
    action_ids = {a: i for i, a in enumerate(pm.action_names)}
    nodes: dict[int, tuple] = {}
    edges: dict[int, list[tuple[int, int]]] = {}
    for no, toks in lines:
        try:
            if toks[0] == "NODE":
                f = dict(zip(toks[2::2], toks[3::2]))
                nid = int(toks[1])
                if nid in nodes:
                    raise FormatError(f"duplicate node {nid}", no)
                nodes[nid] = (pm.state_index(f["STATE"]), action_ids[f["ACTION"]], f["GOAL"] == "1",
                              int(f["GOALCOLOR"]), int(f["BUDGET"]))
            elif toks[0] == "EDGE":
                if len(toks) != 4:
                    raise FormatError("expected EDGE <id> <state> <id>", no)
                edges.setdefault(int(toks[1]), []).append((pm.state_index(toks[2]), int(toks[3])))
            else:
                raise FormatError(f"unknown record {toks[0]!r}", no)
        except (KeyError, ValueError, IndexError) as exc:
            raise FormatError(f"malformed record ({exc})", no) from None
    n = len(nodes)
    if sorted(nodes) != list(range(n)) or n == 0:
        raise FormatError("node ids must be 0..n-1")
    starts, succ, target = [0], [], []
    for i in range(n):
        for s, j in edges.get(i, []):
            if not 0 <= j < n:
                raise FormatError(f"edge from node {i} to unknown node {j}")
            succ.append(s)
            target.append(j)
        starts.append(len(succ))
    cols = list(zip(*(nodes[i] for i in range(n))))
    return FiniteStatePolicy(
        state=np.array(cols[0], dtype=np.int64), action=np.array(cols[1], dtype=np.int64),
        goal=np.array(cols[2], bool), goal_color=np.array(cols[3], dtype=np.int64),
        budget=np.array(cols[4], dtype=np.int64), edge_start=np.array(starts, dtype=np.int64),
        edge_succ=np.array(succ, dtype=np.int64), edge_target=np.array(target, dtype=np.int64),
        start=0, k=k, p=p)


def write_trace(trace: list[Step], pm: ParityMdp) -> str:
    return "".join(f"{st.step} {pm.state_names[st.state]} {pm.action_names[st.action]} "
                   f"{int(st.goal)} {st.color}\n" for st in trace)
