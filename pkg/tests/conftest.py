import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from riskaverse import load_fixture  # noqa: E402
from riskaverse.model import Mdp, ParityAutomaton, ParityMdp, pack_rows  # noqa: E402
from riskaverse.reach import ReachabilityMdp  # noqa: E402


@pytest.fixture
def four_loops():
    return load_fixture("four_loops.pmdp")


@pytest.fixture
def detour():
    return load_fixture("detour.pmdp")


def make_pmdp(table, colors, exact=True, initial=0, actions=None):
    """ParityMdp from ``table[s] = [(action, [(succ, prob), ...]), ...]``."""
    n_act = 1 + max(a for rows in table for a, _ in rows)
    actions = actions or tuple(f"a{i}" for i in range(n_act))
    return ParityMdp(state_names=tuple(f"s{i}" for i in range(len(table))), action_names=actions,
                     initial=initial, colors=np.array(colors), **pack_rows(table, exact))


def make_mdp(table, labels, alphabet, exact=True, initial=0):
    n_act = 1 + max(a for rows in table for a, _ in rows)
    return Mdp(state_names=tuple(f"s{i}" for i in range(len(table))),
               action_names=tuple(f"a{i}" for i in range(n_act)), initial=initial,
               alphabet=tuple(alphabet), labels=np.array([alphabet.index(x) for x in labels]),
               **pack_rows(table, exact))


def make_reach(table, goal, exact=True, initial=0):
    n_act = 1 + max(a for rows in table for a, _ in rows)
    return ReachabilityMdp(state_names=tuple(f"s{i}" for i in range(len(table))),
                           action_names=tuple(f"a{i}" for i in range(n_act)), initial=initial,
                           goal=np.array(goal, bool), **pack_rows(table, exact))


def make_dpa(delta, colors, alphabet, initial=0):
    return ParityAutomaton(tuple(f"q{i}" for i in range(len(delta))), tuple(alphabet),
                           np.array(delta), initial, np.array(colors))


F = Fraction


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
