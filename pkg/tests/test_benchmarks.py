from fractions import Fraction as F

import numpy as np
import pytest

from riskaverse.benchmarks import (BUILTIN_AUTOMATA, GridWorkspace, builtin_spec_automata,
                                   desk_single_robot_workspace, gen_multi_robot, gen_single_robot,
                                   walled_single_robot_workspace)
from riskaverse.model import build_product, model_stats, validate
from riskaverse.policy import trace_accepting


def _error_absorbing(m):
    e = m.state_index("error")
    for r in m.rows(e):
        assert m.distribution(r) == [(e, 1)]


def test_walled_single_robot_counts():
    m = gen_single_robot(walled_single_robot_workspace())
    assert model_stats(m) == {"states": 22401, "pairs": 67201, "edges": 681591}


def test_one_cell_workspace_sends_all_mass_to_error():
    m = gen_single_robot(GridWorkspace(1, 1), exact=True)
    e = m.state_index("error")
    for s in range(m.n_states):
        for r in m.rows(s):
            assert m.distribution(r) == [(e, F(1))]
    assert validate(m).ok


@pytest.mark.parametrize("exact", [True, False])
@pytest.mark.parametrize("shape", [(5, 4), (7, 3), (15, 9)])
def test_single_robot_validation_sweep(shape, exact):
    w, h = shape
    ws = GridWorkspace(w, h, obstacles={(w // 2, h // 2)}, regions={"r1": {(0, 0)}})
    m = gen_single_robot(ws, exact=exact)
    assert validate(m).ok
    _error_absorbing(m)
    # obstacle cells keep their states; entering them leads to error
    assert m.n_states == w * h * 8 + 1
    assert m.alphabet == ("none", "r1", "crash")


def test_single_robot_rational_mass_is_exact():
    m = gen_single_robot(GridWorkspace(6, 5), exact=True)
    for r in range(m.n_rows):
        assert sum(p for _, p in m.distribution(r)) == 1


def test_single_robot_turn_failure():
    m = gen_single_robot(GridWorkspace(9, 9), exact=True)
    s = m.state_index("c4_4_h0")
    keep = m.find_row(s, m.action_names.index("keep"))
    left = m.find_row(s, m.action_names.index("turn-left"))
    # cells reached are the same; headings split 4/5 to the turned heading
    heads = {}
    for t, p in m.distribution(left):
        h = m.state_names[t].rsplit("_h", 1)[1]
        heads[h] = heads.get(h, 0) + p
    assert sorted(heads.values()) == [F(1, 5), F(4, 5)]
    assert sum(p for _, p in m.distribution(keep)) == 1


def test_desk_workspace_regions():
    ws = desk_single_robot_workspace()
    assert (ws.width, ws.height) == (15, 9)
    assert set(ws.regions) == {"r1", "r2"}
    assert model_stats(gen_single_robot(ws))["states"] == 15 * 9 * 8 + 1


def test_workspace_bounds_checked():
    with pytest.raises(ValueError):
        GridWorkspace(0, 3)
    with pytest.raises(ValueError):
        GridWorkspace(3, 3, obstacles={(3, 0)})
    with pytest.raises(ValueError):
        GridWorkspace(3, 3, regions={"r1": {(0, -1)}})


# ----------------------------------------------------------- multi robot


def _small_multi():
    # r1 at (2,1) flanked by (1,1)/(3,1); r2 at (5,1) flanked by (4,1)/(6,1)
    return GridWorkspace(7, 3, obstacles={(0, 0)}, regions={"r1": {(2, 1)}, "r2": {(5, 1)}})


@pytest.mark.parametrize("exact", [True, False])
def test_multi_robot_validation_sweep(exact):
    m = gen_multi_robot(_small_multi(), starts=((1, 1), (4, 2)), exact=exact)
    assert validate(m).ok
    _error_absorbing(m)


def test_multi_robot_stay_stay_is_self_loop():
    m = gen_multi_robot(_small_multi(), starts=((1, 1), (4, 2)))
    a = m.action_names.index("SS")
    checked = 0
    for s in range(m.n_states):
        name = m.state_names[s]
        if name in ("error", "delivered") or name.startswith("c"):
            continue
        r = m.find_row(s, a)
        assert m.distribution(r) == [(s, F(1))]
        checked += 1
    assert checked > 100


def test_multi_robot_joint_actions():
    m = gen_multi_robot(_small_multi(), starts=((1, 1), (4, 2)))
    moves = [a for a in m.action_names if len(a) == 2 and set(a) <= set("LRUDS")]
    assert len(moves) == 25
    assert {"pickup", "drop", "wait"} <= set(m.action_names)


def test_multi_robot_missing_region():
    with pytest.raises(ValueError):
        gen_multi_robot(GridWorkspace(5, 5, regions={"r1": {(2, 2)}}), starts=((0, 0), (4, 4)))


# ----------------------------------------------------------- automata


def _run_colors(aut, word):
    q, out = aut.initial, []
    for sym in word:
        q = int(aut.delta[q, aut.alphabet.index(sym)])
        out.append(int(aut.colors[q]))
    return out


def _lasso(aut, prefix, cycle, unroll=4):
    # unroll the cycle until the automaton state repeats at a cycle boundary
    colors = _run_colors(aut, list(prefix) + list(cycle) * unroll)
    n = len(cycle)
    return colors[: len(prefix) + n * (unroll - 1)], colors[len(prefix) + n * (unroll - 1):]


def test_patrol_two_shape():
    a = builtin_spec_automata("patrol-2")
    assert a.n_states == 3
    assert set(a.colors.tolist()) == {1, 2}
    assert validate(a).ok


@pytest.mark.parametrize("name,prefix,cycle,expected", [
    ("patrol-2", [], ["r1", "r2"], True),
    ("patrol-2", ["none"], ["r1", "none", "none", "r2", "none"], True),
    ("patrol-2", ["r1", "r2"], ["r1"], False),
    ("patrol-2", [], ["none"], False),
    ("ordered-visit-3", [], ["r1", "r2", "r3"], True),
    ("ordered-visit-3", [], ["r1", "r2", "none"], False),
    ("ordered-visit-3", [], ["r3", "r2", "r1"], False),
    ("visit-avoid", [], ["r1", "none"], True),
    ("visit-avoid", ["bad"], ["r1"], False),
    ("visit-avoid", ["r1", "crash"], ["r1", "none"], False),
])
def test_builtin_automata_lassos(name, prefix, cycle, expected):
    aut = builtin_spec_automata(name)
    assert trace_accepting(*_lasso(aut, prefix, cycle)) is expected


def test_visit_avoid_sink_has_max_odd_color():
    a = builtin_spec_automata("visit-avoid")
    sink = a.state_names.index("failed")
    assert int(a.colors[sink]) == int(a.colors.max()) and a.colors[sink] % 2 == 1
    assert all(int(d) == sink for d in a.delta[sink])


def test_builtin_automata_extra_symbols_and_errors():
    for name in BUILTIN_AUTOMATA:
        a = builtin_spec_automata(name, alphabet=("none", "zz"))
        assert "zz" in a.alphabet and validate(a).ok
    with pytest.raises(ValueError):
        builtin_spec_automata("nope")


def test_desk_product_with_patrol():
    m = gen_single_robot(desk_single_robot_workspace())
    a = builtin_spec_automata("patrol-2", m.alphabet)
    pm = build_product(m, a)
    assert pm.n_states == m.n_states * 3
    assert validate(pm).ok
    assert np.isin(pm.colors, [1, 2]).all()
