from fractions import Fraction as F

import numpy as np
import pytest

from conftest import make_pmdp
from randmodels import random_parity_mdp
from riskaverse.policy import (InducedChain, check_structural, induced_chain, reach_probabilities,
                               verify_risk)
from riskaverse.reach import exact_reach_values
from riskaverse.synthesis import (InfeasibleError, augment, bisection_optimal, compute_winning_sets,
                                  exact_optimal, max_even_color, stage_goal, stage_reachability,
                                  stage_reachability_simplified, stitch_policy, tag_values)


def _names(pm, mask):
    return {pm.state_names[i] for i in np.nonzero(mask)[0]}


@pytest.mark.parametrize("colors,expected", [([0, 1, 2], 2), ([1, 3], 4), ([0], 0), ([2, 2], 2)])
def test_max_even_color(colors, expected):
    pm = make_pmdp([[(0, [(i, F(1))])] for i in range(len(colors))], colors)
    assert max_even_color(pm) == expected


def test_max_even_color_four_loops(four_loops):
    assert sorted(set(four_loops.colors.tolist())) == [0, 1, 2, 3]
    assert max_even_color(four_loops) == 4


# ----------------------------------------------------------- augmented MDPs


def test_all_even_colors_keep_tag():
    pm = make_pmdp([[(0, [(1, F(1, 2)), (2, F(1, 2))])], [(0, [(0, F(1))])], [(0, [(2, F(1))])]], [0, 2, 4])
    for variant in ("full", "simplified"):
        aug = augment(pm, 0, variant)
        assert np.array_equal(aug.tag[aug.succ], aug.tag[aug.row_state[aug.edge_row]])
    cur = np.array([True, False, True])
    rm = stage_reachability(pm, 2, cur, {4: np.array([False, False, True])}, np.zeros(3, bool))
    T = len(tag_values(2, 4, "full"))
    goal = rm.goal.reshape(3, T)
    # tag 2 never leaves tag 0; goals there are {s in S_k[2] : C(s) >= 2}
    assert goal[:, 0].tolist() == [False, False, True]


def test_detour_stage_two_value(detour):
    cur = np.array([n == "s4" for n in detour.state_names])
    empty = np.zeros(detour.n_states, bool)
    full = stage_reachability(detour, 2, cur, {}, empty)
    simp = stage_reachability_simplified(detour, 2, cur, empty)
    for rm in (full, simp):
        v = exact_reach_values(rm).values
        assert v[rm.initial] == F(17, 25)
        assert rm.tag[rm.initial] == 0


def test_no_odd_above_c_leaves_tainted_unreachable(detour):
    empty = np.zeros(detour.n_states, bool)
    rm = stage_reachability_simplified(detour, 2, ~empty, empty)
    starts = np.arange(detour.n_states) * 2
    reach = set(starts.tolist())
    frontier = list(reach)
    while frontier:
        x = frontier.pop()
        for r in rm.rows(x):
            for y, _ in rm.distribution(r):
                if y not in reach:
                    reach.add(y)
                    frontier.append(y)
    assert all(rm.tag[x] == 0 for x in reach)


def _oracle_goal(pm, c, current, higher, carried, variant):
    # per-definition goal predicate, evaluated state by state
    cmax = max_even_color(pm)
    out = []
    for s in range(pm.n_states):
        C = int(pm.colors[s])
        if variant == "simplified":
            out.append(C % 2 == 0 and C >= c and bool(current[s]))
            out.append(C % 2 == 0 and bool(carried[s]))
            continue
        for t in range(c, cmax + 1, 2):
            member = current[s] if t == c else higher[t][s]
            out.append(C % 2 == 0 and ((bool(member) and C >= t) or bool(carried[s])))
    return np.array(out)


def _oracle_tag(tag_value, color, c, variant, cmax):
    if color % 2 == 0:
        return tag_value
    if variant == "simplified":
        return cmax if color > c else tag_value
    return max(tag_value, color + 1)


@pytest.mark.parametrize("seed", range(15))
def test_goal_and_tags_match_definition(seed):
    pm = random_parity_mdp(500 + seed, max_states=6)
    cmax = max_even_color(pm)
    rng = np.random.default_rng(seed)
    for variant in ("full", "simplified"):
        for c in range(0, cmax + 1, 2):
            current = rng.random(pm.n_states) < 0.5
            higher = {t: rng.random(pm.n_states) < 0.5 for t in range(c + 2, cmax + 1, 2)}
            carried = rng.random(pm.n_states) < 0.3
            got = stage_goal(pm, c, current, higher, carried, variant)
            assert np.array_equal(got, _oracle_goal(pm, c, current, higher, carried, variant))
            aug = augment(pm, c, variant)
            vals = tag_values(c, cmax, variant)
            src = aug.row_state[aug.edge_row]
            for x, y in zip(src.tolist(), aug.succ.tolist()):
                s2 = int(aug.base[y])
                want = _oracle_tag(int(vals[aug.tag[x]]), int(pm.colors[s2]), c, variant, cmax)
                assert int(vals[aug.tag[y]]) == want


# ----------------------------------------------------------- winning sets


def test_p_zero_on_four_loops(four_loops):
    non_sink = {"init", "x", "a1", "a2", "a3", "good"}
    for variant in ("full", "simplified"):
        strict = compute_winning_sets(four_loops, 0, variant, "exact", strict=True)
        assert strict.feasible
        assert _names(four_loops, strict.layers[-1].sets[0]) == non_sink
        loose = compute_winning_sets(four_loops, 0, variant, "exact")
        assert loose.layers[-1].sets[0].all()


def test_four_loops_threshold(four_loops):
    for variant in ("full", "simplified"):
        assert compute_winning_sets(four_loops, F(27, 50), variant, "exact").feasible
        assert not compute_winning_sets(four_loops, F(11, 20), variant, "exact").feasible
        assert compute_winning_sets(four_loops, 0.54, variant, "float").feasible
        assert not compute_winning_sets(four_loops, 0.55, variant, "float").feasible


def test_detour_non_winning_reachable_state(detour):
    q1 = detour.state_index("q1")
    for variant in ("full", "simplified"):
        ws = compute_winning_sets(detour, F(17, 25), variant, "exact")
        assert ws.feasible
        for layer in ws.layers:
            for members in layer.sets.values():
                assert not members[q1]


def test_layers_are_monotone(four_loops):
    ws = compute_winning_sets(four_loops, F(1, 2), "full", "exact")
    for a, b in zip(ws.layers, ws.layers[1:]):
        assert not (a.sets[0] & ~b.sets[0]).any()
        for c in range(2, ws.cmax + 1, 2):
            assert not (a.sets[c] & ~a.sets[c - 2]).any()


def test_record_history_shrinks(four_loops):
    ws = compute_winning_sets(four_loops, F(1, 2), "simplified", "exact", record=True)
    for layer in ws.layers:
        for trail in layer.history.values():
            for a, b in zip(trail, trail[1:]):
                assert not (b & ~a).any()


def test_exact_backend_needs_rational_model(four_loops):
    with pytest.raises(ValueError):
        compute_winning_sets(four_loops.to_float(), F(1, 2), backend="exact")
    with pytest.raises(ValueError):
        compute_winning_sets(four_loops, F(3, 2))
    with pytest.raises(ValueError):
        compute_winning_sets(four_loops, 0.5, variant="other")


# ----------------------------------------------------------- stitching


def _successful_visits(pm, pol, state):
    # follow the chain along the non-sink successor; collect actions at ``state``
    x = pm.state_index(state)
    node, seen, out = pol.start, set(), []
    while node not in seen:
        seen.add(node)
        if pol.state[node] == x:
            out.append(pm.action_names[pol.action[node]])
        lo, hi = pol.edge_start[node], pol.edge_start[node + 1]
        nxt = [int(pol.edge_target[e]) for e in range(lo, hi)
               if not pm.state_names[pol.edge_succ[e]].startswith("sink")]
        if not nxt:
            break
        node = nxt[0]
    return out


def test_four_loops_policy_plays_a_b_c_d(four_loops):
    for variant in ("full", "simplified"):
        ws = compute_winning_sets(four_loops, F(27, 50), variant, "exact")
        pol = stitch_policy(ws)
        assert _successful_visits(four_loops, pol, "x") == ["a", "b", "c", "d"]
        assert len(pol.nodes_at(four_loops.state_index("x"))) >= 4
        assert verify_risk(induced_chain(four_loops, pol)) == F(27, 50)
        assert check_structural(pol, four_loops).ok


def test_detour_policy_visits_q1(detour):
    ws = compute_winning_sets(detour, F(17, 25), "simplified", "exact")
    pol = stitch_policy(ws)
    chain = induced_chain(detour, pol)
    q1_nodes = pol.nodes_at(detour.state_index("q1"))
    assert len(q1_nodes) == 1
    assert all(pol.goal[n] for n in pol.nodes_at(detour.state_index("s4")))
    assert verify_risk(chain) == F(17, 25)


def test_single_even_absorbing_state():
    pm = make_pmdp([[(0, [(0, F(1))])]], [0])
    ws = compute_winning_sets(pm, F(1), "simplified", "exact")
    pol = stitch_policy(ws)
    assert pol.n_nodes == 1
    assert pol.goal[0]
    assert pol.edge_target.tolist() == [0]
    assert exact_optimal(pm).achieved_p == 1


def test_stitch_refuses_infeasible(four_loops):
    ws = compute_winning_sets(four_loops, F(3, 5), "simplified", "exact")
    with pytest.raises(InfeasibleError):
        stitch_policy(ws)


# ----------------------------------------------------------- searches


def test_exact_optimal_fixtures(four_loops, detour):
    assert exact_optimal(four_loops).achieved_p == F(27, 50)
    assert exact_optimal(detour).achieved_p == F(17, 25)
    assert exact_optimal(detour, "full").achieved_p == F(17, 25)


def test_exact_search_float_backend(four_loops):
    out = exact_optimal(four_loops.to_float(), backend="float")
    assert out.achieved_p == pytest.approx(0.54, abs=1e-9)


@pytest.mark.parametrize("name,opt,cutoff", [("four_loops", 0.54, 0.01), ("detour", 0.68, 0.001)])
def test_bisection_brackets(name, opt, cutoff, request):
    pm = request.getfixturevalue(name)
    out = bisection_optimal(pm.to_float(), cutoff=cutoff)
    lo, hi = out.bracket
    assert out.feasible and hi - lo <= cutoff
    assert lo <= opt <= hi
    ex = bisection_optimal(pm, cutoff=F(1, 100), backend="exact")
    assert ex.bracket[0] <= F(opt) <= ex.bracket[1]


def test_bisection_without_even_goal():
    pm = make_pmdp([[(0, [(1, F(1))])], [(0, [(1, F(1))])]], [0, 1])
    out = bisection_optimal(pm, cutoff=0.01)
    assert not out.feasible
    assert out.policy is None
    assert out.bracket == (0.0, 1.0)
    assert not exact_optimal(pm).feasible


def test_chain_reaches_q1_with_probability_one_fifth(detour):
    pol = exact_optimal(detour).policy
    chain = induced_chain(detour, pol)
    goal_q1 = np.array([detour.state_names[s] == "q1" for s in pol.state])
    rm = chain.mdp.with_goal(goal_q1)
    assert reach_probabilities(InducedChain(rm, pol.start))[pol.start] == F(1, 5)
