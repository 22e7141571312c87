from fractions import Fraction as F
from pathlib import Path

import pytest

from riskaverse.cli import RunManifest, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def manifest(text):
    return RunManifest.loads(text)


def test_manifest_round_trip():
    m = RunManifest("solve", ["a.pmdp"], {"p": F(27, 50), "seed": 3, "eps": 1e-9}, ["x.pol"], 0.25,
                    2, "27/50", {"feasible": True, "bracket": ["1/2", "3/5"]})
    again = RunManifest.loads(m.dumps())
    assert again.dumps() == m.dumps()
    assert again.parameters["p"] == "27/50" and again.k_final == 2
    with pytest.raises(ValueError):
        RunManifest.loads("bogus=1\n")


def test_solve_exit_codes(capsys, tmp_path):
    pol = tmp_path / "fl.pol"
    code, out, _ = run(capsys, "solve", "fixture:four_loops", "--p", "0.54", "--backend", "exact",
                       "-o", pol)
    assert code == 0 and pol.exists()
    man = manifest(out)
    assert man.result["feasible"] and man.achieved_p == "27/50"
    assert man.outputs == [str(pol)]
    code, out, _ = run(capsys, "solve", "fixture:four_loops", "--p", "0.6")
    assert code == 1 and not manifest(out).result["feasible"]


def test_malformed_input_exit_two(capsys, tmp_path):
    bad = tmp_path / "bad.pmdp"
    bad.write_text("PMDP\nSTATE a COLOR zero\n")
    code, _, err = run(capsys, "solve", bad, "--p", "0.5")
    assert code == 2 and "error:" in err
    assert run(capsys, "solve", tmp_path / "missing.pmdp", "--p", "0.5")[0] == 2
    assert run(capsys, "solve", "fixture:four_loops", "--p", "1.5")[0] == 2
    assert run(capsys, "nope")[0] == 2
    sums = tmp_path / "sums.pmdp"
    sums.write_text("PMDP\nSTATE a COLOR 0\nT a go a 1/2\n")
    code, _, err = run(capsys, "solve", sums, "--p", "0.5")
    assert code == 2 and "sum" in err


def test_optimal_exact_and_bisection(capsys, tmp_path):
    code, out, _ = run(capsys, "optimal", "fixture:four_loops", "--exact")
    assert code == 0 and manifest(out).achieved_p == "27/50"
    code, out, _ = run(capsys, "optimal", "fixture:detour", "--cutoff", "0.001")
    lo, hi = (float(F(b)) for b in manifest(out).result["bracket"])
    assert code == 0 and lo <= 0.68 <= hi and hi - lo <= 0.001


def test_optimal_goal_free_model(capsys, tmp_path):
    m = tmp_path / "odd.pmdp"
    m.write_text("PMDP\nSTATE a COLOR 1\nT a go a 1\n")
    code, out, _ = run(capsys, "optimal", m)
    assert code == 1 and manifest(out).result["feasible"] is False


def test_verify_synthesized_and_corrupted(capsys, tmp_path):
    pol = tmp_path / "detour.pol"
    assert run(capsys, "optimal", "fixture:detour", "--exact", "-o", pol)[0] == 0
    code, out, _ = run(capsys, "verify", "fixture:detour", pol, "--steps", "100000", "--seed", "4")
    man = manifest(out)
    assert code == 0 and man.achieved_p == "17/25"
    assert man.result["structural_ok"] and man.result["claim_holds"]
    assert abs(man.result["simulated_rate"] - 0.68) <= 0.02
    text = pol.read_text().splitlines()
    bad = tmp_path / "bad.pol"
    bad.write_text("\n".join(line.replace("GOALCOLOR 0", "GOALCOLOR 1") for line in text) + "\n")
    code, _, err = run(capsys, "verify", "fixture:detour", bad)
    assert code == 1 and "violation:" in err
    assert run(capsys, "verify", "fixture:detour")[0] == 2


def test_verify_rejects_overclaim(capsys, tmp_path):
    pol = tmp_path / "fl.pol"
    assert run(capsys, "optimal", "fixture:four_loops", "--exact", "-o", pol)[0] == 0
    lines = pol.read_text().splitlines()
    lines[0] = lines[0].replace("p=27/50", "p=3/5")
    pol.write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "verify", "fixture:four_loops", pol)
    assert code == 1 and manifest(out).result["claim_holds"] is False


def test_simulate_is_byte_identical(capsys, tmp_path):
    pol = tmp_path / "fl.pol"
    run(capsys, "optimal", "fixture:four_loops", "--exact", "-o", pol)
    a, b = tmp_path / "a.trace", tmp_path / "b.trace"
    _, out_a, _ = run(capsys, "simulate", "fixture:four_loops", pol, "--seed", 9, "--steps", 300,
                      "--restart", "-o", a)
    _, out_b, _ = run(capsys, "simulate", "fixture:four_loops", pol, "--seed", 9, "--steps", 300,
                      "--restart", "-o", b)
    assert a.read_bytes() == b.read_bytes()
    first = a.read_text().splitlines()[0].split()
    assert first[0] == "0" and first[3] in ("0", "1")
    ma, mb = manifest(out_a), manifest(out_b)
    assert ma.result == mb.result


def test_threads_do_not_change_output(capsys, tmp_path):
    outs = []
    for t in (1, 4):
        pol = tmp_path / f"t{t}.pol"
        code, out, _ = run(capsys, "optimal", "fixture:detour", "--cutoff", "0.01", "--threads", t, "-o", pol)
        assert code == 0
        outs.append((pol.read_bytes(), manifest(out).result))
    assert outs[0] == outs[1]
    assert run(capsys, "solve", "fixture:detour", "--p", "0.5", "--threads", 0)[0] == 2


def test_solve_values_export(capsys, tmp_path):
    vals = tmp_path / "v.txt"
    code, _, _ = run(capsys, "solve", "fixture:detour", "--p", "0.68", "--backend", "exact",
                     "--values", vals)
    assert code == 0
    table = dict(line.split() for line in vals.read_text().splitlines())
    assert table == {"s0": "17/25", "q1": "1/5", "s2": "4/5", "s3": "0", "s4": "1"}


def test_gen_and_stats(capsys, tmp_path):
    mdp = tmp_path / "robot.mdp"
    code, out, _ = run(capsys, "gen", "single-robot", 70, 40, "-o", mdp)
    assert code == 0
    assert manifest(out).result == {"states": 22401, "pairs": 67201, "edges": 681591}
    code, out, _ = run(capsys, "stats", mdp)
    assert manifest(out).result == {"states": 22401, "pairs": 67201, "edges": 681591}
    code, out, _ = run(capsys, "stats", "fixture:detour")
    assert code == 0 and manifest(out).result["states"] == 5


def test_gen_spec_to_stdout(capsys, tmp_path):
    code, out, err = run(capsys, "gen", "spec", "patrol-2")
    assert code == 0 and out.startswith("DPA")
    assert sum(1 for line in out.splitlines() if line.startswith("STATE")) == 3
    assert manifest(err).command == "gen"
    dpa = tmp_path / "p.dpa"
    dpa.write_text(out)
    _, out, _ = run(capsys, "stats", dpa)
    assert manifest(out).result["states"] == 3
    assert run(capsys, "gen", "spec", "unknown")[0] == 2


def test_desk_product_pipeline(capsys, tmp_path):
    mdp, dpa, pol = tmp_path / "desk.mdp", tmp_path / "patrol.dpa", tmp_path / "desk.pol"
    assert run(capsys, "gen", "single-robot", 15, 9, "-o", mdp)[0] == 0
    assert run(capsys, "gen", "spec", "patrol-2", "-o", dpa)[0] == 0
    code, out, _ = run(capsys, "solve", mdp, dpa, "--p", "0.1", "-o", pol)
    assert code == 0
    code, out, _ = run(capsys, "verify", mdp, dpa, pol)
    assert code == 0 and float(F(manifest(out).achieved_p)) >= 0.1 - 1e-6
    assert run(capsys, "gen", "single-robot", 15, 8, "--layout", "desk")[0] == 2


def test_console_script_entry_point():
    import importlib.metadata as md
    eps = md.entry_points(group="console_scripts")
    assert any(ep.name == "riskaverse" and ep.value == "riskaverse.cli:main" for ep in eps)
    assert Path(__file__).parent.joinpath("conftest.py").exists()
