"""Command-line front end: solve, optimal, verify, simulate, gen, stats.

Every command prints a run manifest as ``key=value`` lines on standard
output, where each value is JSON.  Exit codes: 0 success / feasible,
1 infeasible or failed verification, 2 input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .benchmarks import (BUILTIN_AUTOMATA, GridWorkspace, builtin_spec_automata,
                         desk_single_robot_workspace, gen_multi_robot, gen_single_robot,
                         walled_single_robot_workspace)
from .formats import (format_probability, parse_policy, read_model, write_dpa, write_mdp,
                      write_pmdp, write_policy, write_trace)
from .model import (Mdp, ModelError, ParityAutomaton, ParityMdp, build_product, model_stats,
                    prune_unreachable, validate)
from .policy import (check_structural, goal_success_stats, induced_chain, simulate,
                     source_probabilities, source_success_stats)
from .reach import SolverConfig
from .synthesis import (VARIANTS, bisection_optimal, compute_winning_sets, exact_optimal,
                        stitch_policy)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
EXACT_STATE_LIMIT = 10**4
FLOAT_VERIFY_TOL = 1e-9


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# manifest


def _encode(v):
    if isinstance(v, Fraction):
        return format_probability(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    if isinstance(v, dict):
        return {k: _encode(x) for k, x in v.items()}
    return v


@dataclass
class RunManifest:
    command: str
    inputs: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    k_final: int | None = None
    achieved_p: str | None = None
    result: dict = field(default_factory=dict)

    def dumps(self) -> str:
        return "".join(f"{k}={json.dumps(_encode(v), sort_keys=True)}\n" for k, v in asdict(self).items())

    @classmethod
    def loads(cls, text: str) -> "RunManifest":
        names = {f.name for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            if key not in names:
                raise ValueError(f"unknown manifest key {key!r}")
            kw[key] = json.loads(val)
        return cls(**kw)


# --------------------------------------------------------------------------
# input handling


def _read(path: str, exact: bool):
    """Parse a model file; ``fixture:<name>`` names a bundled example."""
    if path.startswith("fixture:"):
        from . import fixture_path
        name = path.split(":", 1)[1]
        path = str(fixture_path(name if "." in name else name + ".pmdp"))
    try:
        return read_model(path, exact)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except ModelError as exc:
        raise InputError(f"{path}: {exc}") from None


def load_parity_mdp(paths: list[str], exact: bool) -> ParityMdp:
    """A PMDP file, or an MDP file plus a DPA file (product, then pruned)."""
    if len(paths) == 1:
        m = _read(paths[0], exact)
        if not isinstance(m, ParityMdp):
            raise InputError(f"{paths[0]}: expected a PMDP file (or give an MDP and a DPA)")
        pm = m
    elif len(paths) == 2:
        mdp, dpa = _read(paths[0], exact), _read(paths[1], exact)
        if not isinstance(mdp, Mdp) or not isinstance(dpa, ParityAutomaton):
            raise InputError("expected an MDP file followed by a DPA file")
        try:
            pm = prune_unreachable(build_product(mdp, dpa))
        except ModelError as exc:
            raise InputError(str(exc)) from None
    else:
        raise InputError("expected a PMDP file or an MDP file and a DPA file")
    report = validate(pm)
    if not report.ok:
        raise InputError("invalid model:\n" + str(report))
    return pm


def load_measured(paths: list[str]) -> ParityMdp:
    """Rational model when the file's probabilities sum to one exactly, else float."""
    try:
        return load_parity_mdp(paths, exact=True)
    except InputError:
        return load_parity_mdp(paths, exact=False)


def _probability(text: str) -> Fraction:
    try:
        p = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a probability: {text!r}") from None
    if not 0 <= p <= 1:
        raise argparse.ArgumentTypeError(f"probability outside [0, 1]: {text}")
    return p


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _config(args) -> SolverConfig:
    return SolverConfig(epsilon=args.epsilon, workers=args.threads)


def _write(path: str | None, text: str, manifest: RunManifest) -> None:
    if path is None:
        return
    Path(path).write_text(text, encoding="utf-8")
    manifest.outputs.append(path)


# --------------------------------------------------------------------------
# commands


def cmd_solve(args, man: RunManifest) -> int:
    exact = args.backend == "exact"
    pm = load_parity_mdp(args.inputs, exact)
    p = args.p if exact else float(args.p)
    ws = compute_winning_sets(pm, p, args.variant, args.backend, cfg=_config(args))
    man.k_final = ws.k_final
    man.result["feasible"] = ws.feasible
    man.result["winning_states"] = int(ws.winning.sum())
    if args.values:
        st = ws.layers[-1].stages[0]
        vals = st.departure[st.start_index]
        _write(args.values, "".join(f"{name} {format_probability(v)}\n"
                                    for name, v in zip(pm.state_names, vals)), man)
    if not ws.feasible:
        return EXIT_FAIL
    pol = stitch_policy(ws)
    man.achieved_p = format_probability(pol.p)
    man.result["policy_nodes"] = pol.n_nodes
    _write(args.output, write_policy(pol, pm), man)
    return EXIT_OK


def cmd_optimal(args, man: RunManifest) -> int:
    if args.exact:
        # rational arithmetic only pays off on small models
        probe = load_parity_mdp(args.inputs, exact=True)
        backend = "exact" if probe.n_states <= EXACT_STATE_LIMIT else "float"
        pm = probe if backend == "exact" else probe.to_float()
        out = exact_optimal(pm, args.variant, backend, _config(args))
        man.parameters["backend"] = backend
    else:
        pm = load_parity_mdp(args.inputs, exact=args.backend == "exact")
        cutoff = args.cutoff if args.backend == "exact" else float(args.cutoff)
        out = bisection_optimal(pm, cutoff, args.variant, args.backend, _config(args))
    man.k_final = out.k_final
    man.result["feasible"] = out.feasible
    man.result["bracket"] = [format_probability(b) for b in out.bracket]
    man.result["probes"] = len(out.probes)
    if not out.feasible:
        return EXIT_FAIL
    man.achieved_p = format_probability(out.achieved_p)
    man.result["policy_nodes"] = out.policy.n_nodes
    _write(args.output, write_policy(out.policy, pm), man)
    return EXIT_OK


def _load_policy(path: str, pm: ParityMdp):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    try:
        return parse_policy(text, pm)
    except ModelError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_verify(args, man: RunManifest) -> int:
    pm = load_measured(args.inputs[:-1])
    pol = _load_policy(args.inputs[-1], pm)
    report = check_structural(pol, pm)
    man.result["structural_ok"] = report.ok
    man.result["violations"] = list(report.violations)
    if not report.ok:
        for v in report.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_FAIL
    exact = pm.exact and pm.n_states <= EXACT_STATE_LIMIT
    chain = induced_chain(pm if exact or not pm.exact else pm.to_float(), pol)
    level = min(source_probabilities(chain, exact).values())
    man.achieved_p = format_probability(level)
    man.result["max_decreases"] = report.max_decreases
    man.result["claimed_p"] = format_probability(pol.p) if pol.p is not None else None
    ok = True
    if pol.p is not None:
        ok = level >= pol.p if exact and isinstance(pol.p, Fraction) else float(level) >= float(pol.p) - FLOAT_VERIFY_TOL
    man.result["claim_holds"] = bool(ok)
    if args.steps:
        stats = goal_success_stats(pm.to_float() if pm.exact else pm, pol, args.seed, args.steps)
        man.result["simulated_rate"] = stats.rate
        man.result["simulated_trials"] = stats.trials
        man.result["simulated_expected_rate"] = stats.expected_rate
        man.result["simulated_standard_error"] = stats.standard_error
        worst = source_success_stats(pm.to_float() if pm.exact else pm, pol, args.seed, args.steps)
        man.result["worst_source_rate"] = worst.rate
        man.result["worst_source_trials"] = worst.trials
        man.result["worst_source_standard_error"] = worst.standard_error
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(args, man: RunManifest) -> int:
    pm = load_parity_mdp(args.inputs[:-1], exact=False)
    pol = _load_policy(args.inputs[-1], pm)
    report = check_structural(pol, pm)
    if not report.ok:
        for v in report.violations:
            print(f"violation: {v}", file=sys.stderr)
        man.result["violations"] = list(report.violations)
        return EXIT_FAIL
    trace = simulate(pm, pol, args.seed, args.steps, restart=args.restart)
    _write(args.output, write_trace(trace, pm), man)
    stats = goal_success_stats(pm, pol, args.seed, args.steps)
    man.result.update(goals=int(sum(st.goal for st in trace)), trials=stats.trials,
                      successes=stats.successes, rate=stats.rate,
                      expected_rate=stats.expected_rate, standard_error=stats.standard_error)
    return EXIT_OK


LAYOUTS = {"walled": walled_single_robot_workspace, "desk": desk_single_robot_workspace}


def cmd_gen(args, man: RunManifest) -> int:
    if args.kind == "spec":
        try:
            text = write_dpa(builtin_spec_automata(args.name))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    elif args.kind == "single-robot":
        if args.layout == "empty":
            ws = GridWorkspace(args.width, args.height)
        else:
            base = LAYOUTS[args.layout]()
            if (base.width, base.height) != (args.width, args.height):
                raise InputError(f"layout {args.layout!r} is {base.width}x{base.height}")
            ws = base
        m = gen_single_robot(ws, exact=args.exact)
        man.result.update(model_stats(m))
        text = write_mdp(m)
    else:
        m = gen_multi_robot(exact=args.exact)
        man.result.update(model_stats(m))
        text = write_mdp(m)
    if args.output is None:
        sys.stdout.write(text)
    else:
        _write(args.output, text, man)
    return EXIT_OK


def cmd_stats(args, man: RunManifest) -> int:
    if len(args.inputs) == 2:
        m = load_parity_mdp(args.inputs, exact=False)
    elif len(args.inputs) == 1:
        m = _read(args.inputs[0], exact=False)
    else:
        raise InputError("expected one model file, or an MDP file and a DPA file")
    if isinstance(m, ParityAutomaton):
        man.result.update(states=m.n_states, symbols=len(m.alphabet),
                          colors=sorted(set(m.colors.tolist())))
    else:
        man.result.update(model_stats(m))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskaverse",
                                 description="Risk-averse policy synthesis for parity MDPs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_opts(p):
        p.add_argument("--variant", choices=VARIANTS, default="simplified")
        p.add_argument("--backend", choices=("float", "exact"), default="float")
        p.add_argument("--epsilon", type=_positive, default=1e-9,
                       help="value-iteration stop: L1 size of one sweep's update")
        p.add_argument("--threads", type=int, default=1, help="value-iteration worker threads")
        p.add_argument("-o", "--output", help="policy file to write")

    p = sub.add_parser("solve", help="decide a fixed level p and emit a policy")
    p.add_argument("inputs", nargs="+", metavar="MODEL", help="PMDP file, or MDP file and DPA file")
    p.add_argument("--p", type=_probability, required=True)
    p.add_argument("--values", help="write the final S[0] test values as '<state> <value>' lines")
    solver_opts(p)

    p = sub.add_parser("optimal", help="search the best level")
    p.add_argument("inputs", nargs="+", metavar="MODEL")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--cutoff", type=_probability, default=Fraction(1, 1000))
    g.add_argument("--exact", action="store_true", help="exact strict-threshold search")
    solver_opts(p)

    p = sub.add_parser("verify", help="measure a policy and check its labels")
    p.add_argument("inputs", nargs="+", metavar="FILE", help="model file(s) followed by the policy file")
    p.add_argument("--steps", type=int, default=0, help="also run a seeded Monte Carlo cross-check")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="sample a run of a policy")
    p.add_argument("inputs", nargs="+", metavar="FILE", help="model file(s) followed by the policy file")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restart", action="store_true",
                   help="restart at the initial node when no further goal is reachable")
    p.add_argument("-o", "--output", help="trace file to write")

    p = sub.add_parser("gen", help="generate benchmark models and automata")
    gsub = p.add_subparsers(dest="kind", required=True)
    q = gsub.add_parser("single-robot")
    q.add_argument("width", type=int)
    q.add_argument("height", type=int)
    q.add_argument("--layout", choices=("walled", "desk", "empty"), default=None,
                   help="obstacle layout (default: walled for 70x40, desk for 15x9, else empty)")
    q.add_argument("--exact", action="store_true", help="rational probabilities")
    q.add_argument("-o", "--output")
    q = gsub.add_parser("multi-robot")
    q.add_argument("--exact", action="store_true", help="rational probabilities")
    q.add_argument("-o", "--output")
    q = gsub.add_parser("spec")
    q.add_argument("name", help=", ".join(BUILTIN_AUTOMATA))
    q.add_argument("-o", "--output")

    p = sub.add_parser("stats", help="print state / pair / edge counts")
    p.add_argument("inputs", nargs="+", metavar="MODEL")
    return ap


COMMANDS = {"solve": cmd_solve, "optimal": cmd_optimal, "verify": cmd_verify,
            "simulate": cmd_simulate, "gen": cmd_gen, "stats": cmd_stats}


def _parameters(args) -> dict:
    skip = {"command", "inputs", "output", "values"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "gen" and args.kind == "single-robot" and args.layout is None:
        sizes = {(70, 40): "walled", (15, 9): "desk"}
        args.layout = sizes.get((args.width, args.height), "empty")
    if args.command in ("verify", "simulate") and len(args.inputs) not in (2, 3):
        print("error: expected model file(s) followed by a policy file", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    man = RunManifest(command=args.command, inputs=list(getattr(args, "inputs", [])),
                      parameters=_parameters(args))
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, man)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    man.wall_time = round(time.perf_counter() - t0, 6)
    out = sys.stderr if args.command == "gen" and args.output is None else sys.stdout
    out.write(man.dumps())
    return code


if __name__ == "__main__":
    sys.exit(main())
