"""Risk-averse policy synthesis for MDPs with parity objectives."""

from importlib import resources

from .model import (Mdp, ModelError, ParityAutomaton, ParityMdp, ValidationReport, build_product,
                    prune_unreachable, validate)
from .reach import ReachabilityMdp, SolverConfig, StateValues, exact_reach_values, value_iteration
from .policy import (FiniteStatePolicy, InducedChain, check_structural, induced_chain, simulate,
                     trace_accepting, verify_risk)
from .synthesis import (SearchOutcome, WinningSets, bisection_optimal, compute_winning_sets,
                        exact_optimal, max_even_color, stage_reachability,
                        stage_reachability_simplified, stitch_policy)

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a bundled example model (e.g. ``four_loops.pmdp``)."""
    return resources.files(__package__).joinpath("data", name)


def load_fixture(name: str, exact: bool = True):
    from .formats import read_model
    return read_model(fixture_path(name), exact)
