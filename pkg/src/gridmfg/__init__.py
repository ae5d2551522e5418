"""Mean-field learning for prosumer storage bidding into a DC economic-dispatch market."""
from .core import DemandProfile, Generator, Line, Network, RngStream, TriangularDist
from .dispatch import linearize_costs, solve_dispatch, verify_kkt
from .market import ConvergenceMonitor, RunLog, ScenarioConfig, check_mfe, run_scenario
from .metrics import ex_post_cost, imv, seed_summary

__version__ = "0.1.0"

__all__ = [
    "DemandProfile", "Generator", "Line", "Network", "RngStream", "TriangularDist",
    "linearize_costs", "solve_dispatch", "verify_kkt",
    "ConvergenceMonitor", "RunLog", "ScenarioConfig", "check_mfe", "run_scenario",
    "ex_post_cost", "imv", "seed_summary",
]
