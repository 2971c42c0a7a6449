"""Chance-constrained partitioning of distribution feeders into self-adequate microgrids."""

from .network import FeederNetwork, load_fixture, load_network, partition_graph, check_topology
from .scenarios import ScenarioSet, synthesize, sample_uniform, sample_stratified, fit_clusters
from .milp import MilpModel, evaluate, export_mps, read_mps
from .formulation import SaaConfig, build_deterministic, build_saa, extract_solution, PartitionSolution
from .bb import SolveOptions, solve_milp, solve_via_backend
from .validation import (estimate_violation, scenario_feasible, upper_bound, binom_cdf, theta,
                         lower_bound, inv_normal_cdf)

__version__ = "0.1.0"
