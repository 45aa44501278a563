"""Delay-minimal power allocation, wireless energy transfer, and data
routing for energy-harvesting communication networks."""

from .joint import (JointOptions, check_kkt, enumerate_paths, pareto_sweep,
                    solve_joint)
from .multi_slot import (reduced_arrivals, solve_multi_slot_no_transfer,
                         solve_multi_slot_with_transfer, staircase_schedule,
                         time_expand)
from .oracle import convex_solve, feasibility_check, grid_search_joint
from .power_math import (LinkParams, dh_dp, dh_dt, dp_dsigma, dp_dt,
                         lambert_w0, link_delay, p_of_lambda)
from .single_slot import (SolverOptions, pairwise_balance, solve_node,
                          solve_single_slot)
from .topology import (FlowVector, HarvestProfile, Network, build_network,
                       check_flow_conservation, min_feasible_energy)

__version__ = "0.1.0"

__all__ = [
    "FlowVector", "HarvestProfile", "JointOptions", "LinkParams", "Network",
    "SolverOptions", "build_network", "check_flow_conservation", "check_kkt",
    "convex_solve", "dh_dp", "dh_dt", "dp_dsigma", "dp_dt", "enumerate_paths",
    "feasibility_check", "grid_search_joint", "lambert_w0", "link_delay",
    "min_feasible_energy", "p_of_lambda", "pairwise_balance", "pareto_sweep",
    "reduced_arrivals", "solve_joint", "solve_multi_slot_no_transfer",
    "solve_multi_slot_with_transfer", "solve_node", "solve_single_slot",
    "staircase_schedule", "time_expand",
]
