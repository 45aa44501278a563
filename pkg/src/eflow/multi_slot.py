"""Capacity assignment across multiple time slots.

Energy arrives per slot and may be banked for later use, so the per-node
budget constraints become cumulative (energy causality).  Without transfers
the problem splits per node: the optimal per-slot sum power is the classic
single-user harvesting schedule (piecewise-constant, non-decreasing, tight
at every level change), and each slot's sum is then divided over the node's
links exactly as in the single-slot case.  With transfers, replicating the
graph once per slot and wiring each node to its next replica with a
lossless energy link reduces the whole horizon to one single-slot problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .power_math import min_power
from .single_slot import SolverOptions, solve_node, solve_single_slot
from .topology import (DataLink, DimensionMismatch, EnergyLink,
                       HarvestProfile, Network, _flow_array)


class InfeasibleSlot(ValueError):
    """A node's harvest in some slot cannot cover its link energy floors."""

    def __init__(self, message, node=None, slot=None):
        super().__init__(message)
        self.node = node
        self.slot = slot


def _harvest_matrix(net, harvest):
    E = harvest.E if isinstance(harvest, HarvestProfile) else \
        np.asarray(harvest, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    if E.shape[0] != net.node_count:
        raise DimensionMismatch(
            f"harvest profile has {E.shape[0]} rows, expected {net.node_count}")
    return E


def reduced_arrivals(net, flows, harvest):
    """Per-slot arrivals left after each node covers its capacity floors.

    G[n, i] = E[n, i] - sum over outgoing links of sigma_l*(exp(2 t_l)-1).

    Raises:
        InfeasibleSlot: if any entry is negative (that slot's harvest cannot
            even hold every outgoing link at its flow).
    """
    t = _flow_array(net, flows)
    E = _harvest_matrix(net, harvest)
    base = net.F @ min_power(net.sigma, t)
    G = E - base[:, None]
    if np.any(G < 0):
        n, i = np.argwhere(G < 0)[0]
        raise InfeasibleSlot(
            f"node {n + 1} slot {i + 1}: harvest {E[n, i]:.6g} below the "
            f"energy floor {base[n]:.6g}",
            node=int(n) + 1, slot=int(i) + 1)
    return G


def staircase_schedule(arrivals):
    """Optimal single-user transmit schedule under cumulative arrivals.

    Repeatedly spends at the smallest achievable prefix average of the
    remaining arrivals, which makes the schedule piecewise constant,
    non-decreasing, and cumulative-tight at every level change and at the
    horizon end.  The minimizer is shared by every convex non-increasing
    per-slot cost, so no cost function appears here.
    """
    g = np.asarray(arrivals, dtype=float)
    if g.ndim != 1:
        raise DimensionMismatch("arrivals must be a one-dimensional vector")
    if np.any(g < 0):
        raise ValueError("arrivals must be non-negative")
    T = g.size
    s = np.empty(T)
    start = 0
    while start < T:
        cum = np.cumsum(g[start:])
        lengths = np.arange(1, T - start + 1)
        avg = cum / lengths
        # ties go to the longest stretch to keep the schedule maximal-flat
        k = int(np.flatnonzero(avg <= avg.min() + 0.0)[-1])
        s[start:start + k + 1] = avg[k]
        start += k + 1
    return s


def solve_multi_slot_no_transfer(net, flows, harvest, options=None):
    """Per-slot link powers when no energy moves between nodes.

    Each node banks its arrivals on its own: its per-slot sum power follows
    the staircase schedule of its reduced arrivals, and each slot's sum is
    split over its outgoing links on a common water level.

    Returns an L x T power matrix.
    """
    options = options or SolverOptions()
    t = _flow_array(net, flows)
    G = reduced_arrivals(net, flows, harvest)
    T = G.shape[1]
    powers = np.zeros((net.num_data_links, T))
    for n in range(1, net.node_count + 1):
        idx = list(net.out_data(n))
        if not idx:
            continue
        links = [(net.sigma[l], t[l]) for l in idx]
        base = float(np.sum(min_power(net.sigma[idx], t[idx])))
        if not np.any(t[idx] > 0):
            continue
        schedule = staircase_schedule(G[n - 1])
        if schedule[0] <= 0:
            # first-slot arrivals exactly cover the floors: the links must
            # run at capacity == flow there, so the delay is unbounded
            raise InfeasibleSlot(
                f"node {n} banks no energy above its floor in slot 1; "
                "its delay is unbounded", node=n, slot=1)
        for i in range(T):
            pn, _ = solve_node(schedule[i] + base, links, options)
            powers[idx, i] = pn
    return powers


@dataclass
class TimeExpandedNetwork:
    """A T-slot network unrolled into one single-slot network.

    Replica node ids are (slot-1)*N + node; data and energy links are
    copied per slot, and every node gains a lossless storage link from each
    replica to the next.  Provenance tuples let solutions fold back:
    data_origin[l'] = (l, slot); energy_origin[q'] = ("transfer", q, slot)
    or ("storage", node, slot).
    """

    network: Network
    base_nodes: int
    slots: int
    data_origin: tuple
    energy_origin: tuple

    def node_id(self, node, slot):
        return (slot - 1) * self.base_nodes + node

    def expand_flows(self, flows):
        t = np.asarray(flows, dtype=float)
        return np.tile(t, self.slots)

    def expand_energy(self, harvest):
        E = np.asarray(harvest, dtype=float)
        return E.T.reshape(-1)

    def collapse_powers(self, powers):
        L = len(self.data_origin) // self.slots
        return np.asarray(powers).reshape(self.slots, L).T

    def collapse_transfers(self, transfers):
        Q = sum(1 for o in self.energy_origin if o[0] == "transfer") // max(self.slots, 1)
        y = np.zeros((Q, self.slots))
        carry = np.zeros((self.base_nodes, max(self.slots - 1, 0)))
        for val, origin in zip(np.asarray(transfers), self.energy_origin):
            kind, a, b = origin
            if kind == "transfer":
                y[a, b - 1] = val
            else:
                carry[a - 1, b - 1] = val
        return y, carry


def time_expand(net, slots):
    """Unroll a network over `slots` slots with lossless storage links."""
    T = int(slots)
    if T < 1:
        raise ValueError("slot count must be >= 1")
    N = net.node_count
    data_links = []
    data_origin = []
    for i in range(1, T + 1):
        for l, lk in enumerate(net.data_links):
            data_links.append(DataLink(
                id=f"{lk.id}@{i}",
                src=(i - 1) * N + lk.src,
                dst=(i - 1) * N + lk.dst,
                sigma=lk.sigma))
            data_origin.append((l, i))
    energy_links = []
    energy_origin = []
    for i in range(1, T + 1):
        for q, lk in enumerate(net.energy_links):
            energy_links.append(EnergyLink(
                id=f"{lk.id}@{i}",
                src=(i - 1) * N + lk.src,
                dst=(i - 1) * N + lk.dst,
                alpha=lk.alpha))
            energy_origin.append(("transfer", q, i))
    for n in range(1, N + 1):
        for i in range(1, T):
            energy_links.append(EnergyLink(
                id=f"store:{n}@{i}",
                src=(i - 1) * N + n,
                dst=i * N + n,
                alpha=1.0))
            energy_origin.append(("storage", n, i))
    supply = np.tile(net.supply, T)
    expanded = Network(N * T, data_links, energy_links, supply)
    return TimeExpandedNetwork(
        network=expanded, base_nodes=N, slots=T,
        data_origin=tuple(data_origin), energy_origin=tuple(energy_origin))


@dataclass
class MultiSlotSolution:
    powers: np.ndarray
    transfers: np.ndarray
    carryover: np.ndarray
    water_levels: np.ndarray
    total_delay: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray
    tolerances: dict


def solve_multi_slot_with_transfer(net, flows, harvest, options=None):
    """Minimize total delay over powers, transfers, and banked energy.

    Runs the single-slot energy-routing solver on the time-expanded
    network; storage-link transfers come back as per-node battery
    carryover between consecutive slots.

    Returns a MultiSlotSolution with powers (L x T), transfers (Q x T),
    carryover (N x (T-1)), and water levels (N x T).
    """
    t = _flow_array(net, flows)
    E = _harvest_matrix(net, harvest)
    T = E.shape[1]
    expanded = time_expand(net, T)
    sol = solve_single_slot(expanded.network, expanded.expand_flows(t),
                            expanded.expand_energy(E), options)
    powers = expanded.collapse_powers(sol.powers)
    y, carry = expanded.collapse_transfers(sol.transfers)
    levels = sol.water_levels.reshape(T, net.node_count).T
    return MultiSlotSolution(
        powers=powers,
        transfers=y,
        carryover=carry,
        water_levels=levels,
        total_delay=sol.total_delay,
        iterations=sol.iterations,
        converged=sol.converged,
        objective_trace=sol.objective_trace,
        tolerances=sol.tolerances,
    )
