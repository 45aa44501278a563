"""Directed multigraph model for networks that route both data and energy.

A network couples two directed link sets over one node set: data links carry
flow against additive channel noise, energy links move stored energy between
nodes at a fixed transfer efficiency.  This module builds the node-link
incidence matrices used by every solver and validates flows, supplies, and
per-node energy feasibility.

Conventions:
  - nodes are numbered 1..N (as in configuration files); matrix row n-1
    corresponds to node n,
  - vectors over links follow the declaration order of the links,
  - the supply vector lists exogenous injection rates; destination nodes
    carry the matching negative entries so that conservation is the single
    linear identity A @ t == s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TopologyError(ValueError):
    """Base class for network construction and validation errors."""


class DuplicateLinkId(TopologyError):
    pass


class SelfLoop(TopologyError):
    pass


class BadSigma(TopologyError):
    pass


class BadAlpha(TopologyError):
    pass


class NodeIndexOutOfRange(TopologyError):
    pass


class DimensionMismatch(TopologyError):
    pass


@dataclass(frozen=True)
class DataLink:
    id: str
    src: int
    dst: int
    sigma: float


@dataclass(frozen=True)
class EnergyLink:
    id: str
    src: int
    dst: int
    alpha: float


def _readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


class Network:
    """Immutable data/energy topology with incidence matrices.

    Attributes:
        node_count: number of nodes N.
        data_links: tuple of DataLink (length L).
        energy_links: tuple of EnergyLink (length Q).
        supply: length-N vector of exogenous injection rates.
        A: N x L data incidence matrix (+1 at the start node, -1 at the end).
        B: N x Q energy incidence matrix (+1 at the start, -alpha at the end).
        F: elementwise max(A, 0); F @ p sums outgoing link powers per node.
    """

    def __init__(self, node_count, data_links, energy_links, supply):
        n = int(node_count)
        if n < 1:
            raise TopologyError("node_count must be a positive integer")
        data_links = tuple(data_links)
        energy_links = tuple(energy_links)

        seen = set()
        for link in (*data_links, *energy_links):
            if link.id in seen:
                raise DuplicateLinkId(f"link id {link.id!r} declared twice")
            seen.add(link.id)
            if link.src == link.dst:
                raise SelfLoop(f"link {link.id!r} has src == dst == {link.src}")
            for node in (link.src, link.dst):
                if not 1 <= node <= n:
                    raise NodeIndexOutOfRange(
                        f"link {link.id!r} endpoint {node} outside 1..{n}")
        for link in data_links:
            if not link.sigma > 0:
                raise BadSigma(f"data link {link.id!r} has sigma={link.sigma}, need > 0")
        for link in energy_links:
            if not 0 < link.alpha <= 1:
                raise BadAlpha(
                    f"energy link {link.id!r} has alpha={link.alpha}, need in (0, 1]")

        supply = np.asarray(supply, dtype=float)
        if supply.shape != (n,):
            raise DimensionMismatch(
                f"supply has shape {supply.shape}, expected ({n},)")
        if not np.all(np.isfinite(supply)):
            raise TopologyError("supply entries must be finite")

        A = np.zeros((n, len(data_links)))
        for l, link in enumerate(data_links):
            A[link.src - 1, l] = 1.0
            A[link.dst - 1, l] = -1.0
        B = np.zeros((n, len(energy_links)))
        for q, link in enumerate(energy_links):
            B[link.src - 1, q] = 1.0
            B[link.dst - 1, q] = -link.alpha

        self.node_count = n
        self.data_links = data_links
        self.energy_links = energy_links
        self.supply = _readonly(supply)
        self.A = _readonly(A)
        self.B = _readonly(B)
        self.F = _readonly(np.maximum(A, 0.0))
        self.sigma = _readonly([lk.sigma for lk in data_links])
        self.alpha = _readonly([lk.alpha for lk in energy_links])
        # outgoing data link indices per node, by declaration order
        self._out_data = tuple(
            tuple(l for l, lk in enumerate(data_links) if lk.src == node)
            for node in range(1, n + 1))
        self._in_data = tuple(
            tuple(l for l, lk in enumerate(data_links) if lk.dst == node)
            for node in range(1, n + 1))

    @property
    def num_data_links(self):
        return len(self.data_links)

    @property
    def num_energy_links(self):
        return len(self.energy_links)

    def out_data(self, node):
        """Indices of data links leaving `node` (node numbered from 1)."""
        return self._out_data[node - 1]

    def in_data(self, node):
        return self._in_data[node - 1]

    def sources(self):
        """Nodes with positive exogenous injection."""
        return tuple(int(i) + 1 for i in np.flatnonzero(self.supply > 0))

    def destinations(self):
        """Nodes with negative supply entries (they absorb flow)."""
        return tuple(int(i) + 1 for i in np.flatnonzero(self.supply < 0))

    def without_energy_links(self):
        """Copy of this network with the energy topology removed."""
        return Network(self.node_count, self.data_links, (), self.supply)

    def __repr__(self):
        return (f"Network(N={self.node_count}, L={self.num_data_links}, "
                f"Q={self.num_energy_links})")


@dataclass(frozen=True)
class FlowVector:
    """Per-data-link flow rates (nats per unit time)."""

    t: np.ndarray

    def __post_init__(self):
        t = _readonly(self.t)
        if t.ndim != 1:
            raise DimensionMismatch("flow vector must be one-dimensional")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise TopologyError("flows must be finite and non-negative")
        object.__setattr__(self, "t", t)


@dataclass(frozen=True)
class HarvestProfile:
    """Per-node, per-slot harvested energy (N x T)."""

    E: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        if E.ndim == 1:
            E = E[:, None]
        if E.ndim != 2 or E.shape[1] < 1:
            raise DimensionMismatch("harvest profile must be an N x T matrix")
        if np.any(E < 0) or not np.all(np.isfinite(E)):
            raise TopologyError(
                "harvested energies must be finite and non-negative")
        object.__setattr__(self, "E", _readonly(E))

    @property
    def slots(self):
        return self.E.shape[1]


def build_network(raw):
    """Build a validated Network from a plain description.

    Args:
        raw: mapping with keys `nodes` (int), `data_links` and `energy_links`
            (lists of mappings with id/src/dst plus sigma or alpha), and
            optionally `supply` (length-N list, defaults to all zero).

    Returns:
        Network with incidence matrices constructed.
    """
    n = int(raw["nodes"])
    data_links = [
        DataLink(str(d["id"]), int(d["src"]), int(d["dst"]), float(d["sigma"]))
        for d in raw.get("data_links", [])
    ]
    energy_links = [
        EnergyLink(str(d["id"]), int(d["src"]), int(d["dst"]), float(d["alpha"]))
        for d in raw.get("energy_links", [])
    ]
    supply = raw.get("supply")
    if supply is None:
        supply = np.zeros(n)
    return Network(n, data_links, energy_links, supply)


def _flow_array(net, flows):
    t = flows.t if isinstance(flows, FlowVector) else np.asarray(flows, dtype=float)
    if t.shape != (net.num_data_links,):
        raise DimensionMismatch(
            f"flow vector has shape {t.shape}, expected ({net.num_data_links},)")
    return t


def check_flow_conservation(net, flows):
    """Conservation residual A @ t - s, one entry per node.

    Callers treat the flows as routed when max(abs(residual)) < 1e-9.
    """
    t = _flow_array(net, flows)
    return net.A @ t - net.supply


def min_feasible_energy(net, flows):
    """Per-node energy floor below which the capacity constraints break.

    Node n needs at least sum over its outgoing data links of
    sigma_l * (exp(2 t_l) - 1); at that budget every outgoing link runs at
    capacity equal to its flow, so any positive-flow node needs strictly
    more energy to obtain finite delay.
    """
    t = _flow_array(net, flows)
    floors = net.sigma * np.expm1(2.0 * t)
    return net.F @ floors


def simple_paths(net, src, dst):
    """All simple directed data paths src -> dst as tuples of link indices.

    Depth-first enumeration over the data links; suitable for the small
    acyclic topologies the path-based solvers accept.
    """
    out = net.out_data
    paths = []

    def walk(node, used_nodes, prefix):
        if node == dst:
            paths.append(tuple(prefix))
            return
        for l in out(node):
            nxt = net.data_links[l].dst
            if nxt in used_nodes:
                continue
            prefix.append(l)
            walk(nxt, used_nodes | {nxt}, prefix)
            prefix.pop()

    walk(src, {src}, [])
    return paths


def has_data_cycle(net):
    """True if the directed data graph contains a cycle (Kahn's algorithm)."""
    indeg = np.zeros(net.node_count, dtype=int)
    for lk in net.data_links:
        indeg[lk.dst - 1] += 1
    stack = [n for n in range(1, net.node_count + 1) if indeg[n - 1] == 0]
    seen = 0
    while stack:
        node = stack.pop()
        seen += 1
        for l in net.out_data(node):
            d = net.data_links[l].dst
            indeg[d - 1] -= 1
            if indeg[d - 1] == 0:
                stack.append(d)
    return seen < net.node_count
