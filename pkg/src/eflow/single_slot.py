"""Single-slot capacity assignment: node solves, pairwise energy balancing,
and the iterative energy-routing solver.

With flows fixed and one energy arrival per node, total delay is minimized
by (i) putting each node's outgoing links on a common water level that
exhausts its budget, and (ii) moving energy across energy links until the
donor level equals the efficiency-scaled receiver level.  The solver visits
energy links round-robin; every visit re-balances one donor/receiver pair
exactly (the closed-form limit of moving energy in small increments), and
per-link meters bound how much previously sent energy can be recalled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .power_math import LinkParams, _delay_vec, _dh_dp_vec, _p_vec, _sum_p, min_power


class SolverError(RuntimeError):
    pass


class InfeasibleBudget(SolverError):
    """Node budget below the energy floor of its outgoing links."""

    def __init__(self, message, deficit=None):
        super().__init__(message)
        self.deficit = deficit


class NoBeneficialTransfer(SolverError):
    """Donor water level already at or above the scaled receiver level."""


class Infeasible(SolverError):
    """No (powers, transfers) satisfy the energy constraints."""

    def __init__(self, message, violated_nodes=()):
        super().__init__(message)
        self.violated_nodes = tuple(violated_nodes)


@dataclass
class SolverOptions:
    """Tunables for the energy-routing iteration.

    The stopping rule is a full sweep over the energy links that changes no
    node water level by more than `sweep_tol` (relative).  `recall_mode`
    selects between the closed-form reverse balance ("balance", default)
    and the incremental epsilon loop ("epsilon"); both share the same fixed
    point.
    """

    sweep_tol: float = 1e-9
    max_sweeps: int = 2000
    bisect_steps: int = 200
    bisect_tol: float = 1e-12
    recall_mode: str = "balance"
    epsilon: float | None = None
    precheck: bool = True


@dataclass
class SingleSlotSolution:
    powers: np.ndarray
    transfers: np.ndarray
    water_levels: np.ndarray
    total_delay: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray
    level_trace: np.ndarray
    tolerances: dict = field(default_factory=dict)

    @property
    def taps(self):
        """Meter readings: net energy sent per energy link."""
        return self.transfers


def _as_link_arrays(links):
    links = [lk if isinstance(lk, LinkParams) else LinkParams(*lk) for lk in links]
    sigma = np.array([lk.sigma for lk in links], dtype=float)
    t = np.array([lk.t for lk in links], dtype=float)
    return sigma, t


def _solve_level(budget, sigma, t, options):
    """Water level lam with sum of closed-form powers equal to `budget`.

    The sum is continuous and strictly decreasing in lam, so a doubling
    bracket around lam=1 followed by bisection to relative interval
    `bisect_tol` pins it down.
    """
    lo = hi = 1.0
    for _ in range(4000):
        if _sum_p(hi, sigma, t) <= budget:
            break
        hi *= 2.0
    for _ in range(4000):
        if _sum_p(lo, sigma, t) >= budget:
            break
        lo *= 0.5
    for _ in range(options.bisect_steps):
        if hi - lo <= options.bisect_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if _sum_p(mid, sigma, t) > budget:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_node(budget, links, options=None):
    """Distribute one node's energy budget over its outgoing data links.

    Returns (powers, lam) where the powers exhaust the budget and share the
    water level lam = -dh/dp on every positive-flow link.  Zero-flow links
    get no power; with no positive-flow link at all the level is reported
    as 0.0 and nothing is spent.

    Raises:
        InfeasibleBudget: if the budget does not strictly exceed the energy
            floor sum(sigma * (exp(2 t) - 1)).
    """
    options = options or SolverOptions()
    sigma, t = _as_link_arrays(links)
    powers = np.zeros_like(sigma)
    if budget < 0 or not np.isfinite(budget):
        raise InfeasibleBudget(f"budget must be finite and non-negative, "
                               f"got {budget}", deficit=-budget)
    if not np.any(t > 0):
        return powers, 0.0
    floor = float(np.sum(min_power(sigma, t)))
    if budget <= floor * (1.0 + 1e-12):
        raise InfeasibleBudget(
            f"budget {budget:.6g} at or below energy floor {floor:.6g} "
            f"(deficit {floor - budget:.6g})",
            deficit=floor - budget)
    lam = _solve_level(budget, sigma, t, options)
    return _p_vec(lam, sigma, t), lam


def _balance_level(alpha, target, sig_i, t_i, sig_j, t_j, options):
    """Receiver level lam_j with alpha*sum p_i(alpha lam_j) + sum p_j(lam_j)
    equal to `target` (the efficiency-weighted energy of the pair)."""

    def weighted(lam):
        return alpha * _sum_p(alpha * lam, sig_i, t_i) + _sum_p(lam, sig_j, t_j)

    lo = hi = 1.0
    for _ in range(4000):
        if weighted(hi) <= target:
            break
        hi *= 2.0
    for _ in range(4000):
        if weighted(lo) >= target:
            break
        lo *= 0.5
    for _ in range(options.bisect_steps):
        if hi - lo <= options.bisect_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if weighted(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class BalanceResult:
    transfer: float
    lam_i: float
    lam_j: float
    budget_i: float
    budget_j: float


def pairwise_balance(alpha, budget_i, budget_j, links_i, links_j, options=None):
    """Optimal one-link energy transfer between a donor and a receiver node.

    Solves the weighted balance alpha*sum p_i(alpha lam) + sum p_j(lam) =
    alpha*E_i + E_j for the receiver level, which simultaneously exhausts
    both post-transfer budgets and ties the levels as lam_i = alpha*lam_j.

    Raises:
        NoBeneficialTransfer: when the donor level is already at or above
            alpha times the receiver level (transferring would not reduce
            total delay).
    """
    options = options or SolverOptions()
    sig_i, t_i = _as_link_arrays(links_i)
    sig_j, t_j = _as_link_arrays(links_j)
    if not np.any(t_j > 0):
        raise NoBeneficialTransfer("receiver has no positive-flow links")
    _, lam_j0 = solve_node(budget_j, links_j, options)
    if np.any(t_i > 0):
        _, lam_i0 = solve_node(budget_i, links_i, options)
    else:
        lam_i0 = 0.0
    if lam_i0 >= alpha * lam_j0 * (1.0 - 1e-12):
        raise NoBeneficialTransfer(
            f"donor level {lam_i0:.6g} >= alpha * receiver level "
            f"{alpha * lam_j0:.6g}")
    target = alpha * budget_i + budget_j
    lam_j = _balance_level(alpha, target, sig_i, t_i, sig_j, t_j, options)
    new_i = _sum_p(alpha * lam_j, sig_i, t_i)
    new_j = target - alpha * new_i
    lam_i = alpha * lam_j if np.any(t_i > 0) else 0.0
    return BalanceResult(budget_i - new_i, lam_i, lam_j, new_i, new_j)


class _NodeState:
    """Per-node link arrays, budget, and water level during the sweep."""

    __slots__ = ("sigma", "t", "budget", "lam", "active", "floor")

    def __init__(self, sigma, t, budget):
        self.sigma = sigma
        self.t = t
        self.budget = budget
        self.lam = 0.0
        self.active = bool(np.any(t > 0))
        self.floor = float(np.sum(min_power(sigma, t)))

    def resolve(self, options):
        if self.active:
            _, self.lam = solve_node(self.budget, list(zip(self.sigma, self.t)),
                                     options)
        else:
            self.lam = 0.0

    def powers(self):
        if not self.active:
            return np.zeros_like(self.sigma)
        return _p_vec(self.lam, self.sigma, self.t)

    def delay(self):
        return float(np.sum(_delay_vec(self.powers(), self.sigma, self.t)))


def _apply_balance(alpha, ni, nj, y_cur, options):
    """One exact donor/receiver balance event with meter clamping.

    Returns (new_y, changed).  The weighted pair energy alpha*E_i + E_j is
    invariant under transfers and recalls on the link, so the same balance
    equation covers both directions; recalls are clamped so the cumulative
    amount never exceeds the meter reading y_cur.
    """
    if not nj.active:
        # receiver spends nothing; take back whatever the meter allows
        recall = min(y_cur, nj.budget / alpha)
        if recall <= 0:
            return y_cur, False
        ni.budget += recall
        nj.budget -= alpha * recall
        ni.resolve(options)
        return y_cur - recall, True
    target = alpha * ni.budget + nj.budget
    if not ni.active:
        # donor has no data to send; its whole budget is worth donating
        if ni.budget <= 0:
            return y_cur, False
        delta = ni.budget
        nj.budget = target
        ni.budget = 0.0
        ni.lam = 0.0
        nj.resolve(options)
        return y_cur + delta, True
    lam_j = _balance_level(alpha, target, ni.sigma, ni.t, nj.sigma, nj.t, options)
    new_i = _sum_p(alpha * lam_j, ni.sigma, ni.t)
    delta = ni.budget - new_i
    if y_cur + delta < 0.0:
        # full recall hits the meter floor; redistribute and re-solve apart
        ni.budget += y_cur
        nj.budget -= alpha * y_cur
        ni.resolve(options)
        nj.resolve(options)
        return 0.0, y_cur > 0
    ni.budget = new_i
    nj.budget = target - alpha * new_i
    ni.lam = alpha * lam_j
    nj.lam = lam_j
    return y_cur + delta, True


def _apply_epsilon_recall(alpha, ni, nj, y_cur, eps, options):
    """Incremental recall loop: move energy back in eps-sized steps while
    the donor level stays above the scaled receiver level and the meter
    allows it.  Fidelity reference for the closed-form recall."""
    changed = False
    while y_cur > 0 and nj.budget - alpha * eps > nj.floor * (1.0 + 1e-9) and \
            ni.lam > alpha * nj.lam * (1.0 + 1e-12):
        step = min(eps, y_cur)
        ni.budget += step
        nj.budget -= alpha * step
        y_cur -= step
        ni.resolve(options)
        nj.resolve(options)
        changed = True
    return y_cur, changed


def solve_single_slot(net, flows, energy, options=None):
    """Minimize total delay over link powers and energy transfers.

    Args:
        net: Network (data links, energy links).
        flows: per-data-link flows (array or FlowVector).
        energy: length-N vector of harvested energies.
        options: SolverOptions.

    Returns:
        SingleSlotSolution; `converged` is False when the sweep limit was
        reached (the best iterate is still returned).

    Raises:
        Infeasible: when the linear feasibility pre-check proves no
            allocation can satisfy the energy constraints.
    """
    from .topology import _flow_array

    options = options or SolverOptions()
    t = _flow_array(net, flows)
    energy = np.asarray(energy, dtype=float)
    if energy.shape != (net.node_count,):
        raise ValueError(
            f"energy vector has shape {energy.shape}, expected ({net.node_count},)")
    if np.any(energy < 0) or not np.all(np.isfinite(energy)):
        raise ValueError("energies must be finite and non-negative")

    if options.precheck:
        from .oracle import feasibility_check

        feas = feasibility_check(net, t, energy)
        if not feas.feasible:
            raise Infeasible(
                "no feasible allocation; short nodes: "
                f"{feas.violated_nodes} (max deficit {feas.max_violation:.6g})",
                violated_nodes=feas.violated_nodes)

    nodes = []
    for n in range(1, net.node_count + 1):
        idx = np.array(net.out_data(n), dtype=int)
        state = _NodeState(net.sigma[idx], t[idx], float(energy[n - 1]))
        nodes.append(state)

    y = np.zeros(net.num_energy_links)
    if any(ns.active and ns.budget <= ns.floor * (1.0 + 1e-12) for ns in nodes):
        # some node cannot run on its own harvest: start from an interior
        # point whose transfers are already on the meters (recallable)
        from .oracle import feasible_start

        _, y0, delta = feasible_start(net, t, energy)
        if delta <= 1e-12:
            raise Infeasible(
                "instance is at best boundary-feasible; total delay is "
                "unbounded for any allocation")
        y = np.asarray(y0, dtype=float)
        post = energy - net.B @ y
        for ns, budget in zip(nodes, post):
            ns.budget = float(budget)
    for ns in nodes:
        ns.resolve(options)
    eps = options.epsilon
    if eps is None:
        eps = 1e-3 * float(np.mean(energy)) if np.any(energy > 0) else 1e-3

    def objective():
        return sum(ns.delay() for ns in nodes)

    trace = [objective()]
    levels = [np.array([ns.lam for ns in nodes])]
    converged = False
    sweeps = 0
    for sweeps in range(1, options.max_sweeps + 1):
        max_rel = 0.0
        for q, link in enumerate(net.energy_links):
            ni = nodes[link.src - 1]
            nj = nodes[link.dst - 1]
            a = link.alpha
            gap = abs(ni.lam - a * nj.lam)
            scale = max(ni.lam, a * nj.lam, 1e-300)
            if gap <= options.sweep_tol * scale:
                continue
            if ni.lam > a * nj.lam and y[q] <= 0:
                continue  # recall wanted but the meter is empty
            before_i, before_j = ni.lam, nj.lam
            if (options.recall_mode == "epsilon"
                    and ni.lam > a * nj.lam and y[q] > 0):
                y[q], changed = _apply_epsilon_recall(a, ni, nj, y[q], eps, options)
            else:
                y[q], changed = _apply_balance(a, ni, nj, y[q], options)
            if changed:
                trace.append(objective())
                for prev, cur in ((before_i, ni.lam), (before_j, nj.lam)):
                    denom = max(abs(prev), abs(cur), 1e-300)
                    max_rel = max(max_rel, abs(cur - prev) / denom)
        levels.append(np.array([ns.lam for ns in nodes]))
        if max_rel <= options.sweep_tol:
            converged = True
            break

    powers = np.zeros(net.num_data_links)
    for n in range(1, net.node_count + 1):
        idx = np.array(net.out_data(n), dtype=int)
        if idx.size:
            powers[idx] = nodes[n - 1].powers()
    lam = np.array([ns.lam for ns in nodes])
    return SingleSlotSolution(
        powers=powers,
        transfers=y,
        water_levels=lam,
        total_delay=trace[-1],
        iterations=sweeps,
        converged=converged,
        objective_trace=np.asarray(trace),
        level_trace=np.asarray(levels),
        tolerances={"sweep_tol": options.sweep_tol,
                    "bisect_tol": options.bisect_tol,
                    "max_sweeps": options.max_sweeps,
                    "recall_mode": options.recall_mode},
    )


def power_equalization_residual(net, flows, powers):
    """Worst relative spread of -dh/dp among co-located positive-flow links.

    Zero at any allocation where every node's outgoing links share one
    water level.
    """
    from .topology import _flow_array

    t = _flow_array(net, flows)
    g = np.abs(_dh_dp_vec(np.asarray(powers, dtype=float), net.sigma, t))
    worst = 0.0
    for n in range(1, net.node_count + 1):
        idx = [l for l in net.out_data(n) if t[l] > 0]
        if len(idx) < 2:
            continue
        vals = g[idx]
        worst = max(worst, float((vals.max() - vals.min()) / vals.max()))
    return worst


def transfer_equalization_residual(net, flows, powers, transfers, y_tol=1e-9):
    """Worst relative gap |lam_i - alpha lam_j| / lam_i over active energy
    links, where each node level is read off its positive-flow links."""
    from .topology import _flow_array

    t = _flow_array(net, flows)
    g = np.abs(_dh_dp_vec(np.asarray(powers, dtype=float), net.sigma, t))
    lam = np.full(net.node_count, np.nan)
    for n in range(1, net.node_count + 1):
        idx = [l for l in net.out_data(n) if t[l] > 0]
        if idx:
            lam[n - 1] = float(np.mean(g[idx]))
    worst = 0.0
    for q, link in enumerate(net.energy_links):
        if transfers[q] <= y_tol:
            continue
        li = lam[link.src - 1]
        lj = lam[link.dst - 1]
        # a node with no loaded outgoing link leaves its multiplier free,
        # so the tie is unobservable on that side
        if np.isnan(li) or np.isnan(lj):
            continue
        worst = max(worst, abs(li - link.alpha * lj) / max(li, link.alpha * lj))
    return worst
