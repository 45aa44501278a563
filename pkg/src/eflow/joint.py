"""Joint optimization of data flows, link powers, and energy transfers.

The joint problem is convex in its constraint set but not jointly convex
in (powers, flows), so the solver seeks a stationary point: it cycles an
energy-management step (shift power between a node's links toward the one
with the largest marginal delay reduction), a data-routing step (shift flow
from the costliest source-to-destination path to the cheapest), and an
energy-routing step (the exact pairwise donor/receiver balances of the
single-slot solver).  Every step rejects moves that would increase total
delay, so the objective trace is non-increasing; converged points satisfy
the stationarity conditions measured by `check_kkt` and the vector of link
delays at such a point is Pareto-optimal (no feasible allocation improves
one link without hurting another).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .power_math import _delay_vec, _dh_dp_vec, min_power
from .single_slot import (SolverOptions, _NodeState, _apply_balance,
                          solve_node)
from .topology import has_data_cycle, simple_paths


class JointError(RuntimeError):
    pass


class CycleDetected(JointError):
    pass


class NoPathToDestination(JointError):
    pass


class NoFeasibleStart(JointError):
    pass


@dataclass(frozen=True)
class PathSet:
    """Simple source-to-destination paths, grouped by source node.

    by_source maps a source node to a tuple of paths, each a tuple of data
    link indices ordered head-to-tail; `all_paths` flattens them in the
    same order for frontier bookkeeping.
    """

    by_source: dict
    destinations: tuple

    @property
    def all_paths(self):
        out = []
        for src in sorted(self.by_source):
            out.extend(self.by_source[src])
        return tuple(out)


def enumerate_paths(net):
    """All simple data paths from each supply source to any destination.

    Raises:
        CycleDetected: the data topology must be acyclic.
        NoPathToDestination: a source cannot reach any destination.
    """
    if has_data_cycle(net):
        raise CycleDetected("data topology contains a directed cycle")
    dests = net.destinations()
    by_source = {}
    for s in net.sources():
        paths = []
        for d in dests:
            paths.extend(simple_paths(net, s, d))
        if not paths:
            raise NoPathToDestination(f"source node {s} reaches no destination")
        by_source[s] = tuple(paths)
    return PathSet(by_source=by_source, destinations=dests)


@dataclass
class JointIterate:
    """One feasible point of the joint problem plus step-size state."""

    flows: np.ndarray
    powers: np.ndarray
    transfers: np.ndarray
    xi_p: float
    xi_t: float
    iteration: int = 0
    objective: float = np.inf

    def copy(self):
        return replace(self, flows=self.flows.copy(), powers=self.powers.copy(),
                       transfers=self.transfers.copy())


@dataclass
class KKTResiduals:
    """Stationarity gaps of an iterate; all entries are non-negative.

    power_spread: worst relative spread of |dh/dp| across one node's loaded
        links (zero when each node sits on a single water level), plus the
        fraction of a loaded node's power parked on zero-flow links (such
        power has no marginal value and contradicts a positive multiplier).
    path_spread: worst relative spread of per-path sums of dh/dt across a
        source's flow-carrying paths; idle paths contribute one-sidedly
        (they may be costlier than the carrying paths, never cheaper).
    transfer_gap: worst relative violation of the energy-link tie
        lam_donor >= alpha * lam_receiver (equality where energy flows).
    slackness: constraint bookkeeping (energy violation, conservation
        residual at sources/relays, worst capacity margin).
    """

    power_spread: float
    path_spread: float
    transfer_gap: float
    slackness: dict = field(default_factory=dict)

    def max_residual(self):
        return max(self.power_spread, self.path_spread, self.transfer_gap)


def _objective(net, flows, powers):
    return float(np.sum(_delay_vec(powers, net.sigma, flows)))


def _node_levels(net, flows, powers):
    g = np.abs(_dh_dp_vec(powers, net.sigma, flows))
    lam = np.full(net.node_count, np.nan)
    for n in range(1, net.node_count + 1):
        idx = [l for l in net.out_data(n) if flows[l] > 0 and powers[l] > 0]
        if idx:
            lam[n - 1] = float(np.mean(g[idx]))
    return lam, g


def energy_management_step(net, iterate):
    """Move xi_p of power from each node's lowest-|dh/dp| link to its
    highest, clamped above the capacity floors; moves that would increase
    the node's delay are rejected.  A powered link whose flow has been
    routed away has zero marginal value, so it acts as a free donor and
    may be drained completely.

    Returns (iterate, accepted_count, attempted_count); attempted counts
    nodes where a move was actually tried, so callers can tell step
    rejection apart from an already-equalized no-op.
    """
    it = iterate.copy()
    accepted = attempted = 0
    g = np.abs(_dh_dp_vec(it.powers, net.sigma, it.flows))
    floors = min_power(net.sigma, it.flows)
    for n in range(1, net.node_count + 1):
        out = net.out_data(n)
        loaded = [l for l in out if it.flows[l] > 0]
        unused = [l for l in out if it.flows[l] == 0 and it.powers[l] > 0]
        if not loaded or (len(loaded) < 2 and not unused):
            continue
        vals = g[loaded]
        hi = loaded[int(np.argmax(vals))]
        if unused:
            lo = min(unused, key=lambda l: it.powers[l])
            step = min(it.xi_p, it.powers[lo])
        else:
            lo = loaded[int(np.argmin(vals))]
            if hi == lo or np.isclose(g[hi], g[lo], rtol=1e-12, atol=0.0):
                continue
            step = min(it.xi_p, 0.5 * (it.powers[lo] - floors[lo]))
        if step <= 0:
            continue
        attempted += 1
        sub = [hi, lo]
        before = float(np.sum(_delay_vec(it.powers[sub], net.sigma[sub],
                                         it.flows[sub])))
        trial_hi = it.powers[hi] + step
        trial_lo = it.powers[lo] - step
        after = float(np.sum(_delay_vec(
            np.array([trial_hi, trial_lo]),
            net.sigma[sub], it.flows[sub])))
        if after <= before:
            it.powers[hi] = trial_hi
            it.powers[lo] = trial_lo
            accepted += 1
    it.objective = _objective(net, it.flows, it.powers)
    return it, accepted, attempted


def data_routing_step(net, iterate, paths):
    """Shift xi_t of flow from each source's costliest path (largest sum of
    dh/dt) to its cheapest, clamping so donor flows stay non-negative and
    receiver links keep capacity strictly above flow.  Rejects shifts that
    would increase total delay.

    Returns (iterate, accepted_count, attempted_count), with attempted
    counting sources where a shift was actually tried.
    """
    it = iterate.copy()
    accepted = attempted = 0
    for src, plist in paths.by_source.items():
        if len(plist) < 2:
            continue
        caps = 0.5 * np.log1p(it.powers / net.sigma)
        sums = []
        for path in plist:
            ok = all(it.powers[l] > 0 and caps[l] > it.flows[l] for l in path)
            if not ok:
                sums.append(np.inf)
                continue
            sums.append(sum(
                caps[l] / (caps[l] - it.flows[l]) ** 2 for l in path))
        sums = np.asarray(sums)
        finite = np.isfinite(sums)
        if finite.sum() < 2:
            continue
        donor_candidates = [
            k for k in np.flatnonzero(finite)
            if min(it.flows[l] for l in plist[k]) > 0
        ]
        if not donor_candidates:
            continue
        donor = max(donor_candidates, key=lambda k: sums[k])
        recv = int(np.flatnonzero(finite)[np.argmin(sums[finite])])
        if donor == recv or sums[donor] <= sums[recv] * (1 + 1e-12):
            continue
        donor_links = set(plist[donor])
        recv_links = set(plist[recv])
        inc = recv_links - donor_links
        dec = donor_links - recv_links
        if not inc and not dec:
            continue
        step = it.xi_t
        if dec:
            step = min(step, min(it.flows[l] for l in dec))
        if inc:
            step = min(step, 0.5 * min(caps[l] - it.flows[l] for l in inc))
        if step <= 0:
            continue
        attempted += 1
        trial = it.flows.copy()
        for l in dec:
            trial[l] -= step
        for l in inc:
            trial[l] += step
        if _objective(net, trial, it.powers) <= it.objective:
            it.flows = trial
            it.objective = _objective(net, it.flows, it.powers)
            accepted += 1
    it.objective = _objective(net, it.flows, it.powers)
    return it, accepted, attempted


def energy_routing_step(net, iterate, energy, options=None):
    """Re-balance every energy link with the single-slot pairwise mechanics.

    Each link's donor/receiver pair is re-solved exactly on their current
    budgets (meters bound recalls at y >= 0), which also re-equalizes both
    nodes' links, so the step never increases total delay.  Returns
    (iterate, changed_count)."""
    options = options or SolverOptions()
    it = iterate.copy()
    changed = 0
    energy = np.asarray(energy, dtype=float)
    for q, link in enumerate(net.energy_links):
        i, j, a = link.src, link.dst, link.alpha
        avail = energy - net.B @ it.transfers
        states = {}
        for n in (i, j):
            idx = np.array(net.out_data(n), dtype=int)
            ns = _NodeState(net.sigma[idx], it.flows[idx], float(avail[n - 1]))
            ns.resolve(options)
            states[n] = (ns, idx)
        ni, idx_i = states[i]
        nj, idx_j = states[j]
        before = it.objective
        new_y, did = _apply_balance(a, ni, nj, float(it.transfers[q]), options)
        if not did:
            continue
        trial = it.powers.copy()
        if idx_i.size:
            trial[idx_i] = ni.powers()
        if idx_j.size:
            trial[idx_j] = nj.powers()
        obj = _objective(net, it.flows, trial)
        if obj <= before * (1 + 1e-12):
            it.powers = trial
            it.transfers[q] = new_y
            it.objective = obj
            changed += 1
    return it, changed


def check_kkt(net, iterate, paths=None, energy=None, y_tol=1e-9):
    """Stationarity and feasibility residuals of an iterate.

    The three spread/gap measures vanish exactly at points satisfying the
    necessary optimality conditions; the slackness dict reports constraint
    violations for debugging.  Pass paths=None when flows are externally
    fixed (the path condition is then not applicable and reads 0).
    """
    flows, powers, y = iterate.flows, iterate.powers, iterate.transfers
    lam, g = _node_levels(net, flows, powers)

    power_spread = 0.0
    for n in range(1, net.node_count + 1):
        out = net.out_data(n)
        idx = [l for l in out if flows[l] > 0 and powers[l] > 0]
        if idx:
            # power parked on a zero-flow link has zero marginal value and
            # contradicts a positive node multiplier: count it as spread
            wasted = sum(powers[l] for l in out if flows[l] == 0)
            total = sum(powers[l] for l in out)
            if total > 0:
                power_spread = max(power_spread, wasted / total)
        if len(idx) >= 2:
            vals = g[idx]
            power_spread = max(power_spread,
                               float((vals.max() - vals.min()) / vals.max()))

    path_spread = 0.0
    if paths is not None:
        caps = 0.5 * np.log1p(powers / net.sigma)
        for src, plist in paths.by_source.items():
            sums = []
            idle_sums = []
            for path in plist:
                if not all(powers[l] > 0 and caps[l] > flows[l] for l in path):
                    continue  # a dead link makes the path infinitely costly
                s = sum(caps[l] / (caps[l] - flows[l]) ** 2 for l in path)
                if all(flows[l] > 0 for l in path):
                    sums.append(s)
                else:
                    idle_sums.append(s)
            if len(sums) >= 2:
                smax, smin = max(sums), min(sums)
                path_spread = max(path_spread, (smax - smin) / smax)
            if sums and idle_sums:
                # paths not carrying flow may only be costlier, never cheaper
                ref = sum(sums) / len(sums)
                for s in idle_sums:
                    path_spread = max(path_spread, max(0.0, (ref - s) / ref))

    transfer_gap = 0.0
    for q, link in enumerate(net.energy_links):
        li = lam[link.src - 1]
        lj = lam[link.dst - 1]
        if np.isnan(li) or np.isnan(lj):
            continue
        scaled = link.alpha * lj
        scale = max(li, scaled)
        if scale <= 0:
            continue
        if y[q] > y_tol:
            transfer_gap = max(transfer_gap, abs(li - scaled) / scale)
        else:
            transfer_gap = max(transfer_gap, max(0.0, scaled - li) / scale)

    slackness = {}
    if energy is not None:
        energy = np.asarray(energy, dtype=float)
        spend = net.F @ powers + net.B @ y
        slackness["energy_violation"] = float(np.max(spend - energy, initial=0.0))
    resid = net.A @ flows - net.supply
    non_dest = net.supply >= 0
    slackness["conservation_residual"] = float(
        np.max(np.abs(resid[non_dest]), initial=0.0))
    caps = 0.5 * np.log1p(powers / net.sigma)
    loaded = flows > 0
    slackness["min_capacity_margin"] = float(
        np.min(caps[loaded] - flows[loaded], initial=np.inf))
    return KKTResiduals(power_spread=power_spread, path_spread=path_spread,
                        transfer_gap=transfer_gap, slackness=slackness)


@dataclass
class JointOptions:
    tol: float = 1e-3
    max_iters: int = 5000
    xi_p: float = 0.05
    xi_t: float = 0.01
    step_floor: float = 1e-9
    initial_flows: np.ndarray | None = None


@dataclass
class JointSolution:
    iterate: JointIterate
    residuals: KKTResiduals
    objective_trace: np.ndarray
    converged: bool
    status: str


def _fewest_hop_flows(net, paths):
    """Route each source's supply over its fewest-hop paths, equal split."""
    flows = np.zeros(net.num_data_links)
    for src, plist in paths.by_source.items():
        hops = min(len(p) for p in plist)
        short = [p for p in plist if len(p) == hops]
        share = net.supply[src - 1] / len(short)
        for p in short:
            for l in p:
                flows[l] += share
    return flows


def initial_point(net, energy, paths, flows=None, options=None):
    """A feasible starting iterate for the joint solver.

    Flows default to an equal split over each source's fewest-hop paths.
    Powers and transfers come from an interior-point feasibility solve (a
    plain harvest split can be infeasible when a relay needs donated
    energy), re-spent per node on a common water level.

    Raises:
        NoFeasibleStart: the chosen flows admit no strictly interior
            allocation.
    """
    from .oracle import OracleError, feasible_start

    opts = options or JointOptions()
    solver_opts = SolverOptions()
    if flows is None:
        flows = _fewest_hop_flows(net, paths)
    flows = np.asarray(flows, dtype=float)
    try:
        _, y, delta = feasible_start(net, flows, energy)
    except OracleError as exc:  # pragma: no cover - LP failure
        raise NoFeasibleStart(str(exc))
    if delta <= 1e-12:
        raise NoFeasibleStart(
            "no strictly interior allocation exists for the starting flows")
    energy = np.asarray(energy, dtype=float)
    budgets = energy - net.B @ y
    powers = np.zeros(net.num_data_links)
    for n in range(1, net.node_count + 1):
        idx = list(net.out_data(n))
        if not idx or not np.any(flows[idx] > 0):
            continue
        pn, _ = solve_node(float(budgets[n - 1]),
                           [(net.sigma[l], flows[l]) for l in idx], solver_opts)
        powers[idx] = pn
    it = JointIterate(flows=flows, powers=powers, transfers=y,
                      xi_p=opts.xi_p, xi_t=opts.xi_t)
    it.objective = _objective(net, flows, powers)
    return it


def solve_joint(net, energy, options=None):
    """Iterate the three-step scheme to a stationary (Pareto) point.

    Steps that cannot find an accepting move shrink their step sizes
    (reject-and-halve, floored at `step_floor`); the loop stops when all
    stationarity residuals fall below `tol`, or reports the best iterate
    when the iteration budget runs out.  The zero-supply instance returns
    the empty allocation immediately.

    Converged points are stationary and delay-Pareto-optimal, not certified
    global optima (the objective is not jointly convex).
    """
    options = options or JointOptions()
    energy = np.asarray(energy, dtype=float)
    if not np.any(net.supply > 0):
        it = JointIterate(
            flows=np.zeros(net.num_data_links),
            powers=np.zeros(net.num_data_links),
            transfers=np.zeros(net.num_energy_links),
            xi_p=options.xi_p, xi_t=options.xi_t, objective=0.0)
        res = check_kkt(net, it, None, energy)
        return JointSolution(it, res, np.zeros(1), True,
                             "zero supply: empty allocation is optimal")
    paths = enumerate_paths(net)
    it = initial_point(net, energy, paths, options.initial_flows, options)
    trace = [it.objective]
    converged = False
    residuals = check_kkt(net, it, paths, energy)
    for k in range(1, options.max_iters + 1):
        it.iteration = k
        before = it.objective
        it, acc_p, att_p = energy_management_step(net, it)
        it, acc_t, att_t = data_routing_step(net, it, paths)
        it, acc_y = energy_routing_step(net, it, energy)
        trace.append(it.objective)
        residuals = check_kkt(net, it, paths, energy)
        if residuals.max_residual() < options.tol:
            converged = True
            break
        # halve a step on rejection or overall stagnation; let it recover
        # (up to its initial size) while its moves keep landing, so a step
        # that idled while the other made progress is not stuck tiny
        stalled = before - it.objective < 1e-14 * max(1.0, abs(before))
        if stalled or (att_p > 0 and acc_p == 0):
            it.xi_p = max(it.xi_p * 0.5, options.step_floor)
        elif att_p > 0 and acc_p == att_p:
            it.xi_p = min(it.xi_p * 1.5, options.xi_p)
        if stalled or (att_t > 0 and acc_t == 0):
            it.xi_t = max(it.xi_t * 0.5, options.step_floor)
        elif att_t > 0 and acc_t == att_t:
            it.xi_t = min(it.xi_t * 1.5, options.xi_t)
        if (it.xi_p <= options.step_floor and it.xi_t <= options.step_floor
                and acc_y == 0):
            break
    status = ("stationary point reached (Pareto-optimal link delays; "
              "global optimality not certified)" if converged
              else "iteration budget exhausted; best iterate returned")
    return JointSolution(it, residuals, np.asarray(trace), converged, status)


@dataclass
class SweepPoint:
    """One flow split evaluated with and without energy cooperation."""

    split: tuple
    flows: np.ndarray
    path_delays: np.ndarray | None
    path_delays_no_coop: np.ndarray | None


@dataclass
class FrontierPoint:
    """A non-dominated per-path delay vector and the split achieving it."""

    delays: np.ndarray
    split: tuple
    uses_transfers: bool


@dataclass
class SweepResult:
    points: list
    frontier: list
    frontier_no_coop: list
    paths: tuple


def _path_delays(net, flows, powers, plist):
    caps = 0.5 * np.log1p(powers / net.sigma)
    gaps = caps - flows
    out = []
    for path in plist:
        if any(flows[l] > 0 and gaps[l] <= 0 for l in path):
            out.append(np.inf)
        else:
            out.append(sum(flows[l] / gaps[l] for l in path if flows[l] > 0))
    return np.asarray(out)


def _sweep_one(args):
    """Evaluate one flow split for pareto_sweep (top level for pickling)."""
    net, no_coop, energy, flows, combo, opts, all_paths = args
    from .single_slot import Infeasible, solve_single_slot

    pd = pd_nc = None
    try:
        sol = solve_single_slot(net, flows, energy, opts)
        pd = _path_delays(net, flows, sol.powers, all_paths)
    except Infeasible:
        pass
    try:
        sol_nc = solve_single_slot(no_coop, flows, energy, opts)
        pd_nc = _path_delays(no_coop, flows, sol_nc.powers, all_paths)
    except Infeasible:
        pass
    return SweepPoint(split=combo, flows=flows, path_delays=pd,
                      path_delays_no_coop=pd_nc)


def pareto_sweep(net, energy, grid_resolution, max_points=200_000,
                 solver_options=None, workers=None):
    """Trace achievable per-path delay vectors over a grid of flow splits.

    For every split of each source's supply over its paths, the fixed-flow
    capacity assignment is solved twice: with the energy links active and
    with them removed.  Every zero-transfer allocation is also achievable
    by the cooperative system, so its frontier is the non-dominated filter
    of BOTH point sets; the no-cooperation frontier filters only the
    transfer-free points.

    Splits are independent pure evaluations: pass `workers` to fan them
    out over processes (results keep grid order either way).

    Raises:
        GridTooLarge: when the split grid would exceed `max_points`.
    """
    import itertools

    from .oracle import GridTooLarge, _simplex_grid, pareto_filter

    energy = np.asarray(energy, dtype=float)
    paths = enumerate_paths(net)
    sources = sorted(paths.by_source)
    steps = int(grid_resolution)
    split_lists = [
        list(_simplex_grid(net.supply[s - 1], len(paths.by_source[s]), steps))
        for s in sources
    ]
    total = int(np.prod([len(sl) for sl in split_lists]))
    if total > max_points:
        raise GridTooLarge(f"{total} splits exceed cap {max_points}")

    no_coop = net.without_energy_links()
    opts = solver_options or SolverOptions()
    all_paths = paths.all_paths
    jobs = []
    for combo in itertools.product(*split_lists):
        flows = np.zeros(net.num_data_links)
        for s, split in zip(sources, combo):
            for path, amount in zip(paths.by_source[s], split):
                for l in path:
                    flows[l] += amount
        jobs.append((net, no_coop, energy, flows, combo, opts, all_paths))
    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_sweep_one, jobs, chunksize=8))
    else:
        points = [_sweep_one(job) for job in jobs]
    achievable = {}
    for pt in points:  # transfer-free representative wins exact delay ties
        if pt.path_delays_no_coop is not None and \
                np.all(np.isfinite(pt.path_delays_no_coop)):
            key = tuple(pt.path_delays_no_coop)
            achievable.setdefault(
                key, FrontierPoint(pt.path_delays_no_coop, pt.split, False))
        if pt.path_delays is not None and np.all(np.isfinite(pt.path_delays)):
            achievable.setdefault(
                tuple(pt.path_delays),
                FrontierPoint(pt.path_delays, pt.split, True))
    achievable = list(achievable.values())
    nc_only = [fp for fp in achievable if not fp.uses_transfers]
    frontier = [achievable[i] for i in
                pareto_filter(achievable, key=lambda fp: fp.delays)]
    frontier_nc = [nc_only[i] for i in
                   pareto_filter(nc_only, key=lambda fp: fp.delays)]
    return SweepResult(points=points, frontier=frontier,
                       frontier_no_coop=frontier_nc, paths=all_paths)
