"""Independent first-principles solvers used to validate the main algorithms.

Nothing here shares iteration logic with the water-level solvers: the
feasibility check is a plain linear program over the energy constraints, the
convex reference solve hands the fixed-flow problem to a disciplined convex
programming backend, and the joint-problem oracle is an exhaustive grid
search over flow splits and transfers.  All are deliberately simple and are
meant for small instances and tests, not for the fast path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .power_math import min_power


class OracleError(RuntimeError):
    pass


class NotFeasible(OracleError):
    pass


class GridTooLarge(OracleError):
    pass


@dataclass
class FeasibilityResult:
    feasible: bool
    powers: np.ndarray | None
    transfers: np.ndarray | None
    violated_nodes: tuple
    max_violation: float


@dataclass
class OracleResult:
    objective: float
    powers: np.ndarray
    transfers: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _elastic_lp(net, floors, energy, extra_margin=0.0):
    """Minimize total per-node violation of F p + B y <= E with p >= floors.

    Returns (violation vector v, p, y).  v == 0 certifies feasibility.
    """
    L, Q, N = net.num_data_links, net.num_energy_links, net.node_count
    A_ub = np.hstack([net.F, net.B, -np.eye(N)])
    c = np.concatenate([np.zeros(L + Q), np.ones(N)])
    bounds = ([(f + extra_margin, None) for f in floors]
              + [(0, None)] * Q + [(0, None)] * N)
    res = linprog(c, A_ub=A_ub, b_ub=energy, bounds=bounds, method="highs")
    if not res.success:
        raise OracleError(f"feasibility LP failed: {res.message}")
    x = res.x
    return x[L + Q:], x[:L], x[L:L + Q]


def feasibility_check(net, flows, energy):
    """Decide whether any (p, y) satisfies the energy constraints.

    Solves an elastic linear program minimizing the total per-node budget
    violation; feasibility corresponds to zero violation, and the violating
    node subset is reported otherwise.
    """
    from .topology import _flow_array

    t = _flow_array(net, flows)
    energy = np.asarray(energy, dtype=float)
    floors = min_power(net.sigma, t)
    v, p, y = _elastic_lp(net, floors, energy)
    feasible = bool(np.all(v <= 1e-9))
    violated = tuple(int(i) + 1 for i in np.flatnonzero(v > 1e-9))
    return FeasibilityResult(
        feasible=feasible,
        powers=p if feasible else None,
        transfers=y if feasible else None,
        violated_nodes=violated,
        max_violation=float(v.max(initial=0.0)),
    )


def feasible_start(net, flows, energy):
    """A strictly interior feasible point with few gratuitous transfers.

    First maximizes the uniform power margin delta over F p + B y <= E,
    p >= floor + delta on loaded links, y >= 0; then, holding half that
    margin, minimizes the total transferred energy so the starting point
    does not push energy around for no reason.  Returns (p, y, delta);
    delta <= 0 means no strictly interior point exists (at best the
    instance is boundary-feasible, where the delay is unbounded).
    """
    from .topology import _flow_array

    t = _flow_array(net, flows)
    energy = np.asarray(energy, dtype=float)
    floors = min_power(net.sigma, t)
    L, Q, N = net.num_data_links, net.num_energy_links, net.node_count
    loaded = (t > 0).astype(float)
    # variables [p, y, delta]
    A_ub = np.hstack([net.F, net.B, np.zeros((N, 1))])
    A_lb = np.hstack([-np.eye(L), np.zeros((L, Q)), loaded[:, None]])
    A = np.vstack([A_ub, A_lb])
    b = np.concatenate([energy, -floors])
    c = np.zeros(L + Q + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * L + [(0, None)] * Q + [(None, None)]
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if not res.success:
        raise OracleError(f"interior-point LP failed: {res.message}")
    delta = float(res.x[-1])
    if delta <= 0 or Q == 0:
        x = res.x
        return x[:L], x[L:L + Q], delta
    c2 = np.concatenate([np.zeros(L), np.ones(Q)])
    A2 = np.hstack([A[:, :L + Q]])
    b2 = np.concatenate([energy, -floors - 0.5 * delta * loaded])
    res2 = linprog(c2, A_ub=A2, b_ub=b2,
                   bounds=[(0, None)] * (L + Q), method="highs")
    if not res2.success:  # pragma: no cover - fall back to the margin point
        x = res.x
        return x[:L], x[L:L + Q], delta
    return res2.x[:L], res2.x[L:L + Q], delta


def convex_solve(net, flows, energy, tol=1e-9):
    """Reference solution of the fixed-flow delay minimization.

    Formulates min sum t_l / (0.5*log(1 + p_l/sigma_l) - t_l) subject to
    F p + B y <= E, p above the capacity floors and y >= 0 as a disciplined
    convex program and hands it to an interior-point backend.  Used as the
    independent check of the water-level solvers on small instances.

    Raises:
        NotFeasible: when the constraint set is empty.
    """
    import cvxpy as cp

    from .topology import _flow_array

    t = _flow_array(net, flows)
    energy = np.asarray(energy, dtype=float)
    L, Q = net.num_data_links, net.num_energy_links
    pos = t > 0

    p = cp.Variable(L)
    y = cp.Variable(Q) if Q else None
    terms = []
    for l in range(L):
        if pos[l]:
            cap = 0.5 * cp.log(1.0 + p[l] / net.sigma[l])
            terms.append(t[l] * cp.inv_pos(cap - t[l]))
    spend = net.F @ p if y is None else net.F @ p + net.B @ y
    cons = [spend <= energy, p[pos] >= min_power(net.sigma, t)[pos]]
    if np.any(~pos):
        cons.append(p[~pos] == 0)
    if y is not None:
        cons.append(y >= 0)
    prob = cp.Problem(cp.Minimize(cp.sum(terms) if terms else 0.0), cons)

    solved = None
    errors = []
    for solver in (cp.CLARABEL, cp.SCS):
        try:
            prob.solve(solver=solver)
        except cp.error.SolverError as exc:  # pragma: no cover - backend issue
            errors.append(f"{solver}: {exc}")
            continue
        if prob.status in ("optimal", "optimal_inaccurate"):
            solved = solver
            break
        errors.append(f"{solver}: status {prob.status}")
    if solved is None:
        if prob.status and "infeasible" in str(prob.status):
            raise NotFeasible(f"convex program infeasible: {prob.status}")
        raise OracleError("no convex backend solved the problem: "
                          + "; ".join(errors))

    p_val = np.asarray(p.value, dtype=float).reshape(L)
    p_val[~pos] = 0.0
    y_val = (np.maximum(np.asarray(y.value, dtype=float).reshape(Q), 0.0)
             if y is not None else np.zeros(0))
    return OracleResult(
        objective=float(prob.value),
        powers=p_val,
        transfers=y_val,
        diagnostics={"solver": str(solved), "status": prob.status,
                     "tol": tol},
    )


@dataclass
class GridPoint:
    flows: np.ndarray
    transfers: np.ndarray
    path_delays: np.ndarray
    total_delay: float


@dataclass
class GridSearchResult:
    points: list
    frontier: list
    best: GridPoint


def _simplex_grid(total, k, steps):
    """All k-part splits of `total` on a grid with `steps` subdivisions."""
    if k == 1:
        yield (total,)
        return
    for combo in itertools.product(range(steps + 1), repeat=k - 1):
        if sum(combo) > steps:
            continue
        parts = [total * c / steps for c in combo]
        parts.append(total - sum(parts))
        yield tuple(parts)


def pareto_filter(points, key):
    """Indices of points whose key vectors are not dominated by any other."""
    vecs = [np.asarray(key(pt), dtype=float) for pt in points]
    keep = []
    for i, vi in enumerate(vecs):
        dominated = False
        for j, vj in enumerate(vecs):
            if j == i:
                continue
            if np.all(vj <= vi) and np.any(vj < vi):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return keep


def grid_search_joint(net, energy, resolution, max_points=500_000):
    """Exhaustive search over flow splits and energy transfers.

    For every grid point the per-source supply is split over its simple
    paths and each transfer is gridded over [0, donor energy]; the
    remaining per-node budgets are then spent optimally over outgoing
    links.  Returns all feasible points, the non-dominated set in per-path
    delay space, and the best-total-delay point.

    Raises:
        GridTooLarge: when the grid would exceed `max_points` evaluations.
    """
    from .single_slot import InfeasibleBudget, solve_node
    from .topology import simple_paths

    energy = np.asarray(energy, dtype=float)
    sources = net.sources()
    dests = net.destinations()
    paths = []  # (source, path) in canonical order
    per_source = []
    for s in sources:
        ps = []
        for d in dests:
            ps.extend(simple_paths(net, s, d))
        if not ps:
            raise OracleError(f"source node {s} reaches no destination")
        per_source.append((s, ps))
        paths.extend(ps)

    Q = net.num_energy_links
    steps = int(resolution)
    n_flow = int(np.prod([
        len(list(_simplex_grid(1.0, len(ps), steps))) for _, ps in per_source
    ])) if per_source else 1
    n_grid = n_flow * (steps + 1) ** Q
    if n_grid > max_points:
        raise GridTooLarge(f"grid of {n_grid} points exceeds cap {max_points}")

    caps = np.array([energy[lk.src - 1] for lk in net.energy_links])
    split_lists = [
        list(_simplex_grid(net.supply[s - 1], len(ps), steps))
        for s, ps in per_source
    ]
    y_lists = [np.linspace(0.0, c, steps + 1) for c in caps]

    points = []
    best = None
    for split_combo in itertools.product(*split_lists) if split_lists else [()]:
        flows = np.zeros(net.num_data_links)
        for (s, ps), split in zip(per_source, split_combo):
            for path, amount in zip(ps, split):
                for l in path:
                    flows[l] += amount
        for y_combo in itertools.product(*y_lists) if Q else [()]:
            y = np.asarray(y_combo, dtype=float)
            budgets = energy - net.B @ y if Q else energy.copy()
            if np.any(budgets < -1e-12):
                continue
            powers = np.zeros(net.num_data_links)
            feasible = True
            for n in range(1, net.node_count + 1):
                idx = list(net.out_data(n))
                if not idx:
                    continue
                links = [(net.sigma[l], flows[l]) for l in idx]
                try:
                    pn, _ = solve_node(max(budgets[n - 1], 0.0), links)
                except InfeasibleBudget:
                    feasible = False
                    break
                powers[idx] = pn
            if not feasible:
                continue
            caps_now = 0.5 * np.log1p(powers / net.sigma)
            gaps = caps_now - flows
            pd = []
            for path in paths:
                if any(gaps[l] <= 0 and flows[l] > 0 for l in path):
                    pd.append(np.inf)
                else:
                    pd.append(sum(flows[l] / gaps[l] for l in path
                                  if flows[l] > 0))
            pd = np.asarray(pd)
            pt = GridPoint(flows=flows.copy(), transfers=y,
                           path_delays=pd, total_delay=float(pd.sum()))
            points.append(pt)
            if best is None or pt.total_delay < best.total_delay:
                best = pt
    if best is None:
        raise NotFeasible("no grid point satisfied the energy constraints")
    frontier_idx = pareto_filter(points, key=lambda pt: pt.path_delays)
    frontier = [points[i] for i in frontier_idx]
    return GridSearchResult(points=points, frontier=frontier, best=best)
