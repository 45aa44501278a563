"""Command-line front end: config ingestion, solver dispatch, CSV output.

Configs are JSON files with top-level keys `nodes`, `data_links` (id, src,
dst, sigma), `energy_links` (id, src, dst, alpha), `supply`, `flows`,
`harvests` (N x T array), `slots`, `solver` (single | multi | joint |
pareto), and `options`.  Outputs are deterministic: identical config and
seed produce byte-identical CSV files.

Exit codes: 0 solved/converged, 1 bad config or usage, 2 infeasible
instance, 3 iteration budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fixtures
from .joint import JointOptions, NoFeasibleStart, check_kkt, pareto_sweep, solve_joint
from .multi_slot import InfeasibleSlot, solve_multi_slot_with_transfer
from .single_slot import Infeasible, SolverOptions, solve_single_slot
from .topology import (TopologyError, build_network, check_flow_conservation,
                       min_feasible_energy)

SOLVERS = ("single", "multi", "joint", "pareto")


class ParseError(ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(ValueError):
    def __init__(self, message, field_name=None):
        super().__init__(message)
        self.field = field_name


@dataclass
class RunConfig:
    network: object
    solver: str
    flows: np.ndarray | None
    harvests: np.ndarray | None
    slots: int
    options: dict = field(default_factory=dict)
    source: str = ""


def load_config(path):
    """Parse and validate a solver config file.

    Raises:
        ParseError: malformed JSON (carries line/column).
        ValidationError: structurally valid JSON that names a bad field.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist", "path")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno)

    solver = raw.get("solver", "single")
    if solver not in SOLVERS:
        raise ValidationError(
            f"solver must be one of {SOLVERS}, got {solver!r}", "solver")
    for kind, noise_key in (("data_links", "sigma"), ("energy_links", "alpha")):
        for entry in raw.get(kind, []):
            for key in ("id", "src", "dst", noise_key):
                if key not in entry:
                    raise ValidationError(
                        f"{kind} entry {entry.get('id', entry)} is missing "
                        f"{key!r}", f"{kind}.{key}")
    try:
        net = build_network(raw)
    except TopologyError as exc:
        raise ValidationError(str(exc), "network")

    flows = raw.get("flows")
    if flows is not None:
        flows = np.asarray(flows, dtype=float)
        if flows.shape != (net.num_data_links,):
            raise ValidationError(
                f"flows has length {flows.size}, expected {net.num_data_links}",
                "flows")
        if np.any(flows < 0):
            raise ValidationError("flows must be non-negative", "flows")
        if "supply" in raw:
            resid = check_flow_conservation(net, flows)
            if np.max(np.abs(resid)) > 1e-9:
                raise ValidationError(
                    "flows violate conservation; per-node residual "
                    f"{np.array2string(resid, precision=6)}", "flows")
    if solver in ("single", "multi") and flows is None:
        raise ValidationError(f"solver {solver!r} requires `flows`", "flows")
    if solver in ("joint", "pareto") and "supply" not in raw:
        raise ValidationError(f"solver {solver!r} requires `supply`", "supply")

    harvests = raw.get("harvests")
    if harvests is None:
        raise ValidationError("config requires `harvests`", "harvests")
    try:
        harvests = np.asarray(harvests, dtype=float)
    except ValueError:
        raise ValidationError(
            "harvests must be a rectangular N x T array", "harvests")
    if harvests.ndim == 1:
        harvests = harvests[:, None]
    if harvests.shape[0] != net.node_count:
        raise ValidationError(
            f"harvests has {harvests.shape[0]} rows, expected {net.node_count}",
            "harvests")
    if np.any(harvests < 0):
        raise ValidationError("harvests must be non-negative", "harvests")
    slots = int(raw.get("slots", harvests.shape[1]))
    if slots != harvests.shape[1]:
        raise ValidationError(
            f"slots={slots} but harvests has {harvests.shape[1]} columns",
            "slots")
    if solver in ("single", "joint", "pareto") and slots != 1:
        raise ValidationError(
            f"solver {solver!r} is single-slot but harvests has {slots} columns",
            "slots")
    return RunConfig(network=net, solver=solver, flows=flows,
                     harvests=harvests, slots=slots,
                     options=dict(raw.get("options", {})), source=str(path))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_link_csv(net, flows, powers, out):
    rows = []
    T = powers.shape[1]
    for l, lk in enumerate(net.data_links):
        for i in range(T):
            p = powers[l, i]
            c = 0.5 * np.log1p(p / lk.sigma)
            if flows[l] == 0:
                d = 0.0
            elif c > flows[l]:
                d = flows[l] / (c - flows[l])
            else:
                d = np.inf
            rows.append((lk.id, i + 1, p, c, flows[l], d))
    _write_csv(out / "links.csv",
               ["link_id", "slot", "power", "capacity", "flow", "delay"], rows)


def _write_transfer_csv(net, transfers, out):
    rows = []
    T = transfers.shape[1]
    for q, lk in enumerate(net.energy_links):
        for i in range(T):
            rows.append((lk.id, i + 1, transfers[q, i], transfers[q, i]))
    _write_csv(out / "transfers.csv",
               ["energy_link_id", "slot", "transfer", "tap"], rows)


def _write_trace_csv(trace, out):
    _write_csv(out / "objective_trace.csv", ["iteration", "objective"],
               [(k, v) for k, v in enumerate(trace)])


def _run_solver(cfg, tol, max_iters, seed, out):
    net = cfg.network
    np.random.seed(seed)  # the solvers are deterministic; recorded for repro
    summary = [f"config: {cfg.source}", f"solver: {cfg.solver}", f"seed: {seed}"]

    if cfg.solver == "single":
        opts = SolverOptions(sweep_tol=tol if tol else 1e-9,
                             max_sweeps=max_iters or 2000)
        sol = solve_single_slot(net, cfg.flows, cfg.harvests[:, 0], opts)
        powers = sol.powers[:, None]
        transfers = sol.transfers[:, None]
        trace = sol.objective_trace
        converged = sol.converged
        iterations = sol.iterations
        objective = sol.total_delay
        levels = sol.level_trace
        level_label = "iteration"
        from .joint import JointIterate
        res = check_kkt(net, JointIterate(
            flows=np.asarray(cfg.flows, dtype=float), powers=sol.powers,
            transfers=sol.transfers, xi_p=0, xi_t=0), None, cfg.harvests[:, 0])
    elif cfg.solver == "multi":
        opts = SolverOptions(sweep_tol=tol if tol else 1e-9,
                             max_sweeps=max_iters or 2000)
        sol = solve_multi_slot_with_transfer(net, cfg.flows, cfg.harvests, opts)
        powers = sol.powers
        transfers = sol.transfers
        trace = sol.objective_trace
        converged = sol.converged
        iterations = sol.iterations
        objective = sol.total_delay
        levels = sol.water_levels.T
        level_label = "slot"
        # stationarity is checked on the time-expanded network
        from .joint import JointIterate
        from .multi_slot import time_expand

        ex = time_expand(net, cfg.slots)
        y_x = sol.transfers.T.reshape(-1)
        if cfg.slots > 1:
            y_x = np.concatenate([y_x, sol.carryover.reshape(-1)])
        res = check_kkt(ex.network, JointIterate(
            flows=ex.expand_flows(cfg.flows),
            powers=sol.powers.T.reshape(-1),
            transfers=y_x, xi_p=0, xi_t=0), None,
            ex.expand_energy(cfg.harvests))
        if sol.carryover.size:
            summary.append("carryover rows (node x slot boundary):")
            for n in range(net.node_count):
                summary.append(
                    f"  node {n + 1}: "
                    + " ".join(_fmt(v) for v in sol.carryover[n]))
    else:  # joint
        jopts = JointOptions(tol=tol if tol else 1e-3,
                             max_iters=max_iters or 5000)
        sol = solve_joint(net, cfg.harvests[:, 0], jopts)
        powers = sol.iterate.powers[:, None]
        transfers = sol.iterate.transfers[:, None]
        trace = sol.objective_trace
        converged = sol.converged
        iterations = sol.iterate.iteration
        objective = sol.iterate.objective
        levels = None
        res = sol.residuals
        summary.append(f"status: {sol.status}")
        summary.append("flows: " + " ".join(_fmt(v) for v in sol.iterate.flows))

    flows = cfg.flows if cfg.flows is not None else sol.iterate.flows
    _write_link_csv(net, np.asarray(flows, dtype=float), powers, out)
    _write_transfer_csv(net, transfers, out)
    _write_trace_csv(trace, out)
    if levels is not None:
        _write_csv(out / "water_levels.csv",
                   [level_label] + [f"node_{n+1}" for n in range(net.node_count)],
                   [(k + (level_label == "slot"), *row)
                    for k, row in enumerate(np.atleast_2d(levels))])
    if res is not None:
        _write_csv(out / "kkt_residuals.csv",
                   ["power_spread", "path_spread", "transfer_gap",
                    "energy_violation", "conservation_residual"],
                   [(res.power_spread, res.path_spread, res.transfer_gap,
                     res.slackness.get("energy_violation", 0.0),
                     res.slackness.get("conservation_residual", 0.0))])
    summary += [
        f"converged: {converged}",
        f"iterations: {iterations}",
        f"objective (total delay): {_fmt(objective)}",
        "powers (link x slot):",
    ]
    for l, lk in enumerate(net.data_links):
        summary.append(f"  {lk.id}: " + " ".join(_fmt(v) for v in powers[l]))
    summary.append("transfers (energy link x slot):")
    for q, lk in enumerate(net.energy_links):
        summary.append(f"  {lk.id}: " + " ".join(_fmt(v) for v in transfers[q]))
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    return 0 if converged else 3


def _run_pareto(cfg, grid, parallel, seed, out):
    import os

    net = cfg.network
    workers = os.cpu_count() if parallel else None
    res = pareto_sweep(net, cfg.harvests[:, 0], grid, workers=workers)
    names = ["path_" + "_".join(net.data_links[l].id for l in p)
             for p in res.paths]

    def rows(frontier):
        return sorted(tuple(float(v) for v in fp.delays) for fp in frontier)

    _write_csv(out / "pareto_cooperation.csv", names, rows(res.frontier))
    _write_csv(out / "pareto_no_cooperation.csv", names,
               rows(res.frontier_no_coop))
    (out / "summary.txt").write_text(
        f"config: {cfg.source}\nsolver: pareto\ngrid: {grid}\nseed: {seed}\n"
        f"cooperation frontier points: {len(res.frontier)}\n"
        f"no-cooperation frontier points: {len(res.frontier_no_coop)}\n")
    return 0


def run(cfg, tol=None, max_iters=None, grid=50, parallel=False, seed=0,
        out_dir="."):
    """Dispatch a validated config to its solver and write artifacts.

    Command-line flags win over the config's `options` block.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if tol is None:
        tol = cfg.options.get("tol")
    if max_iters is None:
        max_iters = cfg.options.get("max_iters")
    try:
        if cfg.solver == "pareto":
            return _run_pareto(cfg, grid, parallel, seed, out)
        return _run_solver(cfg, tol, max_iters, seed, out)
    except (Infeasible, InfeasibleSlot, NoFeasibleStart) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        (out / "summary.txt").write_text(
            f"config: {cfg.source}\nstatus: infeasible\nreason: {exc}\n")
        return 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="eflow",
        description="Delay-minimal power, energy-transfer, and flow solver "
                    "for energy-harvesting networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="JSON config file (or bundled fixture "
                                      "name: topology1, topology2, diamond)")
        p.add_argument("--tol", type=float, default=None,
                       help="convergence tolerance")
        p.add_argument("--max-iters", type=int, default=None)
        p.add_argument("--grid", type=int, default=50,
                       help="grid subdivisions for pareto sweeps")
        p.add_argument("--parallel", action="store_true",
                       help="evaluate pareto grid points in parallel")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")

    add_common(sub.add_parser("validate", help="validate a config file"))
    add_common(sub.add_parser("run", help="solve and write CSV artifacts"))
    add_common(sub.add_parser("pareto", help="sweep the achievable delay region"))

    args = parser.parse_args(argv)
    config_path = args.config
    if not Path(config_path).exists() and not config_path.endswith(".json"):
        if config_path in fixtures.fixture_names():
            config_path = str(fixtures.fixture_path(config_path))
    try:
        cfg = load_config(config_path)
    except ParseError as exc:
        print(f"parse error at line {exc.line} column {exc.column}: {exc}",
              file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"invalid config ({exc.field}): {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        net = cfg.network
        print(f"{cfg.source}: valid ({net!r}, solver={cfg.solver}, "
              f"slots={cfg.slots})")
        if cfg.flows is not None:
            floors = min_feasible_energy(net, cfg.flows)
            print("per-node energy floors:",
                  np.array2string(floors, precision=6))
        return 0
    if args.command == "pareto":
        cfg.solver = "pareto"
        if np.all(cfg.network.supply == 0):
            print("pareto sweep requires a nonzero supply", file=sys.stderr)
            return 1
    return run(cfg, tol=args.tol, max_iters=args.max_iters, grid=args.grid,
               parallel=args.parallel, seed=args.seed, out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())
