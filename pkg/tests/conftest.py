import numpy as np
import pytest

from eflow.topology import build_network


def star_network():
    """Six-node star: five sources, one destination, lossy energy ring."""
    return build_network({
        "nodes": 6,
        "data_links": [
            {"id": f"l{n}", "src": n, "dst": 6, "sigma": 0.1}
            for n in range(1, 6)
        ],
        "energy_links": [
            {"id": f"y{q}", "src": q, "dst": q % 5 + 1, "alpha": 0.5}
            for q in range(1, 6)
        ],
        "supply": [0.5, 2, 0.5, 0.5, 2, -5.5],
    })


STAR_FLOWS = np.array([0.5, 2.0, 0.5, 0.5, 2.0])
STAR_ENERGY = np.array([15.0, 15.0, 15.0, 15.0, 15.0, 0.0])


def relay_network():
    """Five-node two-slot relay mesh with the energy chain 1->3->4->2."""
    return build_network({
        "nodes": 5,
        "data_links": [
            {"id": "l1", "src": 1, "dst": 2, "sigma": 0.1},
            {"id": "l2", "src": 1, "dst": 3, "sigma": 0.1},
            {"id": "l3", "src": 3, "dst": 4, "sigma": 0.1},
            {"id": "l4", "src": 3, "dst": 2, "sigma": 0.1},
            {"id": "l5", "src": 2, "dst": 5, "sigma": 0.1},
            {"id": "l6", "src": 3, "dst": 5, "sigma": 0.1},
            {"id": "l7", "src": 4, "dst": 5, "sigma": 0.1},
        ],
        "energy_links": [
            {"id": "y1", "src": 1, "dst": 3, "alpha": 0.6},
            {"id": "y2", "src": 3, "dst": 4, "alpha": 0.5},
            {"id": "y3", "src": 4, "dst": 2, "alpha": 0.5},
        ],
        "supply": [3, 0, 0, 0, -3],
    })


RELAY_FLOWS = np.array([2, 1, 0.5, 0.125, 2.125, 0.375, 0.5])
RELAY_HARVESTS = np.array([[15, 10], [8, 6], [5, 9], [1, 6], [0, 0]], dtype=float)


def diamond_network():
    """Four-node diamond: source, two relay paths, destination."""
    return build_network({
        "nodes": 4,
        "data_links": [
            {"id": "l1", "src": 1, "dst": 2, "sigma": 0.1},
            {"id": "l2", "src": 1, "dst": 3, "sigma": 0.1},
            {"id": "l3", "src": 2, "dst": 4, "sigma": 0.1},
            {"id": "l4", "src": 3, "dst": 4, "sigma": 0.1},
        ],
        "energy_links": [
            {"id": "y1", "src": 1, "dst": 2, "alpha": 0.8},
            {"id": "y2", "src": 1, "dst": 3, "alpha": 0.8},
        ],
        "supply": [2, 0, 0, -2],
    })


DIAMOND_ENERGY = np.array([2.0, 0.5, 1.5, 0.0])


def random_instance(rng):
    """A random 3-4 node single-slot instance, feasible without transfers.

    Every node gets at least one outgoing data link with positive flow so
    all energy-link endpoints carry observable water levels.
    """
    n = int(rng.integers(3, 5))
    data = []
    for src in range(1, n):  # chain guarantees every non-sink node transmits
        data.append({"id": f"c{src}", "src": src, "dst": src + 1,
                     "sigma": float(rng.uniform(0.05, 0.4))})
    extra = int(rng.integers(1, 4))
    for k in range(extra):
        src = int(rng.integers(1, n))
        dst = int(rng.integers(src + 1, n + 1))
        data.append({"id": f"e{k}", "src": src, "dst": dst,
                     "sigma": float(rng.uniform(0.05, 0.4))})
    q = int(rng.integers(1, 4))
    energy = []
    for k in range(q):
        src = int(rng.integers(1, n))
        dst = int(rng.integers(1, n))
        while dst == src:
            dst = int(rng.integers(1, n))
        energy.append({"id": f"y{k}", "src": src, "dst": dst,
                       "alpha": float(rng.uniform(0.3, 1.0))})
    net = build_network({"nodes": n, "data_links": data,
                         "energy_links": energy,
                         "supply": np.zeros(n)})
    flows = rng.uniform(0.1, 1.2, size=net.num_data_links)
    floors = net.F @ (net.sigma * np.expm1(2 * flows))
    budget = floors * rng.uniform(1.3, 3.0, size=n) + rng.uniform(0.5, 4.0, size=n)
    return net, flows, budget


def brute_force_schedule(arrivals, per_slot_cost, spacing=1e-3, points=15):
    """Grid-refinement minimizer of sum_i cost(s_i) under causality.

    Searches over cumulative spends u_1 <= ... <= u_{T-1} (u_T pinned to the
    arrival total, optimal for any non-increasing cost), shrinking the grid
    around the incumbent until the spacing drops below `spacing`.  The cost
    is convex, so the refinement cannot trap a non-global minimum.
    """
    g = np.asarray(arrivals, dtype=float)
    T = g.size
    caps = np.cumsum(g)
    total = caps[-1]
    if T == 1:
        return np.array([total])
    lo = np.zeros(T - 1)
    hi = caps[:-1].copy()

    def objective(u):
        s = np.diff(np.concatenate([[0.0], u, [total]]))
        if np.any(s < -1e-12):
            return np.inf
        return sum(per_slot_cost(max(v, 0.0)) for v in s)

    best_u = None
    width = hi - lo
    while True:
        axes = [np.linspace(lo[k], hi[k], points) for k in range(T - 1)]
        best = (np.inf, None)
        import itertools
        for combo in itertools.product(*axes):
            u = np.asarray(combo)
            if np.any(np.diff(u) < 0) or np.any(u > caps[:-1] + 1e-12):
                continue
            val = objective(u)
            if val < best[0]:
                best = (val, u)
        best_u = best[1]
        width = width * (2.0 / (points - 1))
        if np.all(width < spacing):
            break
        lo = np.maximum(best_u - width / 2, 0.0)
        hi = np.minimum(best_u + width / 2, caps[:-1])
    return np.diff(np.concatenate([[0.0], best_u, [total]]))


@pytest.fixture
def star():
    return star_network()


@pytest.fixture
def relay():
    return relay_network()


@pytest.fixture
def diamond():
    return diamond_network()
