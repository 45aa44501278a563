"""Energy sharing on a six-node star.

Five sources send data to one hub.  Two of them carry four times the flow
of the others, so with equal harvests their marginal delay per watt is far
higher.  A lossy energy ring (50% efficiency) lets the lightly loaded
sources ship energy around until every active link's water level satisfies
lambda_donor = 0.5 * lambda_receiver.  The heavily loaded nodes end up as
pure energy sinks: they receive but never send.
"""

import numpy as np

from eflow import build_network, solve_single_slot
from eflow.power_math import LinkParams, dh_dp, link_delay

net = build_network({
    "nodes": 6,
    "data_links": [
        {"id": f"l{n}", "src": n, "dst": 6, "sigma": 0.1} for n in range(1, 6)
    ],
    "energy_links": [
        {"id": f"y{q}", "src": q, "dst": q % 5 + 1, "alpha": 0.5}
        for q in range(1, 6)
    ],
    "supply": [0.5, 2, 0.5, 0.5, 2, -5.5],
})
flows = np.array([0.5, 2.0, 0.5, 0.5, 2.0])
energy = np.array([15.0, 15.0, 15.0, 15.0, 15.0, 0.0])

sol = solve_single_slot(net, flows, energy)

print("converged:", sol.converged, "after", sol.iterations, "sweeps")
print("total delay: %.4f" % sol.total_delay)
print()
print("link   flow   power     delay    water level")
for l, lk in enumerate(net.data_links):
    lp = LinkParams(lk.sigma, flows[l])
    print(f"{lk.id:>4} {flows[l]:6.2f} {sol.powers[l]:8.3f} "
          f"{link_delay(sol.powers[l], lp):8.4f} "
          f"{-dh_dp(sol.powers[l], lp):12.6f}")
print()
print("energy link  transfer   (0 = the donor keeps its energy)")
for q, lk in enumerate(net.energy_links):
    print(f"{lk.id:>10} {sol.transfers[q]:10.3f}")
print()
print("nodes 2 and 5 send nothing: their own data load eats every joule,")
print("so energy flows into them from their lightly loaded neighbours.")
