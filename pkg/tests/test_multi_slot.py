import math

import numpy as np
import pytest

from eflow.multi_slot import (InfeasibleSlot, reduced_arrivals,
                              solve_multi_slot_no_transfer,
                              solve_multi_slot_with_transfer,
                              staircase_schedule, time_expand)
from eflow.oracle import convex_solve
from eflow.power_math import LinkParams, dh_dp
from eflow.single_slot import solve_node
from eflow.topology import build_network
from conftest import (RELAY_FLOWS, RELAY_HARVESTS, brute_force_schedule,
                      relay_network)


def two_link_node():
    return build_network({
        "nodes": 2,
        "data_links": [
            {"id": "a", "src": 1, "dst": 2, "sigma": 0.1},
            {"id": "b", "src": 1, "dst": 2, "sigma": 0.1},
        ],
        "supply": [3, -3],
    })


class TestReducedArrivals:
    def test_zero_flow_passthrough(self):
        net = two_link_node()
        E = np.array([[4.0, 7.0], [0.0, 0.0]])
        G = reduced_arrivals(net, [0.0, 0.0], E)
        assert np.array_equal(G, E)

    def test_subtracts_capacity_floors(self):
        net = two_link_node()
        G = reduced_arrivals(net, [2.0, 1.0], np.array([[15.0], [0.0]]))
        floor = 0.1 * (math.exp(4) - 1) + 0.1 * (math.exp(2) - 1)
        assert G[0, 0] == pytest.approx(15.0 - floor, rel=1e-12)
        assert G[0, 0] == pytest.approx(9.0013, abs=5e-5)

    def test_infeasible_slot_named(self):
        net = two_link_node()
        with pytest.raises(InfeasibleSlot) as err:
            reduced_arrivals(net, [2.0, 1.0], np.array([[15.0, 2.0], [0, 0]]))
        assert err.value.node == 1
        assert err.value.slot == 2

    def test_boundary_first_slot_unbounded(self):
        # harvest exactly at the floor in slot 1: nothing can be banked,
        # the slot-1 delay is unbounded, and the error says where
        net = two_link_node()
        floor = 0.1 * (math.exp(4) - 1) + 0.1 * (math.exp(2) - 1)
        with pytest.raises(InfeasibleSlot) as err:
            solve_multi_slot_no_transfer(
                net, [2.0, 1.0], np.array([[floor, floor + 5.0], [0, 0]]))
        assert err.value.node == 1
        assert err.value.slot == 1


class TestStaircase:
    def test_constant_arrivals(self):
        assert np.allclose(staircase_schedule([3.0, 3.0, 3.0]), 3.0)

    def test_two_slot_average(self):
        s = staircase_schedule([15.0, 6.25])
        assert s.tolist() == [10.625, 10.625]

    def test_increasing_arrivals_untouched(self):
        s = staircase_schedule([1.0, 3.0])
        assert s.tolist() == [1.0, 3.0]

    def test_monotone_and_causal(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            g = rng.uniform(0, 2, size=rng.integers(1, 8))
            s = staircase_schedule(g)
            assert np.all(np.diff(s) >= -1e-12)
            cs, cg = np.cumsum(s), np.cumsum(g)
            assert np.all(cs <= cg + 1e-9)
            assert cs[-1] == pytest.approx(cg[-1], rel=1e-12)
            # cumulative spend is tight wherever the level steps up
            for i in np.flatnonzero(np.diff(s) > 1e-9):
                assert cs[i] == pytest.approx(cg[i], rel=1e-9)

    def test_matches_brute_force_delay_cost(self):
        g = np.array([1.0, 3.0])
        delay = lambda s: 1.0 / math.log1p(s) if s > 1e-12 else 1e12
        bf = brute_force_schedule(g, delay)
        assert staircase_schedule(g) == pytest.approx(bf, abs=5e-3)

    def test_objective_invariance(self):
        # the minimizer is the same for any convex non-increasing cost
        rng = np.random.default_rng(11)
        for _ in range(3):
            g = rng.uniform(0.2, 1.5, size=int(rng.integers(2, 5)))
            total = g.sum()
            delay = lambda s: 1.0 / math.log1p(s) if s > 1e-12 else 1e12
            quad = lambda s: (total - s) ** 2
            bf_delay = brute_force_schedule(g, delay)
            bf_quad = brute_force_schedule(g, quad)
            stairs = staircase_schedule(g)
            assert bf_delay == pytest.approx(bf_quad, abs=5e-3)
            assert stairs == pytest.approx(bf_delay, abs=5e-3)


class TestNoTransfer:
    def test_single_slot_degenerates_to_node_solve(self):
        net = two_link_node()
        E = np.array([[10.625], [0.0]])
        P = solve_multi_slot_no_transfer(net, [2.0, 1.0], E)
        p, _ = solve_node(10.625, [LinkParams(0.1, 2.0), LinkParams(0.1, 1.0)])
        assert P[:, 0] == pytest.approx(p, rel=1e-9)

    def test_sum_powers_follow_staircase(self):
        net = two_link_node()
        flows = [2.0, 1.0]
        E = np.array([[15.0, 6.25 + 5.99872], [0.0, 0.0]])
        P = solve_multi_slot_no_transfer(net, flows, E)
        sums = P.sum(axis=0)
        G = reduced_arrivals(net, flows, E)[0]
        base = 0.1 * (math.exp(4) - 1) + 0.1 * (math.exp(2) - 1)
        assert sums == pytest.approx(staircase_schedule(G) + base, rel=1e-8)

    def test_effective_harvest_sum_powers(self):
        # two-slot arrivals (15, 6.25) bank down to a flat 10.625 per slot
        net = two_link_node()
        E = np.array([[15.0, 6.25], [0.0, 0.0]])
        P = solve_multi_slot_no_transfer(net, [2.0, 1.0], E)
        assert P.sum(axis=0) == pytest.approx([10.625, 10.625], rel=1e-9)

    def test_cumulative_energy_tight_at_horizon(self):
        net = relay_network()
        # strip energy links: per-node banking only
        solo = net.without_energy_links()
        E = RELAY_HARVESTS + 3.0  # lift budgets so every node is feasible
        E[4] = 0.0
        P = solve_multi_slot_no_transfer(solo, RELAY_FLOWS, E)
        spend = np.stack([solo.F @ P[:, i] for i in range(2)], axis=1)
        cum_spend = np.cumsum(spend, axis=1)
        cum_E = np.cumsum(E, axis=1)
        assert np.all(cum_spend <= cum_E + 1e-7)
        transmitting = spend.sum(axis=1) > 0
        assert cum_spend[transmitting, -1] == pytest.approx(
            cum_E[transmitting, -1], rel=1e-8)
        # banking only moves energy forward: per-node sum powers never drop
        assert np.all(np.diff(spend, axis=1) >= -1e-9)

    def test_within_slot_equalization(self):
        net = two_link_node()
        E = np.array([[15.0, 6.25 + 5.99872], [0.0, 0.0]])
        P = solve_multi_slot_no_transfer(net, [2.0, 1.0], E)
        for i in range(2):
            g1 = -dh_dp(P[0, i], LinkParams(0.1, 2.0))
            g2 = -dh_dp(P[1, i], LinkParams(0.1, 1.0))
            assert g1 == pytest.approx(g2, rel=1e-7)


class TestTimeExpand:
    def test_counts(self):
        net = build_network({
            "nodes": 4,
            "data_links": [
                {"id": f"l{k}", "src": 1 + (k % 3), "dst": 2 + (k % 3),
                 "sigma": 0.1}
                for k in range(7)
            ],
            "energy_links": [
                {"id": f"y{k}", "src": k + 1, "dst": k + 2, "alpha": 0.5}
                for k in range(3)
            ],
            "supply": [0, 0, 0, 0],
        })
        ex = time_expand(net, 2)
        assert ex.network.node_count == 8
        assert ex.network.num_data_links == 14
        assert ex.network.num_energy_links == 3 * 2 + 4 * 1
        # storage links are lossless
        stored = [lk for lk, o in zip(ex.network.energy_links,
                                      ex.energy_origin) if o[0] == "storage"]
        assert all(lk.alpha == 1.0 for lk in stored)

    def test_single_slot_identity(self, relay):
        ex = time_expand(relay, 1)
        assert ex.network.node_count == relay.node_count
        assert ex.network.num_energy_links == relay.num_energy_links
        assert ex.data_origin == tuple((l, 1) for l in range(7))

    def test_provenance_round_trip(self, relay):
        ex = time_expand(relay, 3)
        assert {o[0] for o in ex.energy_origin} == {"transfer", "storage"}
        P = np.arange(ex.network.num_data_links, dtype=float)
        back = ex.collapse_powers(P)
        for l_exp, (l, slot) in enumerate(ex.data_origin):
            assert back[l, slot - 1] == P[l_exp]
        assert ex.node_id(2, 2) == relay.node_count + 2

    def test_expanded_passes_topology_invariants(self, relay):
        ex = time_expand(relay, 2)
        assert np.allclose(ex.network.A.sum(axis=0), 0.0)
        assert np.allclose(ex.network.B.sum(axis=0),
                           1.0 - ex.network.alpha)


class TestWithTransfer:
    def test_storage_reproduces_banking(self):
        # no inter-node energy links: the expanded solve must match the
        # per-node staircase solution
        net = two_link_node()
        flows = [2.0, 1.0]
        E = np.array([[15.0, 6.25 + 5.99872], [0.0, 0.0]])
        direct = solve_multi_slot_no_transfer(net, flows, E)
        sol = solve_multi_slot_with_transfer(net, flows, E)
        d_direct = 0.0
        for i in range(2):
            for l, t in enumerate(flows):
                c = 0.5 * math.log1p(direct[l, i] / 0.1)
                d_direct += t / (c - t)
        assert sol.total_delay == pytest.approx(d_direct, rel=1e-6)
        assert sol.powers == pytest.approx(direct, rel=5e-4)
        assert np.all(sol.carryover >= 0)

    def test_wrapper_types_accepted(self, relay):
        from eflow.topology import FlowVector, HarvestProfile

        a = solve_multi_slot_with_transfer(relay, RELAY_FLOWS, RELAY_HARVESTS)
        b = solve_multi_slot_with_transfer(relay, FlowVector(RELAY_FLOWS),
                                           HarvestProfile(RELAY_HARVESTS))
        assert a.total_delay == b.total_delay
        assert np.array_equal(a.powers, b.powers)

    def test_relay_fixture_matches_oracle(self, relay):
        sol = solve_multi_slot_with_transfer(relay, RELAY_FLOWS, RELAY_HARVESTS)
        assert sol.converged
        ex = time_expand(relay, 2)
        orc = convex_solve(ex.network, ex.expand_flows(RELAY_FLOWS),
                           ex.expand_energy(RELAY_HARVESTS))
        assert sol.total_delay == pytest.approx(orc.objective, rel=1e-5)

    def test_relay_energy_causality(self, relay):
        sol = solve_multi_slot_with_transfer(relay, RELAY_FLOWS, RELAY_HARVESTS)
        spend = np.stack([
            relay.F @ sol.powers[:, i] + relay.B @ sol.transfers[:, i]
            for i in range(2)
        ], axis=1)
        # banked energy shifts spend between slots but never ahead of arrival
        cum_spend = np.cumsum(spend, axis=1)
        cum_E = np.cumsum(RELAY_HARVESTS, axis=1)
        assert np.all(cum_spend <= cum_E + 1e-7)
        assert np.all(sol.carryover >= -1e-12)

    def test_scaled_level_tie_where_energy_flows(self, relay):
        sol = solve_multi_slot_with_transfer(relay, RELAY_FLOWS, RELAY_HARVESTS)
        levels = sol.water_levels
        for q, link in enumerate(relay.energy_links):
            for i in range(2):
                if sol.transfers[q, i] > 1e-6:
                    li = levels[link.src - 1, i]
                    lj = levels[link.dst - 1, i]
                    assert li == pytest.approx(link.alpha * lj, rel=1e-6)
