import numpy as np
import pytest

from dtlight.network import Intersection, Link, Phase, RoadNetwork
from dtlight.scenarios import RATE_PRESETS, build_scenario
from dtlight.sim import Simulator, average_delay, pressure, SimMetrics


def two_phase_intersection(inter_id="x", neighbors=()):
    prefix = f"{inter_id}_"
    return Intersection(
        id=inter_id,
        incoming_lanes=(f"{prefix}a_in", f"{prefix}b_in"),
        outgoing_lanes=(f"{prefix}a_out", f"{prefix}b_out"),
        phases=(
            Phase(0, ((f"{prefix}a_in", f"{prefix}a_out"),), saturation_flow=3),
            Phase(1, ((f"{prefix}b_in", f"{prefix}b_out"),), saturation_flow=3),
        ),
        neighbors=neighbors,
    )


def quiet_network(**kw):
    """Two-phase single intersection with no arrivals."""
    return RoadNetwork(
        name="quiet", intersections=(two_phase_intersection(),), **kw
    )


class TestBuildScenario:
    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            build_scenario("single-5lane")

    def test_nonpositive_rate_rejected(self):
        with pytest.raises(ValueError):
            build_scenario("single-3lane", rate=0.0)

    def test_3lane_preset_rates(self):
        net = build_scenario("single-3lane", 1)
        per_dir = {}
        for lane, rate in net.entry_lanes:
            per_dir.setdefault(lane.split("_")[0], 0.0)
            per_dir[lane.split("_")[0]] += rate
        assert all(abs(r - 0.5) < 1e-12 for r in per_dir.values())
        assert net.horizon_s == 3600 and net.control_step_s == 10

    def test_2lane_preset_rates(self):
        net = build_scenario("single-2lane", 0)
        per_dir = {}
        for lane, rate in net.entry_lanes:
            d = lane.split("_")[0]
            per_dir[d] = per_dir.get(d, 0.0) + rate
        assert all(abs(r - 0.2) < 1e-12 for r in per_dir.values())

    def test_presets_cover_paper_rates(self):
        assert RATE_PRESETS["single-3lane"] == (0.25, 0.5, 1.0)
        assert RATE_PRESETS["single-2lane"] == (0.2, 0.4, 0.8)

    def test_grid_adjacency(self):
        net = build_scenario("grid-2x2", 0)
        assert len(net.intersections) == 4
        for inter in net.intersections:
            assert len(inter.neighbors) == 2

    def test_neighbor_symmetry_enforced(self):
        a = two_phase_intersection("a", neighbors=("b",))
        b = two_phase_intersection("b", neighbors=())
        with pytest.raises(ValueError):
            RoadNetwork(name="bad", intersections=(a, b))

    def test_horizon_must_divide(self):
        with pytest.raises(ValueError):
            quiet_network(horizon_s=3605)


class TestStep:
    def test_empty_network_stays_empty(self):
        sim = Simulator(quiet_network(), seed=0)
        for _ in range(5):
            states, rewards, delta = sim.step({"x": 0})
        assert all(q == 0 for q in states["x"].queue_len.values())
        assert delta.total_delay_s == 0
        assert rewards["x"] == 0

    def test_departures_capped_by_saturation(self):
        sim = Simulator(quiet_network(), seed=0)
        sim.lanes["x_a_in"].join(5)
        sim.metrics.vehicles_entered = 5
        states, _, _ = sim.step({"x": 0})  # phase 0 serves a_in at saturation 3
        assert states["x"].queue_len["x_a_in"] == 2
        assert sim.metrics.vehicles_exited == 3

    def test_invalid_phase_rejected(self):
        sim = Simulator(quiet_network(), seed=0)
        with pytest.raises(ValueError):
            sim.step({"x": 9})

    def test_step_after_horizon_rejected(self):
        net = quiet_network(horizon_s=20, control_step_s=10)
        sim = Simulator(net, seed=0)
        sim.step({"x": 0})
        sim.step({"x": 0})
        with pytest.raises(RuntimeError):
            sim.step({"x": 0})

    def test_poisson_arrival_mean(self):
        # 4 entry approaches at 0.5 veh/s for 3600 s: mean 7200 per episode
        totals = []
        for seed in range(20):
            net = build_scenario("single-3lane", 1)
            sim = Simulator(net, seed)
            while not sim.done:
                sim.step({"i0": 0})
            totals.append(sim.metrics.vehicles_entered)
        mean = np.mean(totals)
        # sample mean of 20 Poisson(7200) draws: sigma = sqrt(7200/20)
        assert abs(mean - 7200) < 3 * np.sqrt(7200 / 20)

    def test_conservation_every_step(self):
        net = build_scenario("grid-2x2", 1)
        sim = Simulator(net, seed=3)
        rng = np.random.default_rng(0)
        while not sim.done:
            phases = {it.id: int(rng.integers(len(it.phases)))
                      for it in net.intersections}
            sim.step(phases)
            m = sim.metrics
            assert m.vehicles_entered == m.vehicles_exited + m.vehicles_in_network

    def test_determinism_bit_identical(self):
        def run():
            net = build_scenario("single-3lane", 1)
            sim = Simulator(net, seed=7)
            trace = []
            while not sim.done:
                states, rewards, _ = sim.step({"i0": sim.step_index % 8})
                trace.append((tuple(sorted(states["i0"].queue_len.items())),
                              rewards["i0"]))
            return trace, sim.metrics

        t1, m1 = run()
        t2, m2 = run()
        assert t1 == t2
        assert m1 == m2

    def test_monotone_drain(self):
        sim = Simulator(quiet_network(), seed=0)
        sim.lanes["x_a_in"].join(10)
        sim.metrics.vehicles_entered = 10
        steps = 0
        while sim.lanes["x_a_in"].queue_len > 0:
            sim.step({"x": 0})
            steps += 1
        assert steps == int(np.ceil(10 / 3))


class TestPressure:
    def test_definition(self):
        inter = Intersection(
            id="p",
            incoming_lanes=("e0", "e1", "e2"),
            outgoing_lanes=("o0", "o1"),
            phases=(Phase(0, (("e0", "o0"),)), Phase(1, (("e1", "o1"),))),
        )
        queues = {"e0": 3, "e1": 2, "e2": 0, "d0": 1, "d1": 0}
        downstream = {"o0": "d0", "o1": "d1"}
        assert pressure(inter, queues, downstream) == 4
        assert -pressure(inter, queues, downstream) == -4

    def test_zero_and_symmetric(self):
        inter = Intersection(
            id="p",
            incoming_lanes=("e0", "e1"),
            outgoing_lanes=("o0",),
            phases=(Phase(0, (("e0", "o0"),)), Phase(1, (("e1", "o0"),))),
        )
        zero = {"e0": 0, "e1": 0, "d": 0}
        assert pressure(inter, zero, {"o0": "d"}) == 0
        sym = {"e0": 1, "e1": 2, "d": 3}
        assert pressure(inter, sym, {"o0": "d"}) == 0

    def test_transfer_antisymmetry(self):
        # i's exit queue is j's entry queue: moving k vehicles into it
        # lowers p(i) and raises p(j) by the same k
        i = Intersection(
            id="i", incoming_lanes=("i_in",), outgoing_lanes=("i_out",),
            phases=(Phase(0, (("i_in", "i_out"),)), Phase(1, (("i_in", "i_out"),))),
        )
        j = Intersection(
            id="j", incoming_lanes=("j_in",), outgoing_lanes=("j_out",),
            phases=(Phase(0, (("j_in", "j_out"),)), Phase(1, (("j_in", "j_out"),))),
        )
        downstream = {"i_out": "j_in", "j_out": None}
        before = {"i_in": 5, "j_in": 2}
        after = {"i_in": 5, "j_in": 2 + 3}
        dp_i = pressure(i, after, downstream) - pressure(i, before, downstream)
        dp_j = pressure(j, after, downstream) - pressure(j, before, downstream)
        assert dp_i == -3 and dp_j == 3

    def test_chain_transfer_in_simulator(self):
        a = two_phase_intersection("a", neighbors=("b",))
        b = two_phase_intersection("b", neighbors=("a",))
        net = RoadNetwork(
            name="chain", intersections=(a, b),
            links=(Link("a_a_out", "b_a_in", travel_time_s=20.0),),
        )
        sim = Simulator(net, seed=0)
        sim.lanes["a_a_in"].join(2)
        sim.metrics.vehicles_entered = 2
        sim.step({"a": 0, "b": 1})  # a serves its queue onto the link
        assert sim.lanes["a_a_in"].queue_len == 0
        p_a0, p_b0 = sim.pressure(a), sim.pressure(b)
        # next step's only event is the transferred vehicles joining b's queue
        sim.step({"a": 1, "b": 1})
        moved = sim.lanes["b_a_in"].queue_len
        assert moved == 2
        assert sim.pressure(a) - p_a0 == -moved
        assert sim.pressure(b) - p_b0 == moved


class TestAverageDelay:
    def test_simple_division(self):
        m = SimMetrics(vehicles_entered=50, total_delay_s=1000.0)
        assert average_delay(m) == 20.0

    def test_empty_episode(self):
        assert average_delay(SimMetrics()) == 0.0

    def test_hand_trace_single_vehicle(self):
        # one vehicle queued on the unserved lane for 2 steps -> 20 s
        sim = Simulator(quiet_network(), seed=0)
        sim.lanes["x_b_in"].join(1)
        sim.metrics.vehicles_entered = 1
        sim.step({"x": 0})
        sim.step({"x": 0})
        sim.step({"x": 1})  # served; no wait accrues after departure
        assert average_delay(sim.metrics) == 20.0
