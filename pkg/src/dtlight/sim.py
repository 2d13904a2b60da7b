"""Deterministic point-queue microsimulator of signalized intersections.

Vehicles are anonymous counts. Each incoming lane holds a FIFO of queued
vehicles (with join bookkeeping for waiting times) plus a pipeline of
"approaching" vehicles that join the queue once their link travel time
elapses. One control step: sample Poisson arrivals, serve the active
phase's movements up to saturation flow, deliver matured approaching
vehicles, then accrue waiting time on everything still queued.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .network import Intersection, RoadNetwork


@dataclass
class SimMetrics:
    vehicles_entered: int = 0
    vehicles_exited: int = 0
    vehicles_in_network: int = 0
    total_delay_s: float = 0.0
    completed_trips: int = 0

    def snapshot(self) -> "SimMetrics":
        return SimMetrics(
            self.vehicles_entered,
            self.vehicles_exited,
            self.vehicles_in_network,
            self.total_delay_s,
            self.completed_trips,
        )


@dataclass
class IntersectionState:
    """Per-intersection dynamic state at one control step."""

    intersection_id: str
    queue_len: dict[str, int]
    approaching: dict[str, int]
    acc_wait_s: dict[str, float]
    active_phase: int
    sim_time_s: float


def average_delay(metrics: SimMetrics) -> float:
    """Accrued delay per vehicle that entered the network; 0 for an empty episode."""
    if metrics.vehicles_entered == 0:
        return 0.0
    return metrics.total_delay_s / metrics.vehicles_entered


def pressure(inter: Intersection, queues: dict[str, int],
             downstream: dict[str, str | None] | None = None) -> int:
    """Sum of entering-lane queues minus queues downstream of the exit lanes.

    `downstream` maps each outgoing lane to the incoming lane it feeds
    (None at the network boundary, where the exit queue is 0).
    """
    entering = sum(queues[ln] for ln in inter.incoming_lanes)
    exiting = 0
    if downstream:
        for out in inter.outgoing_lanes:
            dst = downstream.get(out)
            if dst is not None:
                exiting += queues[dst]
    return entering - exiting


class _Lane:
    """Queue + approaching pipeline for one incoming lane."""

    __slots__ = ("join_inc", "join_sum", "inc", "pipeline")

    def __init__(self):
        self.join_inc: deque[float] = deque()  # lane wait accumulator at join time
        self.join_sum = 0.0
        self.inc = 0.0  # total wait-seconds accrued per vehicle since t=0
        self.pipeline: dict[int, int] = {}  # arrival step -> count

    @property
    def queue_len(self) -> int:
        return len(self.join_inc)

    @property
    def approaching(self) -> int:
        return sum(self.pipeline.values())

    @property
    def acc_wait_s(self) -> float:
        return self.queue_len * self.inc - self.join_sum

    def join(self, n: int):
        for _ in range(n):
            self.join_inc.append(self.inc)
        self.join_sum += n * self.inc

    def depart(self, n: int) -> int:
        n = min(n, self.queue_len)
        for _ in range(n):
            self.join_sum -= self.join_inc.popleft()
        return n

    def schedule(self, step: int, n: int):
        if n:
            self.pipeline[step] = self.pipeline.get(step, 0) + n

    def mature(self, step: int) -> int:
        return self.pipeline.pop(step, 0)

    def tick(self, dt: float):
        self.inc += dt


class Simulator:
    """One seeded episode on a road network. Not shared across episodes."""

    def __init__(self, net: RoadNetwork, seed: int):
        self.net = net
        self.seed = seed
        self.step_index = 0
        self.metrics = SimMetrics()
        self.lanes: dict[str, _Lane] = {}
        self.active_phase: dict[str, int] = {}
        self.downstream: dict[str, str | None] = {}
        for inter in net.intersections:
            self.active_phase[inter.id] = inter.phases[0].id
            for ln in inter.incoming_lanes:
                self.lanes[ln] = _Lane()
            for ln in inter.outgoing_lanes:
                self.downstream[ln] = net.downstream_lane(ln)
        # independent streams per entry lane and per turn split, keyed by
        # (seed, stable lane index) so runs are reproducible lane by lane
        entry_order = [ln for ln, _ in net.entry_lanes]
        self._entry_rng = {
            ln: np.random.default_rng((seed, 1, i)) for i, ln in enumerate(entry_order)
        }
        self._split_rng = {
            ts.lane: np.random.default_rng((seed, 2, i))
            for i, ts in enumerate(net.turn_splits)
        }
        self._splits = {ts.lane: ts for ts in net.turn_splits}

    @property
    def done(self) -> bool:
        return self.step_index >= self.net.num_steps

    def queues(self) -> dict[str, int]:
        return {ln: lane.queue_len for ln, lane in self.lanes.items()}

    def pressure(self, inter: Intersection) -> int:
        return pressure(inter, self.queues(), self.downstream)

    def states(self) -> dict[str, IntersectionState]:
        t = self.step_index * self.net.control_step_s
        out = {}
        for inter in self.net.intersections:
            out[inter.id] = IntersectionState(
                intersection_id=inter.id,
                queue_len={ln: self.lanes[ln].queue_len for ln in inter.incoming_lanes},
                approaching={ln: self.lanes[ln].approaching for ln in inter.incoming_lanes},
                acc_wait_s={ln: self.lanes[ln].acc_wait_s for ln in inter.incoming_lanes},
                active_phase=self.active_phase[inter.id],
                sim_time_s=t,
            )
        return out

    def _serve_movement(self, src: str, dst: str, saturation: int):
        n = self.lanes[src].depart(saturation)
        if n == 0:
            return
        down = self.downstream.get(dst)
        if down is None:
            self.metrics.vehicles_exited += n
            self.metrics.completed_trips += n
        else:
            travel = next(
                lk.travel_time_s for lk in self.net.links if lk.src == dst
            )
            arrive = self.step_index + max(1, round(travel / self.net.control_step_s))
            self.lanes[down].schedule(arrive, n)

    def step(self, chosen_phases: dict[str, int]):
        """Advance one control step; returns (states, rewards, metrics delta).

        Rewards are -pressure per intersection, measured after the step's
        vehicle movements.
        """
        if self.done:
            raise RuntimeError("simulation past horizon")
        dt = self.net.control_step_s
        before = self.metrics.snapshot()

        for inter in self.net.intersections:
            pid = chosen_phases[inter.id]
            if pid not in inter.phase_ids():
                raise ValueError(f"invalid phase {pid} for intersection {inter.id}")
            self.active_phase[inter.id] = pid

        # 1. Poisson arrivals enter the approaching pipeline of each entry lane
        for ln, rate in self.net.entry_lanes:
            n = int(self._entry_rng[ln].poisson(rate * dt))
            if n:
                self.metrics.vehicles_entered += n
                arrive = self.step_index + max(
                    1, round(self.net.entry_travel_time_s / dt)
                )
                self.lanes[ln].schedule(arrive, n)

        # 2. serve the active phase's movements, plus always-on right turns
        for inter in self.net.sorted_intersections():
            phase = next(p for p in inter.phases if p.id == self.active_phase[inter.id])
            for src, dst in phase.movements:
                self._serve_movement(src, dst, phase.saturation_flow)
            for src, dst in inter.permanent_movements:
                self._serve_movement(src, dst, inter.permanent_saturation)

        # 3. approaching vehicles whose travel time elapsed join their queue
        self.step_index += 1
        for ln, lane in self.lanes.items():
            n = lane.mature(self.step_index)
            if n == 0:
                continue
            split = self._splits.get(ln)
            if split is not None:
                k = int(self._split_rng[ln].binomial(n, split.prob))
                self.lanes[split.partner].join(k)
                n -= k
            lane.join(n)

        # 4. queued vehicles accrue waiting time
        for lane in self.lanes.values():
            self.metrics.total_delay_s += dt * lane.queue_len
            lane.tick(dt)

        self.metrics.vehicles_in_network = sum(
            lane.queue_len + lane.approaching for lane in self.lanes.values()
        )
        assert (
            self.metrics.vehicles_entered
            == self.metrics.vehicles_exited + self.metrics.vehicles_in_network
        ), "vehicle conservation violated"

        rewards = {
            inter.id: -self.pressure(inter) for inter in self.net.intersections
        }
        delta = SimMetrics(
            vehicles_entered=self.metrics.vehicles_entered - before.vehicles_entered,
            vehicles_exited=self.metrics.vehicles_exited - before.vehicles_exited,
            vehicles_in_network=self.metrics.vehicles_in_network,
            total_delay_s=self.metrics.total_delay_s - before.total_delay_s,
            completed_trips=self.metrics.completed_trips - before.completed_trips,
        )
        return self.states(), rewards, delta
