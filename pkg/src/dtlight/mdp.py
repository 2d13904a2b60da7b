"""Per-intersection agents on top of the simulator: observations and rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .network import Intersection, RoadNetwork
from .sim import SimMetrics, Simulator

# fixed per-channel normalization applied before features enter a model:
# queue and approaching counts in units of 50 vehicles, waits in units of 500 s
FEATURE_SCALES = np.array([50.0, 50.0, 500.0])
DEFAULT_NEIGHBOR_DISCOUNT = 0.75


@dataclass
class AgentObservation:
    """Local lane features plus discounted, padded neighbor features.

    `local` is (max_lanes, 3) raw features [queue_len, approaching, acc_wait_s];
    `neighbor_block` is (max_neighbors, max_lanes, 3) with each neighbor's
    local features already scaled by the neighborhood discount.
    """

    local: np.ndarray
    neighbor_block: np.ndarray

    def vector(self) -> np.ndarray:
        """Flat normalized feature vector of fixed per-scenario dimension."""
        parts = [self.local / FEATURE_SCALES]
        if self.neighbor_block.size:
            parts.append(self.neighbor_block / FEATURE_SCALES)
        return np.concatenate([p.reshape(-1) for p in parts]).astype(np.float64)


def obs_layout(net: RoadNetwork) -> tuple[int, int]:
    """(max_lanes, max_neighbors) padding layout shared by every agent."""
    max_lanes = max(len(it.incoming_lanes) for it in net.intersections)
    max_neighbors = max(len(it.neighbors) for it in net.intersections)
    return max_lanes, max_neighbors


def obs_dim(net: RoadNetwork) -> int:
    max_lanes, max_neighbors = obs_layout(net)
    return max_lanes * 3 * (1 + max_neighbors)


def _local_features(sim: Simulator, inter: Intersection, max_lanes: int) -> np.ndarray:
    feats = np.zeros((max_lanes, 3))
    for i, ln in enumerate(inter.incoming_lanes):
        lane = sim.lanes[ln]
        feats[i] = (lane.queue_len, lane.approaching, lane.acc_wait_s)
    return feats


def observe(sim: Simulator, inter_id: str,
            delta: float = DEFAULT_NEIGHBOR_DISCOUNT) -> AgentObservation:
    """Observation of one agent: local features plus delta-discounted neighbors."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("neighbor discount must be in [0, 1]")
    inter = sim.net.intersection(inter_id)
    max_lanes, max_neighbors = obs_layout(sim.net)
    local = _local_features(sim, inter, max_lanes)
    block = np.zeros((max_neighbors, max_lanes, 3))
    for j, nb in enumerate(sorted(inter.neighbors)):
        block[j] = delta * _local_features(sim, sim.net.intersection(nb), max_lanes)
    return AgentObservation(local=local, neighbor_block=block)


@dataclass
class StepRecord:
    obs: np.ndarray  # normalized flat feature vector
    action: int
    reward: float


@dataclass
class Trajectory:
    agent_id: str
    seed: int
    records: list[StepRecord] = field(default_factory=list)

    @property
    def episode_return(self) -> float:
        return sum(r.reward for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class AgentContext:
    """Everything a per-agent policy may look at when choosing a phase."""

    t: int
    intersection: Intersection
    obs: AgentObservation
    queues: Mapping[str, int]
    downstream: Mapping[str, str | None]


class AgentPolicy(Protocol):
    def reset(self) -> None: ...

    def act(self, ctx: AgentContext) -> int: ...

    def observe_reward(self, reward: float) -> None: ...


class StatelessPolicy:
    """Base for policies that ignore episode state."""

    def reset(self) -> None:
        pass

    def observe_reward(self, reward: float) -> None:
        pass


def rollout(policies: Mapping[str, AgentPolicy], net: RoadNetwork, seed: int,
            delta: float = DEFAULT_NEIGHBOR_DISCOUNT,
            ) -> tuple[dict[str, Trajectory], SimMetrics]:
    """Run one full episode; agents are stepped in intersection-id order."""
    inters = net.sorted_intersections()
    if set(policies) != {it.id for it in inters}:
        raise ValueError("need exactly one policy per intersection")
    sim = Simulator(net, seed)
    trajs = {it.id: Trajectory(agent_id=it.id, seed=seed) for it in inters}
    for pol in policies.values():
        pol.reset()
    for t in range(net.num_steps):
        queues = sim.queues()
        chosen: dict[str, int] = {}
        observations: dict[str, AgentObservation] = {}
        for it in inters:
            obs = observe(sim, it.id, delta)
            observations[it.id] = obs
            ctx = AgentContext(
                t=t, intersection=it, obs=obs, queues=queues,
                downstream=sim.downstream,
            )
            action = policies[it.id].act(ctx)
            if not 0 <= action < len(it.phases):
                raise ValueError(
                    f"policy for {it.id} returned out-of-range action {action}"
                )
            chosen[it.id] = it.phases[action].id
        _, rewards, _ = sim.step(chosen)
        for it in inters:
            policies[it.id].observe_reward(rewards[it.id])
            trajs[it.id].records.append(
                StepRecord(
                    obs=observations[it.id].vector(),
                    action=chosen[it.id],
                    reward=float(rewards[it.id]),
                )
            )
    return trajs, sim.metrics
