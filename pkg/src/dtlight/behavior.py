"""Non-learned controllers: fixed-time, max-pressure, epsilon-greedy max-pressure."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import data as dtrl_data
from .mdp import AgentContext, StatelessPolicy, rollout
from .network import Intersection, RoadNetwork

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str  # fixed_time | max_pressure | emp
    cycle_durations_s: tuple[int, ...] = ()  # per phase, fixed_time only
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in ("fixed_time", "max_pressure", "emp"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        for d in self.cycle_durations_s:
            if d <= 0:
                raise ValueError("cycle durations must be positive")


def fixed_time_action(t: int, num_phases: int, durations_steps: tuple[int, ...]) -> int:
    """Round-robin over phases, each held for its configured number of steps."""
    cycle = sum(durations_steps)
    pos = t % cycle
    for i, d in enumerate(durations_steps):
        if pos < d:
            return i % num_phases
        pos -= d
    raise AssertionError("unreachable")


def phase_pressure(inter: Intersection, phase_idx: int, queues: Mapping[str, int],
                   downstream: Mapping[str, str | None]) -> int:
    total = 0
    for src, dst in inter.phases[phase_idx].movements:
        down = downstream.get(dst)
        total += queues[src] - (queues[down] if down is not None else 0)
    return total


def max_pressure_action(inter: Intersection, queues: Mapping[str, int],
                        downstream: Mapping[str, str | None]) -> int:
    """Argmax of per-phase pressure; ties break to the lowest phase index."""
    best, best_p = 0, None
    for i in range(len(inter.phases)):
        p = phase_pressure(inter, i, queues, downstream)
        if best_p is None or p > best_p:
            best, best_p = i, p
    return best


def emp_action(inter: Intersection, queues: Mapping[str, int],
               downstream: Mapping[str, str | None], epsilon: float,
               rng: np.random.Generator) -> int:
    if rng.random() < epsilon:
        return int(rng.integers(len(inter.phases)))
    return max_pressure_action(inter, queues, downstream)


class FixedTimePolicy(StatelessPolicy):
    def __init__(self, spec: BehaviorSpec, control_step_s: int):
        self.durations = tuple(
            max(1, d // control_step_s) for d in spec.cycle_durations_s
        )

    def act(self, ctx: AgentContext) -> int:
        durations = self.durations or (3,) * len(ctx.intersection.phases)
        if len(durations) != len(ctx.intersection.phases):
            raise ValueError("cycle durations must match the number of phases")
        return fixed_time_action(ctx.t, len(ctx.intersection.phases), durations)


class MaxPressurePolicy(StatelessPolicy):
    def act(self, ctx: AgentContext) -> int:
        return max_pressure_action(ctx.intersection, ctx.queues, ctx.downstream)


class EmpPolicy(StatelessPolicy):
    """Max-pressure with epsilon-greedy exploration from a private seeded stream."""

    def __init__(self, epsilon: float, seed: int, agent_index: int):
        self.epsilon = epsilon
        self._key = (seed, 3, agent_index)
        self.rng = np.random.default_rng(self._key)

    def reset(self) -> None:
        self.rng = np.random.default_rng(self._key)

    def act(self, ctx: AgentContext) -> int:
        return emp_action(
            ctx.intersection, ctx.queues, ctx.downstream, self.epsilon, self.rng
        )


def make_policies(spec: BehaviorSpec, net: RoadNetwork, seed: int = 0):
    """One policy instance per intersection, in intersection-id order."""
    policies = {}
    for idx, inter in enumerate(net.sorted_intersections()):
        if spec.kind == "fixed_time":
            policies[inter.id] = FixedTimePolicy(spec, net.control_step_s)
        elif spec.kind == "max_pressure":
            policies[inter.id] = MaxPressurePolicy()
        else:
            policies[inter.id] = EmpPolicy(spec.epsilon, seed, idx)
    return policies


def generate_dataset(spec: BehaviorSpec, net: RoadNetwork, out_dir: str | Path,
                     episodes: int = 100, seed: int = 0,
                     delta: float = 0.75) -> list[Path]:
    """Roll out seeded episodes and write one dataset file per agent.

    Episode e uses simulator seed `seed + e` and a matching exploration
    stream, so regeneration with the same arguments is byte-identical.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_agent: dict[str, list] = {it.id: [] for it in net.intersections}
    for e in range(episodes):
        ep_seed = seed + e
        policies = make_policies(spec, net, ep_seed)
        trajs, _ = rollout(policies, net, ep_seed, delta=delta)
        for agent_id, traj in trajs.items():
            per_agent[agent_id].append(traj)
    paths = []
    for inter in net.sorted_intersections():
        path = out_dir / f"{net.name}_{spec.kind}_{inter.id}.json"
        dtrl_data.write_dataset(
            path,
            trajectories=per_agent[inter.id],
            scenario=net.name,
            agent_id=inter.id,
            behavior=spec.kind,
            seed=seed,
            num_actions=len(inter.phases),
            control_step_s=net.control_step_s,
        )
        paths.append(path)
    return paths
