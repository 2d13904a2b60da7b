"""Offline trajectory datasets: JSON interchange format, return-to-go,
sub-trajectory sampling and batching."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
DEFAULT_CONTEXT = 20  # K
DEFAULT_BATCH = 256


def compute_rtg(rewards) -> np.ndarray:
    """Suffix sums of a reward sequence (return-to-go per step)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("rewards must be non-empty")
    return np.cumsum(r[::-1])[::-1].copy()


@dataclass
class Episode:
    obs: np.ndarray      # (T, obs_dim)
    actions: np.ndarray  # (T,) int
    rewards: np.ndarray  # (T,)

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if not (len(self.obs) == len(self.actions) == len(self.rewards)):
            raise ValueError("episode field lengths disagree")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def rtg(self) -> np.ndarray:
        return compute_rtg(self.rewards)


@dataclass
class Dataset:
    """In-memory trajectory collection plus the file header metadata."""

    episodes: list[Episode]
    scenario: str = ""
    agent_id: str = ""
    behavior: str = ""
    seed: int = 0
    num_actions: int = 0
    control_step_s: int = 10

    def __post_init__(self):
        if self.episodes and self.num_actions == 0:
            self.num_actions = int(max(e.actions.max() for e in self.episodes)) + 1

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def obs_dim(self) -> int:
        return self.episodes[0].obs.shape[1] if self.episodes else 0

    @property
    def returns(self) -> np.ndarray:
        return np.array([e.episode_return for e in self.episodes])


def max_offline_return(dataset: Dataset) -> float:
    if not dataset.episodes:
        raise ValueError("empty dataset")
    return float(dataset.returns.max())


def top_c_trajectories(dataset: Dataset, c: int) -> list[Episode]:
    """The c highest-return episodes; ties break towards the earlier episode."""
    if c > len(dataset):
        raise ValueError(f"C={c} exceeds dataset size {len(dataset)}")
    order = sorted(
        range(len(dataset)),
        key=lambda i: (-dataset.episodes[i].episode_return, i),
    )
    return [dataset.episodes[i] for i in order[:c]]


@dataclass
class SubTrajectoryBatch:
    """A batch of K-step windows, left-padded at episode starts."""

    states: np.ndarray      # (B, K, obs_dim)
    actions: np.ndarray     # (B, K) int
    rtg: np.ndarray         # (B, K)
    timesteps: np.ndarray   # (B, K) int
    valid_mask: np.ndarray  # (B, K) bool

    def __len__(self) -> int:
        return len(self.actions)


def _cut_window(ep: Episode, rtg: np.ndarray, end: int, k: int, obs_dim: int):
    """Window ending at step `end` (inclusive), left-padded to length k."""
    start = max(0, end - k + 1)
    n = end - start + 1
    states = np.zeros((k, obs_dim))
    actions = np.zeros(k, dtype=np.int64)
    rtgs = np.zeros(k)
    timesteps = np.zeros(k, dtype=np.int64)
    mask = np.zeros(k, dtype=bool)
    states[k - n:] = ep.obs[start:end + 1]
    actions[k - n:] = ep.actions[start:end + 1]
    rtgs[k - n:] = rtg[start:end + 1]
    timesteps[k - n:] = np.arange(start, end + 1)
    mask[k - n:] = True
    return states, actions, rtgs, timesteps, mask


def sample_batch(dataset: Dataset, batch_size: int = DEFAULT_BATCH,
                 k: int = DEFAULT_CONTEXT,
                 rng: np.random.Generator | None = None) -> SubTrajectoryBatch:
    """Sample windows: episodes weighted by length, end index uniform within."""
    if not dataset.episodes:
        raise ValueError("empty dataset")
    if k < 1:
        raise ValueError("context length must be >= 1")
    rng = rng or np.random.default_rng()
    lengths = np.array([len(e) for e in dataset.episodes], dtype=np.float64)
    probs = lengths / lengths.sum()
    obs_dim = dataset.obs_dim
    rtgs = [e.rtg for e in dataset.episodes]
    ep_idx = rng.choice(len(dataset.episodes), size=batch_size, p=probs)
    rows = []
    for i in ep_idx:
        ep = dataset.episodes[i]
        end = int(rng.integers(len(ep)))
        rows.append(_cut_window(ep, rtgs[i], end, k, obs_dim))
    states, actions, rtg, timesteps, mask = (np.stack(x) for x in zip(*rows))
    return SubTrajectoryBatch(states, actions, rtg, timesteps, mask)


def _header(dataset: Dataset) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": dataset.scenario,
        "agent_id": dataset.agent_id,
        "behavior": dataset.behavior,
        "seed": dataset.seed,
        "obs_dim": dataset.obs_dim,
        "num_actions": dataset.num_actions,
        "control_step_s": dataset.control_step_s,
    }


def write_dataset(path: str | Path, trajectories, scenario: str, agent_id: str,
                  behavior: str, seed: int, num_actions: int,
                  control_step_s: int) -> Path:
    """Write the dtrl JSON file atomically; partial files never survive.

    `trajectories` may be mdp.Trajectory objects or Episode objects.
    """
    episodes = [_as_episode(t) for t in trajectories]
    ds = Dataset(
        episodes=episodes, scenario=scenario, agent_id=agent_id,
        behavior=behavior, seed=seed, num_actions=num_actions,
        control_step_s=control_step_s,
    )
    doc = dict(_header(ds))
    doc["episodes"] = [
        [[list(map(float, o)), int(a), float(r)]
         for o, a, r in zip(e.obs, e.actions, e.rewards)]
        for e in episodes
    ]
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "w") as f:
            json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return path


def _as_episode(traj) -> Episode:
    if isinstance(traj, Episode):
        return traj
    return Episode(
        obs=np.stack([r.obs for r in traj.records]),
        actions=[r.action for r in traj.records],
        rewards=[r.reward for r in traj.records],
    )


def load_dataset(path: str | Path) -> Dataset:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')}")
    episodes = []
    for ep in doc["episodes"]:
        obs = np.array([row[0] for row in ep], dtype=np.float64)
        actions = [row[1] for row in ep]
        rewards = [row[2] for row in ep]
        episodes.append(Episode(obs=obs, actions=actions, rewards=rewards))
    ds = Dataset(
        episodes=episodes,
        scenario=doc["scenario"],
        agent_id=doc["agent_id"],
        behavior=doc["behavior"],
        seed=doc["seed"],
        num_actions=doc["num_actions"],
        control_step_s=doc["control_step_s"],
    )
    if episodes and ds.obs_dim != doc["obs_dim"]:
        raise ValueError("obs_dim header disagrees with episode payload")
    for e in episodes:
        if e.actions.size and e.actions.max() >= ds.num_actions:
            raise ValueError("action out of range for num_actions header")
    return ds
