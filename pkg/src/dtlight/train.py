"""DTLight learning phases: teacher pre-training, distillation, adapter-only
online fine-tuning, and greedy evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .data import (Dataset, Episode, SubTrajectoryBatch, compute_rtg,
                   max_offline_return, sample_batch, top_c_trajectories)
from .mdp import AgentContext, Trajectory, rollout
from .model import (AdapterConfig, DecisionTransformer, FINETUNE_SELECTOR,
                    ModelConfig, num_parameters, set_trainable)
from .network import RoadNetwork
from .sim import SimMetrics, average_delay


class StochasticPolicy(torch.nn.Module):
    """Categorical policy head over a decision transformer, with a learnable
    entropy temperature (positive via exp reparameterization)."""

    def __init__(self, cfg: ModelConfig, lambda_init: float = 0.1):
        super().__init__()
        self.model = DecisionTransformer(cfg)
        self.log_temperature = torch.nn.Parameter(
            torch.tensor(math.log(lambda_init))
        )

    @property
    def cfg(self) -> ModelConfig:
        return self.model.cfg

    def temperature(self) -> torch.Tensor:
        return self.log_temperature.exp()

    def logits(self, batch: SubTrajectoryBatch) -> torch.Tensor:
        return self.model.action_logits(batch)


def _valid(t: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return t[mask]


def dt_loss(policy: StochasticPolicy, batch: SubTrajectoryBatch,
            target_entropy: float | None = None,
            lam_override: float | None = None,
            logits: torch.Tensor | None = None):
    """Masked NLL minus temperature-weighted entropy, plus the dual term that
    adapts the temperature towards the entropy target.

    With `lam_override=0.0` the result is exactly the mean NLL.
    Returns (loss, stats dict).
    """
    if logits is None:
        logits = policy.logits(batch)
    dev = logits.device
    mask = torch.as_tensor(batch.valid_mask, dtype=torch.bool, device=dev)
    if not bool(mask.any()):
        raise ValueError("batch has no valid tokens")
    actions = torch.as_tensor(batch.actions, dtype=torch.long, device=dev)
    logp = F.log_softmax(logits, dim=-1)
    nll = _valid(-logp.gather(-1, actions.unsqueeze(-1)).squeeze(-1), mask).mean()
    entropy = _valid(-(logp.exp() * logp).sum(-1), mask).mean()
    if target_entropy is None:
        target_entropy = 0.25 * math.log(policy.cfg.num_actions)
    if lam_override is not None:
        lam = torch.tensor(float(lam_override), device=dev)
        loss = nll - lam * entropy
    else:
        lam = policy.temperature()
        loss = nll - lam.detach() * entropy
        if policy.log_temperature.requires_grad:
            loss = loss + lam * (target_entropy - entropy.detach())
    stats = {
        "nll": float(nll.detach()),
        "entropy": float(entropy.detach()),
        "lambda": float(lam.detach()),
        "loss": float(loss.detach()),
    }
    return loss, stats


def kd_soft_loss(student_logits: torch.Tensor, teacher_logits: torch.Tensor,
                 mask, temperature: float) -> torch.Tensor:
    """Mean soft cross-entropy between temperature-smoothed distributions."""
    if temperature <= 0:
        raise ValueError("distillation temperature must be positive")
    dev = student_logits.device
    mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool, device=dev)
    t = F.softmax(teacher_logits.detach() / temperature, dim=-1)
    s_logp = F.log_softmax(student_logits / temperature, dim=-1)
    return _valid(-(t * s_logp).sum(-1), mask).mean()


def kd_loss(policy: StochasticPolicy, batch: SubTrajectoryBatch,
            teacher_logits: torch.Tensor, temperature: float,
            alpha: float, beta: float, lam_override: float | None = None):
    """alpha * soft distillation loss + beta * hard sequence-modeling loss."""
    student_logits = policy.logits(batch)
    soft = kd_soft_loss(student_logits, teacher_logits, batch.valid_mask,
                        temperature)
    hard, hstats = dt_loss(policy, batch, lam_override=lam_override,
                           logits=student_logits)
    loss = alpha * soft + beta * hard
    stats = dict(hstats)
    stats.update({"soft": float(soft.detach()), "loss": float(loss.detach())})
    return loss, stats


def make_optimizer(policy: torch.nn.Module, config: TrainConfig):
    params = [p for p in policy.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=config.lr,
                            weight_decay=config.weight_decay)
    warmup = max(1, config.warmup_steps)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: min(1.0, (step + 1) / warmup)
    )
    return opt, sched


def _optimize(policy, loss, opt, sched, clip):
    opt.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(
        [p for p in policy.parameters() if p.requires_grad], clip
    )
    opt.step()
    sched.step()


def _guard(loss: torch.Tensor):
    if not torch.isfinite(loss):
        raise RuntimeError("training diverged: non-finite loss")


def train_teacher(dataset: Dataset, config: TrainConfig, seed: int = 0,
                  updates: int | None = None,
                  model_config: ModelConfig | None = None):
    """Pre-train a teacher policy on the offline dataset.

    Returns (policy, loss history).
    """
    updates = config.teacher_updates if updates is None else updates
    torch.manual_seed(seed)
    cfg = model_config or ModelConfig(
        obs_dim=dataset.obs_dim, num_actions=dataset.num_actions,
        n_layers=config.teacher_layers, n_heads=config.teacher_heads,
        d_model=config.teacher_d_model, dropout=config.dropout,
        rtg_scale=config.rtg_scale,
    )
    policy = StochasticPolicy(cfg, lambda_init=config.lambda_init)
    set_trainable(policy, "all")
    opt, sched = make_optimizer(policy, config)
    rng = np.random.default_rng((seed, 10))
    losses = []
    policy.train()
    for _ in range(updates):
        batch = sample_batch(dataset, config.batch_size, config.context_length, rng)
        loss, stats = dt_loss(policy, batch)
        _guard(loss)
        _optimize(policy, loss, opt, sched, config.grad_clip)
        losses.append(stats)
    policy.eval()
    return policy, losses


def student_config(dataset: Dataset, config: TrainConfig) -> ModelConfig:
    return ModelConfig(
        obs_dim=dataset.obs_dim, num_actions=dataset.num_actions,
        n_layers=config.student_layers, n_heads=config.student_heads,
        d_model=config.student_d_model, dropout=config.dropout,
        rtg_scale=config.rtg_scale,
        adapter=AdapterConfig(
            n_div=config.adapter_n_div, rank=config.adapter_rank,
            bottleneck=config.adapter_bottleneck,
        ),
    )


def distill(teacher: StochasticPolicy, dataset: Dataset, config: TrainConfig,
            seed: int = 0, updates: int | None = None,
            alpha: float | None = None,
            model_config: ModelConfig | None = None):
    """Train a student (adapters injected, identity-initialized) against the
    teacher's soft targets plus the hard sequence-modeling loss.

    Returns (student policy, stats history).
    """
    if teacher.cfg.obs_dim != dataset.obs_dim \
            or teacher.cfg.num_actions != dataset.num_actions:
        raise ValueError("teacher and dataset disagree on obs_dim/num_actions")
    updates = config.student_updates if updates is None else updates
    alpha = config.kd_alpha if alpha is None else alpha
    torch.manual_seed(seed + 1)
    cfg = model_config or student_config(dataset, config)
    student = StochasticPolicy(cfg, lambda_init=config.lambda_init)
    set_trainable(student, "all")
    opt, sched = make_optimizer(student, config)
    rng = np.random.default_rng((seed, 11))
    teacher.eval()
    history = []
    student.train()
    for _ in range(updates):
        batch = sample_batch(dataset, config.batch_size, config.context_length, rng)
        with torch.no_grad():
            teacher_logits = teacher.logits(batch)
        loss, stats = kd_loss(student, batch, teacher_logits,
                              config.kd_temperature, alpha, config.kd_beta)
        _guard(loss)
        _optimize(student, loss, opt, sched, config.grad_clip)
        history.append(stats)
    student.eval()
    return student, history


def greedy_agreement(student: StochasticPolicy, teacher: StochasticPolicy,
                     dataset: Dataset, config: TrainConfig, seed: int = 123,
                     batches: int = 4) -> float:
    """Fraction of held-out sub-trajectory tokens where greedy actions agree."""
    rng = np.random.default_rng((seed, 12))
    agree, total = 0, 0
    student.eval()
    teacher.eval()
    with torch.no_grad():
        for _ in range(batches):
            batch = sample_batch(dataset, config.batch_size,
                                 config.context_length, rng)
            mask = torch.as_tensor(batch.valid_mask, dtype=torch.bool)
            a_s = student.logits(batch).argmax(-1)
            a_t = teacher.logits(batch).argmax(-1)
            agree += int((a_s[mask] == a_t[mask]).sum())
            total += int(mask.sum())
    return agree / total


def select_action(policy: StochasticPolicy, states, rtgs, timesteps, actions,
                  k: int, mode: str = "greedy",
                  rng: np.random.Generator | None = None) -> int:
    """Action for the newest step given the recent context.

    `states`/`rtgs`/`timesteps` cover steps up to and including the current
    one; `actions` covers past steps only (one shorter).
    """
    if len(states) == 0:
        raise ValueError("empty context")
    states = np.asarray(states[-k:], dtype=np.float64)
    rtgs = np.asarray(rtgs[-k:], dtype=np.float64)
    timesteps = np.asarray(timesteps[-k:], dtype=np.int64)
    n = len(states)
    acts = np.zeros(n, dtype=np.int64)
    past = list(actions)[-(k - 1):] if k > 1 else []
    if past:
        acts[n - 1 - len(past):n - 1] = past
    batch = SubTrajectoryBatch(
        states=states[None], actions=acts[None], rtg=rtgs[None],
        timesteps=timesteps[None], valid_mask=np.ones((1, n), dtype=bool),
    )
    with torch.no_grad():
        logits = policy.logits(batch)[0, -1]
    if mode == "greedy":
        return int(torch.argmax(logits))
    if mode != "sample":
        raise ValueError(f"unknown action mode {mode!r}")
    rng = rng or np.random.default_rng()
    probs = F.softmax(logits, dim=-1).numpy().astype(np.float64)
    probs /= probs.sum()
    return int(rng.choice(len(probs), p=probs))


class DTAgentPolicy:
    """Rollout adapter: feeds a running (rtg, state, action) context of length
    <= K into the policy and decrements the return-to-go by realized rewards."""

    def __init__(self, policy: StochasticPolicy, rtg_init: float, k: int,
                 mode: str = "greedy", seed: int = 0):
        self.policy = policy
        self.rtg_init = rtg_init
        self.k = k
        self.mode = mode
        self._seed = seed
        self.reset()

    def reset(self) -> None:
        self.rng = np.random.default_rng((self._seed, 20))
        self.states: list[np.ndarray] = []
        self.rtgs: list[float] = []
        self.actions: list[int] = []
        self.timesteps: list[int] = []
        self.running_rtg = self.rtg_init

    def act(self, ctx: AgentContext) -> int:
        self.states.append(ctx.obs.vector())
        self.rtgs.append(self.running_rtg)
        self.timesteps.append(ctx.t)
        action = select_action(
            self.policy, self.states, self.rtgs, self.timesteps, self.actions,
            k=self.k, mode=self.mode, rng=self.rng,
        )
        self.actions.append(action)
        return action

    def observe_reward(self, reward: float) -> None:
        self.running_rtg -= reward


def run_episode_dt(policies: dict[str, StochasticPolicy], net: RoadNetwork,
                   rtg_inits: dict[str, float], mode: str, seed: int,
                   k: int = 20, delta: float = 0.75,
                   ) -> tuple[dict[str, Trajectory], SimMetrics]:
    """One simulator episode driven by per-agent transformer policies."""
    agents = {
        inter.id: DTAgentPolicy(
            policies[inter.id], rtg_inits[inter.id], k, mode, seed=seed + i
        )
        for i, inter in enumerate(net.sorted_intersections())
    }
    for p in policies.values():
        p.eval()
    return rollout(agents, net, seed, delta=delta)


class ReplayBuffer:
    """Fixed-capacity trajectory store; insertion evicts the minimum-return
    episode once full."""

    def __init__(self, capacity: int, episodes=()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.episodes: list[Episode] = list(episodes)
        if len(self.episodes) > capacity:
            raise ValueError("seeded beyond capacity")

    def __len__(self) -> int:
        return len(self.episodes)

    def insert(self, episode: Episode) -> Episode | None:
        """Add an episode; returns the evicted one (None while below capacity)."""
        evicted = None
        if len(self.episodes) >= self.capacity:
            idx = int(np.argmin([e.episode_return for e in self.episodes]))
            evicted = self.episodes.pop(idx)
        self.episodes.append(episode)
        return evicted

    def as_dataset(self, template: Dataset) -> Dataset:
        return Dataset(
            episodes=list(self.episodes), scenario=template.scenario,
            agent_id=template.agent_id, behavior="online",
            seed=template.seed, num_actions=template.num_actions,
            control_step_s=template.control_step_s,
        )


@dataclass
class EvalReport:
    scenario: str
    method: str
    seeds: list[int]
    delays: list[float]
    returns: list[float]
    param_total: int = 0
    param_trainable: int = 0
    wall_clock_s: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.delays))

    @property
    def std_delay(self) -> float:
        return float(np.std(self.delays)) if len(self.delays) >= 2 else 0.0

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std_return(self) -> float:
        return float(np.std(self.returns)) if len(self.returns) >= 2 else 0.0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seeds": self.seeds,
            "delays": self.delays,
            "returns": self.returns,
            "mean_delay": self.mean_delay,
            "std_delay": self.std_delay,
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "param_total": self.param_total,
            "param_trainable": self.param_trainable,
            "wall_clock_s": self.wall_clock_s,
            "config": self.config,
        }


def evaluate_policies(make_agents, net: RoadNetwork, seeds: list[int],
                      method: str, delta: float = 0.75,
                      config: dict | None = None) -> EvalReport:
    """Greedy evaluation through the shared rollout harness.

    `make_agents(seed)` returns one rollout policy per intersection.
    """
    started = time.perf_counter()
    delays, returns = [], []
    for seed in seeds:
        trajs, metrics = rollout(make_agents(seed), net, seed, delta=delta)
        delays.append(average_delay(metrics))
        returns.append(sum(t.episode_return for t in trajs.values()))
    return EvalReport(
        scenario=net.name, method=method, seeds=list(seeds), delays=delays,
        returns=returns, wall_clock_s=time.perf_counter() - started,
        config=config or {},
    )


def evaluate_dt(policies: dict[str, StochasticPolicy], net: RoadNetwork,
                rtg_inits: dict[str, float], config: TrainConfig,
                seeds: list[int], method: str = "dtlight") -> EvalReport:
    def make_agents(seed):
        return {
            inter.id: DTAgentPolicy(
                policies[inter.id], rtg_inits[inter.id],
                config.context_length, "greedy", seed=seed + i,
            )
            for i, inter in enumerate(net.sorted_intersections())
        }

    for p in policies.values():
        p.eval()
    report = evaluate_policies(
        make_agents, net, seeds, method, delta=config.neighbor_discount
    )
    any_policy = next(iter(policies.values()))
    report.param_total = num_parameters(any_policy)
    report.param_trainable = num_parameters(any_policy, only_trainable=True)
    return report


def finetune_online(students: dict[str, StochasticPolicy],
                    datasets: dict[str, Dataset], net: RoadNetwork,
                    config: TrainConfig, seed: int = 0,
                    episodes: int | None = None):
    """Adapter-only online fine-tuning (trainable set: adapters, layer norms,
    action head); everything else stays frozen.

    Returns (students, per-episode stats list).
    """
    episodes = config.finetune_episodes if episodes is None else episodes
    agent_ids = sorted(students)
    rtg_base = {a: max_offline_return(datasets[a]) for a in agent_ids}
    rtg_online = {a: config.gamma_online * rtg_base[a] for a in agent_ids}
    buffers = {
        a: ReplayBuffer(
            config.buffer_capacity,
            top_c_trajectories(
                datasets[a], min(config.buffer_capacity, len(datasets[a]))
            ),
        )
        for a in agent_ids
    }
    opts = {}
    for a in agent_ids:
        set_trainable(students[a], FINETUNE_SELECTOR)
        opts[a] = make_optimizer(students[a], config)
    rng = {a: np.random.default_rng((seed, 30, i))
           for i, a in enumerate(agent_ids)}
    stats = []
    torch.manual_seed(seed + 7)
    for w in range(episodes):
        trajs, metrics = run_episode_dt(
            students, net, rtg_online, mode="sample", seed=seed + 1000 + w,
            k=config.context_length, delta=config.neighbor_discount,
        )
        ep_stats = {"episode": w, "delay": average_delay(metrics)}
        for a in agent_ids:
            traj = trajs[a]
            episode = Episode(
                obs=np.stack([r.obs for r in traj.records]),
                actions=[r.action for r in traj.records],
                rewards=[r.reward for r in traj.records],
            )
            buffers[a].insert(episode)
            buf_ds = buffers[a].as_dataset(datasets[a])
            opt, sched = opts[a]
            policy = students[a]
            policy.train()
            last = {}
            for _ in range(config.finetune_updates_per_episode):
                batch = sample_batch(buf_ds, config.batch_size,
                                     config.context_length, rng[a])
                loss, last = dt_loss(policy, batch)
                _guard(loss)
                _optimize(policy, loss, opt, sched, config.grad_clip)
            policy.eval()
            ep_stats[a] = last
        stats.append(ep_stats)
    return students, stats
