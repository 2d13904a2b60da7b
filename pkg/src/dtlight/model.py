"""Causal transformer policy backbone with modality embeddings, COMPACTER++
adapters (sum-of-Kronecker low-rank projections), and trainable-set masking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import SubTrajectoryBatch


@dataclass(frozen=True)
class AdapterConfig:
    n_div: int = 4      # hypercomplex divisions (shared factor size)
    rank: int = 1
    bottleneck: int = 32


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int
    num_actions: int
    n_layers: int
    n_heads: int
    d_model: int
    max_timesteps: int = 360
    dropout: float = 0.1
    rtg_scale: float = 1000.0  # raw return-to-go divided by this before embedding
    adapter: AdapterConfig | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.adapter is not None:
            n = self.adapter.n_div
            if self.d_model % n or self.adapter.bottleneck % n:
                raise ValueError("d_model and bottleneck must be divisible by n_div")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model

    @classmethod
    def teacher(cls, obs_dim: int, num_actions: int, **kw) -> "ModelConfig":
        return cls(obs_dim, num_actions, n_layers=6, n_heads=8, d_model=512, **kw)

    @classmethod
    def student(cls, obs_dim: int, num_actions: int,
                adapter: AdapterConfig | None = None, **kw) -> "ModelConfig":
        adapter = adapter or AdapterConfig()
        return cls(obs_dim, num_actions, n_layers=2, n_heads=2, d_model=256,
                   adapter=adapter, **kw)


def _init_linear(module: nn.Module):
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Embedding)):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if isinstance(m, nn.Linear) and m.bias is not None:
                nn.init.zeros_(m.bias)


class LPHMLinear(nn.Module):
    """Low-rank parameterized hypercomplex linear map.

    Weight = sum_i  A_i (n x n, shared)  kron  (s_i @ t_i)  with private
    rank-r factors s_i: (in/n, r), t_i: (r, out/n).
    """

    def __init__(self, in_features: int, out_features: int,
                 shared_a: nn.Parameter, rank: int = 1, zero_init_out: bool = False):
        super().__init__()
        n = shared_a.shape[0]
        if in_features % n or out_features % n:
            raise ValueError("features must be divisible by n_div")
        self.shared_a = shared_a
        self.s = nn.Parameter(torch.empty(n, in_features // n, rank))
        self.t = nn.Parameter(torch.empty(n, rank, out_features // n))
        self.bias = nn.Parameter(torch.zeros(out_features))
        nn.init.trunc_normal_(self.s, std=0.02)
        if zero_init_out:
            nn.init.zeros_(self.t)
        else:
            nn.init.trunc_normal_(self.t, std=0.02)

    def weight(self) -> torch.Tensor:
        """(in_features, out_features), materialized as sum of Kronecker products."""
        b = torch.matmul(self.s, self.t)  # (n, in/n, out/n)
        blocks = torch.einsum("ipq,irs->prqs", self.shared_a, b)
        n, in_n, out_n = b.shape
        return blocks.reshape(n * in_n, n * out_n)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight() + self.bias


class CompacterAdapter(nn.Module):
    """Residual bottleneck after the feed-forward layer: up(GeLU(down(x))) + x.

    The up-projection factors start at zero so a fresh adapter is an exact
    identity.
    """

    def __init__(self, d_model: int, cfg: AdapterConfig, shared_a: nn.Parameter):
        super().__init__()
        self.down = LPHMLinear(d_model, cfg.bottleneck, shared_a, cfg.rank)
        self.up = LPHMLinear(cfg.bottleneck, d_model, shared_a, cfg.rank,
                             zero_init_out=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.up(F.gelu(self.down(x))) + x


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.n_heads, c // self.n_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(c // self.n_heads)
        att = att.masked_fill(~attn_mask[:, None, :, :], float("-inf"))
        att = F.softmax(att, dim=-1)
        att = self.dropout(att)
        y = (att @ v).transpose(1, 2).reshape(b, t, c)
        return self.proj(y)


class Block(nn.Module):
    """Pre-norm transformer block with an optional post-FFN adapter."""

    def __init__(self, cfg: ModelConfig, shared_a: nn.Parameter | None):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
        )
        self.dropout = nn.Dropout(cfg.dropout)
        self.adapter = (
            CompacterAdapter(cfg.d_model, cfg.adapter, shared_a)
            if cfg.adapter is not None else None
        )

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.dropout(self.attn(self.ln1(x), attn_mask))
        h = self.dropout(self.mlp(self.ln2(x)))
        if self.adapter is not None:
            h = self.adapter(h)
        return x + h


class DecisionTransformer(nn.Module):
    """GPT-style policy over interleaved (return-to-go, state, action) tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed_rtg = nn.Linear(1, cfg.d_model)
        self.embed_state = nn.Linear(cfg.obs_dim, cfg.d_model)
        self.embed_action = nn.Linear(cfg.num_actions, cfg.d_model)  # from one-hot
        self.embed_timestep = nn.Embedding(cfg.max_timesteps, cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)
        if cfg.adapter is not None:
            n = cfg.adapter.n_div
            self.adapter_shared_a = nn.Parameter(torch.empty(n, n, n))
        else:
            self.adapter_shared_a = None
        self.blocks = nn.ModuleList(
            Block(cfg, self.adapter_shared_a) for _ in range(cfg.n_layers)
        )
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.num_actions)
        _init_linear(self)
        if self.adapter_shared_a is not None:
            nn.init.trunc_normal_(self.adapter_shared_a, std=0.02)

    def embed_tokens(self, batch: SubTrajectoryBatch):
        """Interleave (rtg, state, action) per step; returns (tokens, token_mask).

        tokens: (B, 3K, d_model); token_mask: (B, 3K) bool, False at padding.
        """
        dev = self.head.weight.device
        dtype = self.head.weight.dtype
        states = torch.as_tensor(batch.states, dtype=dtype, device=dev)
        actions = torch.as_tensor(batch.actions, dtype=torch.long, device=dev)
        rtg = torch.as_tensor(batch.rtg, dtype=dtype, device=dev)
        timesteps = torch.as_tensor(batch.timesteps, dtype=torch.long, device=dev)
        mask = torch.as_tensor(batch.valid_mask, dtype=torch.bool, device=dev)
        if int(timesteps.max()) >= self.cfg.max_timesteps:
            raise ValueError("timestep exceeds max_timesteps")
        b, k = actions.shape
        time_emb = self.embed_timestep(timesteps)
        tok_r = self.embed_rtg(rtg.unsqueeze(-1) / self.cfg.rtg_scale) + time_emb
        tok_s = self.embed_state(states) + time_emb
        one_hot = F.one_hot(actions, self.cfg.num_actions).to(dtype)
        tok_a = self.embed_action(one_hot) + time_emb
        tokens = torch.stack((tok_r, tok_s, tok_a), dim=2).reshape(b, 3 * k, -1)
        token_mask = mask.repeat_interleave(3, dim=1)
        tokens = tokens * token_mask.unsqueeze(-1)
        return tokens, token_mask

    def forward_hidden(self, tokens: torch.Tensor,
                       token_mask: torch.Tensor) -> torch.Tensor:
        t = tokens.shape[1]
        causal = torch.tril(
            torch.ones(t, t, dtype=torch.bool, device=tokens.device)
        )
        attn_mask = causal[None] & token_mask[:, None, :]
        # padded query rows would attend nowhere; let them see themselves
        attn_mask = attn_mask | torch.eye(
            t, dtype=torch.bool, device=tokens.device
        )[None]
        x = self.dropout(tokens)
        for blk in self.blocks:
            x = blk(x, attn_mask)
        return self.ln_f(x)

    def action_logits(self, batch: SubTrajectoryBatch) -> torch.Tensor:
        """(B, K, num_actions) logits read at each state-token position."""
        tokens, token_mask = self.embed_tokens(batch)
        hidden = self.forward_hidden(tokens, token_mask)
        return self.head(hidden[:, 1::3])


def num_parameters(module: nn.Module, only_trainable: bool = False) -> int:
    """Exact parameter count; shared tensors are counted once."""
    seen, total = set(), 0
    for p in module.parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        if only_trainable and not p.requires_grad:
            continue
        total += p.numel()
    return total


def adapter_parameter_count(module: nn.Module) -> int:
    """Parameters belonging to adapter modules, shared factors counted once."""
    seen, total = set(), 0
    for name, mod in module.named_modules():
        if isinstance(mod, CompacterAdapter):
            for p in mod.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    total += p.numel()
    for name, p in module.named_parameters():
        if "adapter_shared_a" in name and id(p) not in seen:
            seen.add(id(p))
            total += p.numel()
    return total


FINETUNE_SELECTOR = "finetune_set"


def set_trainable(module: nn.Module, selector: str) -> None:
    """Mark the trainable set: everything, or adapters + layer norms + head."""
    if selector == "all":
        for p in module.parameters():
            p.requires_grad_(True)
        return
    if selector != FINETUNE_SELECTOR:
        raise ValueError(f"unknown selector {selector!r}")
    for p in module.parameters():
        p.requires_grad_(False)
    for name, mod in module.named_modules():
        if isinstance(mod, (nn.LayerNorm, CompacterAdapter)):
            for p in mod.parameters():
                p.requires_grad_(True)
        if name.endswith("head"):
            for p in mod.parameters():
                p.requires_grad_(True)
    for name, p in module.named_parameters():
        if "adapter_shared_a" in name:
            p.requires_grad_(True)
