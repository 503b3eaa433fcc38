"""Shared causal transformer with actor, critic, reward and auxiliary heads.

Token ``0`` of a sequence carries ``<SOS, goal>``; token ``t`` carries the
action taken at step ``t`` together with the mix reached after it. The
embedding at position ``t`` therefore summarizes the goal and the first ``t``
actions, and drives the decision for light ``t + 1``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..distributions import BIN_COUNTS, HUE, VALUE
from .circular import ActionDistribution, positive

PARAM_GROUPS = ("backbone", "actor", "critic", "reward", "aux")
REWARD_CLAMP = 10.0


@dataclass(frozen=True)
class PolicyConfig:
    d_model: int = 64
    n_layers: int = 3
    n_heads: int = 4
    d_ff: int = 256
    head_hidden: int = 256
    hist_embed: int = 32
    max_len: int = 8
    beta_offset: bool = False

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "PolicyConfig":
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()[:16]


def action_features(hue: torch.Tensor, value: torch.Tensor) -> torch.Tensor:
    # (cos, sin) keeps 0 and 2*pi adjacent
    return torch.stack([torch.cos(hue), torch.sin(hue), value], dim=-1)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        hd = d // self.n_heads
        q, k, v = (z.view(b, t, self.n_heads, hd).transpose(1, 2) for z in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        mask = torch.ones(t, t, dtype=torch.bool, device=x.device).triu(1)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


def mlp(d_in: int, hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.GELU(), nn.Linear(hidden, d_out))


class Tokens(NamedTuple):
    """Batched token inputs: hue (B, T, 360), value (B, T, 100), action (B, T, 2).

    ``action[:, 0]`` is ignored (the SOS slot).
    """

    hue: torch.Tensor
    value: torch.Tensor
    action: torch.Tensor


class HeadOutputs(NamedTuple):
    dist: ActionDistribution
    value: torch.Tensor
    reward: Optional[torch.Tensor]
    aux_hue_logp: Optional[torch.Tensor]
    aux_value_logp: Optional[torch.Tensor]


class PolicyNetwork(nn.Module):
    def __init__(self, config: PolicyConfig = PolicyConfig()):
        super().__init__()
        self.config = config
        d, h = config.d_model, config.head_hidden
        if config.hist_embed * 2 != d:
            raise ValueError("hist_embed must be half of d_model")
        self.hue_embed = nn.Linear(BIN_COUNTS[HUE], config.hist_embed)
        self.value_embed = nn.Linear(BIN_COUNTS[VALUE], config.hist_embed)
        self.action_embed = nn.Linear(3, d)
        self.sos = nn.Parameter(torch.zeros(d))
        self.pos = nn.Parameter(torch.zeros(config.max_len, d))
        self.blocks = nn.ModuleList(Block(d, config.n_heads, config.d_ff) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(d)
        self.actor = mlp(d, h, 5)
        self.critic = mlp(d, h, 1)
        self.reward = mlp(d + 3, h, 1)
        self.aux_hue = mlp(d + 3, h, BIN_COUNTS[HUE])
        self.aux_value = mlp(d + 3, h, BIN_COUNTS[VALUE])
        nn.init.normal_(self.sos, std=0.02)
        nn.init.normal_(self.pos, std=0.02)

    def param_group(self, name: str) -> str:
        head = name.split(".", 1)[0]
        if head in ("actor", "critic", "reward"):
            return head
        if head in ("aux_hue", "aux_value"):
            return "aux"
        return "backbone"

    def named_group(self, group: str):
        return [(n, p) for n, p in self.named_parameters() if self.param_group(n) == group]

    def embed(self, tokens: Tokens) -> torch.Tensor:
        """Backbone embeddings for every position, shape (B, T, d_model)."""
        b, t, _ = tokens.hue.shape
        if t > self.config.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        # histograms enter as densities (mean bin 1) so the goal is not drowned out
        hue = tokens.hue * BIN_COUNTS[HUE]
        value = tokens.value * BIN_COUNTS[VALUE]
        x = torch.cat([self.hue_embed(hue), self.value_embed(value)], dim=-1)
        act = self.action_embed(action_features(tokens.action[..., 0], tokens.action[..., 1]))
        is_sos = torch.zeros(t, 1, dtype=torch.bool, device=x.device)
        is_sos[0] = True
        x = x + torch.where(is_sos, self.sos, act) + self.pos[:t]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def action_dist(self, emb: torch.Tensor) -> ActionDistribution:
        out = self.actor(emb)
        mu = torch.atan2(out[..., 1], out[..., 0])
        kappa = positive(out[..., 2])
        alpha, beta = positive(out[..., 3]), positive(out[..., 4])
        if self.config.beta_offset:
            alpha, beta = alpha + 1, beta + 1
        return ActionDistribution(mu, kappa, alpha, beta)

    def state_value(self, emb: torch.Tensor) -> torch.Tensor:
        return self.critic(emb).squeeze(-1)

    def reward_value(self, emb: torch.Tensor, hue: torch.Tensor, value: torch.Tensor) -> torch.Tensor:
        z = torch.cat([emb, action_features(hue, value)], dim=-1)
        return self.reward(z).squeeze(-1).clamp(-REWARD_CLAMP, REWARD_CLAMP)

    def aux_logp(self, emb, hue, value) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.cat([emb, action_features(hue, value)], dim=-1)
        return F.log_softmax(self.aux_hue(z), dim=-1), F.log_softmax(self.aux_value(z), dim=-1)

    def forward(self, tokens: Tokens, hue: Optional[torch.Tensor] = None,
                value: Optional[torch.Tensor] = None) -> HeadOutputs:
        """All heads at every position. ``hue``/``value`` (B, T) are the actions
        chosen at each position; without them reward and aux outputs are None."""
        emb = self.embed(tokens)
        dist = self.action_dist(emb)
        v = self.state_value(emb)
        if hue is None:
            return HeadOutputs(dist, v, None, None, None)
        r = self.reward_value(emb, hue, value)
        ah, av = self.aux_logp(emb, hue, value)
        return HeadOutputs(dist, v, r, ah, av)


def init_network(config: PolicyConfig = PolicyConfig(), seed: int = 0) -> PolicyNetwork:
    """Deterministically initialized float64 network."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = PolicyNetwork(config)
    return net.double()


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def group_checksum(net: PolicyNetwork, groups) -> str:
    """SHA-256 over the raw bytes of every parameter in ``groups``."""
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        if net.param_group(name) in groups:
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def tokens_from_arrays(goal_hue, goal_value, mix_hue, mix_value, actions, length: int) -> Tokens:
    """Build tokens of length ``length`` from numpy arrays.

    goal_* are (B, bins); mix_* are (B, n, bins) prefix mixes; actions is
    (B, n, 2). Position ``t > 0`` uses action ``t - 1`` and mix ``t - 1``.
    """
    b = goal_hue.shape[0]
    hue = np.empty((b, length, BIN_COUNTS[HUE]))
    value = np.empty((b, length, BIN_COUNTS[VALUE]))
    act = np.zeros((b, length, 2))
    hue[:, 0], value[:, 0] = goal_hue, goal_value
    if length > 1:
        hue[:, 1:] = mix_hue[:, : length - 1]
        value[:, 1:] = mix_value[:, : length - 1]
        act[:, 1:] = actions[:, : length - 1]
    return Tokens(torch.from_numpy(hue), torch.from_numpy(value), torch.from_numpy(act))
