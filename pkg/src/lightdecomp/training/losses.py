"""Losses and advantage estimators for the imitation pipeline.

Batches are :class:`~lightdecomp.training.rollout.TrajBatch` instances; every
position ``t`` of a trajectory is one decision (light ``t + 1``) with the
action actually taken there.
"""

from __future__ import annotations

import numpy as np
import torch

from ..distributions import SMOOTHING
from ..policy.network import HeadOutputs, PolicyNetwork

D_CLAMP = 1e-7
LOG_RATIO_CLAMP = 20.0
SIGMA_FLOOR = 1e-8


def evaluate(net: PolicyNetwork, batch) -> HeadOutputs:
    """Run every head at every position of ``batch`` with its recorded actions."""
    act = torch.from_numpy(batch.actions)
    return net(batch.tokens(), act[..., 0], act[..., 1])


def log_prob(out: HeadOutputs, batch) -> torch.Tensor:
    act = torch.from_numpy(batch.actions)
    return out.dist.log_prob(act[..., 0], act[..., 1])


def bc_loss(out: HeadOutputs, batch) -> torch.Tensor:
    """Mean negative joint log-likelihood of the recorded actions."""
    return -log_prob(out, batch).mean()


def smooth_target(target) -> torch.Tensor:
    t = torch.as_tensor(target, dtype=torch.float64) + SMOOTHING
    return t / t.sum(dim=-1, keepdim=True)


def kl_pred_target(pred_logp: torch.Tensor, target) -> torch.Tensor:
    """KL(pred || target) along the last axis, target smoothed like the metrics."""
    return (pred_logp.exp() * (pred_logp - torch.log(smooth_target(target)))).sum(dim=-1)


def aux_loss(out: HeadOutputs, batch) -> torch.Tensor:
    """Transition prediction loss against the mix reached after each action."""
    kl_h = kl_pred_target(out.aux_hue_logp, batch.mix_hue)
    kl_v = kl_pred_target(out.aux_value_logp, batch.mix_value)
    return (kl_h + kl_v).mean()


def discriminator_prob(reward: torch.Tensor) -> torch.Tensor:
    """Probability that a transition is expert, given its learned reward."""
    return torch.sigmoid(reward)


def airl_reward(net: PolicyNetwork, batch) -> torch.Tensor:
    return evaluate(net, batch).reward


def discriminator_loss(expert_reward: torch.Tensor, policy_reward: torch.Tensor) -> torch.Tensor:
    d_e = discriminator_prob(expert_reward).clamp(D_CLAMP, 1 - D_CLAMP)
    d_p = discriminator_prob(policy_reward).clamp(D_CLAMP, 1 - D_CLAMP)
    return -torch.log(d_e).mean() - torch.log1p(-d_p).mean()


def clipped_surrogate_loss(new_logp: torch.Tensor, old_logp, advantages, epsilon_clip: float) -> torch.Tensor:
    """Negated clipped-ratio objective, averaged over every decision."""
    old_logp = torch.as_tensor(old_logp, dtype=torch.float64)
    adv = torch.as_tensor(advantages, dtype=torch.float64)
    log_ratio = (new_logp - old_logp).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
    ratio = log_ratio.exp()
    clipped = ratio.clamp(1 - epsilon_clip, 1 + epsilon_clip)
    return -torch.minimum(ratio * adv, clipped * adv).mean()


def ppo_actor_loss(out: HeadOutputs, rollout, advantages, epsilon_clip: float) -> torch.Tensor:
    return clipped_surrogate_loss(log_prob(out, rollout), rollout.logp, advantages, epsilon_clip)


def grpo_actor_loss(out: HeadOutputs, rollout, advantages, epsilon_clip: float) -> torch.Tensor:
    return clipped_surrogate_loss(log_prob(out, rollout), rollout.logp, advantages, epsilon_clip)


def critic_loss(values: torch.Tensor, rewards, gamma: float) -> torch.Tensor:
    """Squared one-step TD error; the bootstrap target is held fixed."""
    rewards = torch.as_tensor(rewards, dtype=torch.float64)
    nxt = torch.zeros_like(values)
    nxt[..., :-1] = values[..., 1:].detach()
    td = rewards + gamma * nxt - values
    return (td**2).mean()


def gae_advantage(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates along the last axis; V after the end is 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"rewards {rewards.shape} and values {values.shape} differ in shape")
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[:-1])
    n = rewards.shape[-1]
    for t in reversed(range(n)):
        next_v = values[..., t + 1] if t + 1 < n else 0.0
        delta = rewards[..., t] + gamma * next_v - values[..., t]
        running = delta + gamma * lam * running
        adv[..., t] = running
    return adv


def reward_to_go(rewards, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[:-1])
    for t in reversed(range(rewards.shape[-1])):
        running = rewards[..., t] + gamma * running
        out[..., t] = running
    return out


def grpo_advantage(rewards, gamma: float) -> np.ndarray:
    """Group-standardized reward-to-go.

    ``rewards`` has shape (..., G, n): G trajectories of one goal. Each step
    is standardized with the group's mean and population std at that step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim < 2 or rewards.shape[-2] < 2:
        raise ValueError("a GRPO group needs at least two trajectories")
    rtg = reward_to_go(rewards, gamma)
    mu = rtg.mean(axis=-2, keepdims=True)
    sigma = np.sqrt(((rtg - mu) ** 2).mean(axis=-2, keepdims=True))
    return (rtg - mu) / np.maximum(sigma, SIGMA_FLOOR)
