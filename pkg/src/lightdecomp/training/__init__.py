from .config import GRPO, PPO, TrainConfig
from .losses import (
    airl_reward,
    aux_loss,
    bc_loss,
    clipped_surrogate_loss,
    critic_loss,
    discriminator_loss,
    discriminator_prob,
    evaluate,
    gae_advantage,
    grpo_actor_loss,
    grpo_advantage,
    kl_pred_target,
    ppo_actor_loss,
    reward_to_go,
)
from .rollout import TrajBatch, collect_rollouts
from .trainer import FreezeViolation, PhaseOrderError, Trainer, load_policy

__all__ = [
    "GRPO",
    "PPO",
    "FreezeViolation",
    "PhaseOrderError",
    "TrainConfig",
    "Trainer",
    "TrajBatch",
    "airl_reward",
    "aux_loss",
    "bc_loss",
    "clipped_surrogate_loss",
    "collect_rollouts",
    "critic_loss",
    "discriminator_loss",
    "discriminator_prob",
    "evaluate",
    "gae_advantage",
    "grpo_actor_loss",
    "grpo_advantage",
    "kl_pred_target",
    "load_policy",
    "ppo_actor_loss",
    "reward_to_go",
]
