"""Array-backed trajectory batches and batched policy rollouts."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import torch

from ..distributions import ScalarHV
from ..env import POLICY, Goal, LightEnv, Trajectory
from ..policy.network import PolicyNetwork, Tokens, tokens_from_arrays


@dataclass
class TrajBatch:
    """B complete trajectories as arrays.

    actions: (B, n, 2) hue/value; mix_*: (B, n, bins) mix after each action;
    logp: (B, n) behavior log-probabilities when collected from a policy.
    """

    goal_hue: np.ndarray
    goal_value: np.ndarray
    actions: np.ndarray
    mix_hue: np.ndarray
    mix_value: np.ndarray
    logp: Optional[np.ndarray] = None

    def __len__(self):
        return self.actions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.actions.shape[1]

    def tokens(self) -> Tokens:
        return tokens_from_arrays(
            self.goal_hue, self.goal_value, self.mix_hue, self.mix_value, self.actions, self.n_steps
        )

    def take(self, idx) -> "TrajBatch":
        return TrajBatch(
            self.goal_hue[idx], self.goal_value[idx], self.actions[idx], self.mix_hue[idx],
            self.mix_value[idx], None if self.logp is None else self.logp[idx],
        )

    def relabeled(self) -> "TrajBatch":
        """Hindsight copy whose goals are the achieved final mixes."""
        return replace(self, goal_hue=self.mix_hue[:, -1].copy(), goal_value=self.mix_value[:, -1].copy(), logp=None)

    @classmethod
    def concat(cls, parts: Sequence["TrajBatch"]) -> "TrajBatch":
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        logp = None if any(p.logp is None for p in parts) else cat("logp")
        return cls(cat("goal_hue"), cat("goal_value"), cat("actions"), cat("mix_hue"), cat("mix_value"), logp)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "TrajBatch":
        return cls(
            np.stack([t.goal.hue.bins for t in trajs]),
            np.stack([t.goal.value.bins for t in trajs]),
            np.array([[(a.hue, a.value) for a in t.actions] for t in trajs], dtype=np.float64),
            np.array([[m.hue.bins for m in t.intermediate_mixes] for t in trajs]),
            np.array([[m.value.bins for m in t.intermediate_mixes] for t in trajs]),
        )

    @classmethod
    def from_actions(cls, env: LightEnv, goal_hue, goal_value, actions) -> "TrajBatch":
        actions = np.asarray(actions, dtype=np.float64)
        h, v, _ = env.prefix_mixes(actions[..., 0], actions[..., 1])
        return cls(np.asarray(goal_hue), np.asarray(goal_value), actions, h, v)

    def to_trajectories(self, env: LightEnv, provenance: str = POLICY) -> list[Trajectory]:
        out = []
        for i in range(len(self)):
            goal = Goal.from_json({"hue": self.goal_hue[i], "value": self.goal_value[i]})
            acts = [ScalarHV(float(h), float(v)) for h, v in self.actions[i]]
            out.append(env.rollout(goal, acts, provenance))
        return out


def goals_to_arrays(goals: Sequence[Goal]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([g.hue.bins for g in goals]), np.stack([g.value.bins for g in goals])


@torch.no_grad()
def collect_rollouts(net: PolicyNetwork, env: LightEnv, goal_hue: np.ndarray, goal_value: np.ndarray,
                     rng: np.random.Generator, iota: float = 1.0) -> TrajBatch:
    """Sample one trajectory per goal row, recording behavior log-probs."""
    b, n = goal_hue.shape[0], env.n_lights
    actions = np.zeros((b, n, 2))
    mix_hue = np.zeros((b, n, goal_hue.shape[1]))
    mix_value = np.zeros((b, n, goal_value.shape[1]))
    logp = np.zeros((b, n))
    for t in range(n):
        tokens = tokens_from_arrays(goal_hue, goal_value, mix_hue, mix_value, actions, t + 1)
        dist = net.action_dist(net.embed(tokens)[:, t]).with_temperature(iota)
        hue, value = dist.sample(rng)
        actions[:, t, 0], actions[:, t, 1] = hue, value
        logp[:, t] = dist.log_prob(torch.from_numpy(hue), torch.from_numpy(value)).numpy()
        lit = actions[:, : t + 1]
        values = np.zeros((b, n))
        values[:, : t + 1] = lit[..., 1]
        hues = np.zeros((b, n))
        hues[:, : t + 1] = lit[..., 0]
        h, v, _ = env.mixer.mix_batch(hues, values)
        mix_hue[:, t], mix_value[:, t] = h, v
    return TrajBatch(goal_hue, goal_value, actions, mix_hue, mix_value, logp)
