"""Three-phase training: BC pre-training, adversarial reward learning, fine-tuning.

Phase 1 fits the actor (and auxiliary transition heads) to expert actions.
Phase 2 alternates a discriminator step on the reward head with a policy
step (PPO or GRPO) driven by the learned reward, on expert-distribution
goals. Phase 3 freezes the backbone and reward head and fine-tunes only the
actor (and critic for PPO) on arbitrary goals.
"""

from __future__ import annotations

import hashlib
import logging
from typing import Callable, Optional

import numpy as np
import torch

from ..env import LightEnv
from ..policy import NonFiniteGradient
from ..policy.checkpoint import CheckpointError, load_arrays, save_arrays
from ..policy.network import PolicyConfig, PolicyNetwork, group_checksum, init_network
from .config import GRPO, PPO, TrainConfig
from .losses import (
    aux_loss,
    bc_loss,
    critic_loss,
    discriminator_loss,
    discriminator_prob,
    evaluate,
    gae_advantage,
    grpo_actor_loss,
    grpo_advantage,
    ppo_actor_loss,
)
from .rollout import TrajBatch, collect_rollouts

log = logging.getLogger(__name__)

PHASE_GROUPS = {
    1: ("backbone", "actor", "aux"),
    2: ("backbone", "actor", "critic", "reward", "aux"),
    3: ("actor", "critic"),
}


class PhaseOrderError(RuntimeError):
    pass


class FreezeViolation(RuntimeError):
    pass


def dataset_digest(batch: TrajBatch) -> str:
    h = hashlib.sha256()
    for arr in (batch.goal_hue, batch.goal_value, batch.actions):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


class Trainer:
    def __init__(self, env: LightEnv, experts: TrajBatch, config: TrainConfig = TrainConfig(),
                 policy_config: PolicyConfig = PolicyConfig(), seed: int = 0):
        if policy_config.max_len < env.n_lights:
            raise ValueError("policy max_len is shorter than an episode")
        self.env = env
        self.experts = experts
        self.config = config
        self.policy_config = policy_config
        self.seed = seed
        self.net: PolicyNetwork = init_network(policy_config, seed)
        self.optimizer = self._make_optimizer()
        self.rng = np.random.default_rng(seed)
        self.completed_phase = 0
        self.phase2_algorithm: Optional[str] = None
        self.phase = 1
        self.iteration = 0
        self.relabeled: list[TrajBatch] = []
        self._pool: Optional[TrajBatch] = None

    def _make_optimizer(self):
        return torch.optim.AdamW(self.net.parameters(), lr=self.config.lr, weight_decay=self.config.weight_decay)

    # -- data -------------------------------------------------------------

    @property
    def pool(self) -> TrajBatch:
        if self._pool is None:
            self._pool = TrajBatch.concat([self.experts] + self.relabeled)
        return self._pool

    def expert_batch(self) -> TrajBatch:
        pool = self.pool
        return pool.take(self.rng.integers(0, len(pool), self.config.batch))

    def _rollout_goals(self, phase: int) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        n_goals = cfg.batch // cfg.group_size if cfg.algorithm == GRPO else cfg.batch
        if phase == 2:
            pool = self.pool
            idx = self.rng.integers(0, len(pool), n_goals)
            gh, gv = pool.goal_hue[idx], pool.goal_value[idx]
        else:
            goals = [self.env.sample_arbitrary_goal(self.rng) for _ in range(n_goals)]
            gh = np.stack([g.hue.bins for g in goals])
            gv = np.stack([g.value.bins for g in goals])
        if cfg.algorithm == GRPO:
            gh, gv = np.repeat(gh, cfg.group_size, axis=0), np.repeat(gv, cfg.group_size, axis=0)
        return gh, gv

    def _advantages(self, rollout: TrajBatch, rewards: np.ndarray) -> np.ndarray:
        cfg = self.config
        if cfg.algorithm == GRPO:
            g = cfg.group_size
            grouped = rewards.reshape(-1, g, rewards.shape[-1])
            return grpo_advantage(grouped, cfg.gamma).reshape(rewards.shape)
        with torch.no_grad():
            values = evaluate(self.net, rollout).value.numpy()
        return gae_advantage(rewards, values, cfg.gamma, cfg.gae_lambda)

    # -- updates ----------------------------------------------------------

    def _apply(self, loss: torch.Tensor, groups) -> float:
        """One optimizer step on ``loss`` restricted to parameter ``groups``."""
        if not torch.isfinite(loss):
            raise NonFiniteGradient(f"loss is {float(loss)}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        params = []
        for name, p in self.net.named_parameters():
            if self.net.param_group(name) not in groups:
                p.grad = None
            elif p.grad is not None:
                if not torch.all(torch.isfinite(p.grad)):
                    self.optimizer.zero_grad(set_to_none=True)
                    raise NonFiniteGradient(f"non-finite gradient for {name}")
                params.append(p)
        if params:
            torch.nn.utils.clip_grad_norm_(params, self.config.grad_clip)
            self.optimizer.step()
        return float(loss.detach())

    def phase1_step(self) -> dict:
        cfg = self.config
        eb = self.expert_batch()
        out = evaluate(self.net, eb)
        bc, aux = bc_loss(out, eb), aux_loss(out, eb)
        loss = bc + cfg.eta * aux
        self._apply(loss, PHASE_GROUPS[1])
        return {"loss": float(loss.detach()), "bc": float(bc.detach()), "aux": float(aux.detach())}

    def _policy_update(self, phase: int, rollout: TrajBatch, rewards: np.ndarray, adv: np.ndarray) -> dict:
        cfg = self.config
        ppo = cfg.algorithm == PPO
        actor_fn = ppo_actor_loss if ppo else grpo_actor_loss
        groups = set(PHASE_GROUPS[phase] if phase == 3 else ("backbone", "actor", "aux"))
        if ppo:
            groups.add("critic")
        else:
            groups.discard("critic")
        eb = self.expert_batch()
        stats = {}
        for _ in range(cfg.update_epochs):
            out = evaluate(self.net, rollout)
            actor = actor_fn(out, rollout, adv, cfg.epsilon_clip)
            loss = actor
            if ppo:
                crit = critic_loss(out.value, rewards, cfg.gamma)
                loss = loss + crit
                stats["critic"] = float(crit.detach())
            oe = evaluate(self.net, eb)
            bc = bc_loss(oe, eb)
            loss = loss + cfg.delta * bc
            stats["bc"] = float(bc.detach())
            if phase == 2:
                aux = aux_loss(oe, eb)
                loss = loss + cfg.eta * aux
                stats["aux"] = float(aux.detach())
            stats["actor"] = float(actor.detach())
            self._apply(loss, groups)
        return stats

    def phase2_step(self) -> dict:
        cfg = self.config
        gh, gv = self._rollout_goals(2)
        rollout = collect_rollouts(self.net, self.env, gh, gv, self.rng)

        eb = self.expert_batch()
        r_e = evaluate(self.net, eb).reward
        r_p = evaluate(self.net, rollout).reward
        dis = discriminator_loss(r_e, r_p)
        acc = 0.5 * (
            float((discriminator_prob(r_e) > 0.5).double().mean())
            + float((discriminator_prob(r_p) < 0.5).double().mean())
        )
        self._apply(dis, ("backbone", "reward"))

        with torch.no_grad():
            rewards = evaluate(self.net, rollout).reward.numpy()
        adv = self._advantages(rollout, rewards)
        stats = self._policy_update(2, rollout, rewards, adv)

        if cfg.relabel_every and (self.iteration + 1) % cfg.relabel_every == 0:
            self.relabeled.append(rollout.take(np.arange(min(cfg.relabel_count, len(rollout)))).relabeled())
            self._pool = None
        stats.update(dis=float(dis.detach()), dis_acc=acc, reward=float(rewards.sum(axis=1).mean()))
        return stats

    def phase3_step(self) -> dict:
        trainable = set(PHASE_GROUPS[3]) if self.config.algorithm == PPO else {"actor"}
        frozen = [g for g in PHASE_GROUPS[2] if g not in trainable]
        before = group_checksum(self.net, frozen)
        for name, p in self.net.named_parameters():
            p.requires_grad_(self.net.param_group(name) in trainable)
        try:
            gh, gv = self._rollout_goals(3)
            rollout = collect_rollouts(self.net, self.env, gh, gv, self.rng)
            with torch.no_grad():
                rewards = evaluate(self.net, rollout).reward.numpy()
            adv = self._advantages(rollout, rewards)
            stats = self._policy_update(3, rollout, rewards, adv)
        finally:
            for p in self.net.parameters():
                p.requires_grad_(True)
        if group_checksum(self.net, frozen) != before:
            raise FreezeViolation("frozen parameters changed during phase 3")
        stats["reward"] = float(rewards.sum(axis=1).mean())
        return stats

    # -- driver -----------------------------------------------------------

    def check_phase(self, phase: int) -> None:
        if phase not in (1, 2, 3):
            raise ValueError("phase must be 1, 2 or 3")
        in_progress = self.phase == phase and 0 < self.iteration < self.config.iterations(phase)
        if in_progress:
            return
        if phase > self.completed_phase + 1 or phase < self.completed_phase:
            raise PhaseOrderError(
                f"phase {phase} requires a phase-{phase - 1} checkpoint "
                f"(this one has completed phase {self.completed_phase})"
            )
        if phase == 3 and self.phase2_algorithm not in (None, self.config.algorithm):
            raise PhaseOrderError(
                f"phase 2 used {self.phase2_algorithm}; phase 3 must use the same algorithm"
            )

    def run_phase(self, phase: int, callback: Optional[Callable[[dict], None]] = None,
                  iterations: Optional[int] = None) -> list[dict]:
        """Run (or resume) ``phase`` to its configured iteration count."""
        self.check_phase(phase)
        if not (self.phase == phase and self.iteration > 0):
            self.phase, self.iteration = phase, 0
        total = self.config.iterations(phase) if iterations is None else iterations
        step = {1: self.phase1_step, 2: self.phase2_step, 3: self.phase3_step}[phase]
        rows = []
        while self.iteration < total:
            stats = step()
            self.iteration += 1
            row = {"phase": phase, "iteration": self.iteration, **stats}
            rows.append(row)
            if callback is not None:
                callback(row)
            if self.iteration % 50 == 0:
                log.info("phase %d iter %d %s", phase, self.iteration, stats)
        if self.iteration >= self.config.iterations(phase):
            self.completed_phase = max(self.completed_phase, phase)
            if phase == 2:
                self.phase2_algorithm = self.config.algorithm
        return rows

    # -- persistence ------------------------------------------------------

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        arrays = {f"param/{n}": p.detach().numpy() for n, p in self.net.named_parameters()}
        names = {id(p): n for n, p in self.net.named_parameters()}
        for p, st in self.optimizer.state.items():
            for key, val in st.items():
                arrays[f"optim/{names[id(p)]}/{key}"] = torch.as_tensor(val).detach().numpy()
        if self.relabeled:
            arrays["relabeled/actions"] = np.concatenate([r.actions for r in self.relabeled])
        meta = {
            "policy_config": self.policy_config.to_json(),
            "policy_digest": self.policy_config.digest(),
            "mixer_config": self.env.mixer.config.to_json(),
            "train_config": self.config.to_json(),
            "completed_phase": self.completed_phase,
            "phase2_algorithm": self.phase2_algorithm,
            "phase": self.phase,
            "iteration": self.iteration,
            "seed": self.seed,
            "rng_state": self.rng.bit_generator.state,
            "experts_digest": dataset_digest(self.experts),
            "relabel_batches": len(self.relabeled),
        }
        meta.update(extra_meta or {})
        save_arrays(path, arrays, meta)

    def load(self, path, strict_experts: bool = True) -> dict:
        arrays, meta = load_arrays(path)
        if meta["policy_digest"] != self.policy_config.digest():
            raise CheckpointError("checkpoint policy config does not match")
        if meta["mixer_config"] != self.env.mixer.config.to_json():
            raise CheckpointError("checkpoint mixer config does not match")
        if strict_experts and meta["experts_digest"] != dataset_digest(self.experts):
            raise CheckpointError("checkpoint was trained on a different expert dataset")
        load_network_arrays(self.net, arrays)
        self.optimizer = self._make_optimizer()
        named = dict(self.net.named_parameters())
        for key, val in arrays.items():
            if key.startswith("optim/"):
                _, name, field = key.split("/")
                t = torch.from_numpy(val.copy())
                if field == "step":
                    t = t.reshape(())
                self.optimizer.state[named[name]][field] = t
        self.relabeled = []
        if "relabeled/actions" in arrays:
            acts = arrays["relabeled/actions"]
            n = len(acts)
            dummy_h = np.zeros((n, 360))
            dummy_v = np.zeros((n, 100))
            batch = TrajBatch.from_actions(self.env, dummy_h, dummy_v, acts).relabeled()
            k = self.config.relabel_count
            self.relabeled = [batch.take(np.arange(i, min(i + k, n))) for i in range(0, n, k)]
        self._pool = None
        self.completed_phase = meta["completed_phase"]
        self.phase2_algorithm = meta["phase2_algorithm"]
        self.phase = meta["phase"]
        self.iteration = meta["iteration"]
        self.seed = meta["seed"]
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = meta["rng_state"]
        return meta


def load_network_arrays(net: PolicyNetwork, arrays: dict) -> None:
    with torch.no_grad():
        for name, p in net.named_parameters():
            key = f"param/{name}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint is missing parameter {name}")
            val = torch.from_numpy(arrays[key])
            if val.shape != p.shape:
                raise CheckpointError(f"shape mismatch for {name}")
            p.copy_(val)


def load_policy(path) -> tuple[PolicyNetwork, dict]:
    """Network and metadata from a training checkpoint, for inference."""
    arrays, meta = load_arrays(path)
    config = PolicyConfig.from_json(meta["policy_config"])
    if config.digest() != meta["policy_digest"]:
        raise CheckpointError("checkpoint policy digest is inconsistent")
    net = init_network(config)
    load_network_arrays(net, arrays)
    net.eval()
    return net, meta
