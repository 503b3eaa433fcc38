from __future__ import annotations

from dataclasses import asdict, dataclass

PPO = "ppo"
GRPO = "grpo"


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for the three training phases.

    ``eta`` weights the auxiliary transition loss and ``delta`` the BC term
    kept during the adversarial and fine-tuning phases.
    """

    eta: float = 0.1
    delta: float = 0.1
    epsilon_clip: float = 0.2
    gamma: float = 1.0
    gae_lambda: float = 0.95
    group_size: int = 8
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch: int = 64
    grad_clip: float = 1.0
    phase1_iterations: int = 300
    phase2_iterations: int = 200
    phase3_iterations: int = 500
    algorithm: str = GRPO
    update_epochs: int = 4
    relabel_every: int = 10
    relabel_count: int = 8
    log_every: int = 1

    def __post_init__(self):
        if self.eta < 0 or self.delta < 0:
            raise ValueError("eta and delta must be non-negative")
        if not 0 < self.epsilon_clip < 1:
            raise ValueError("epsilon_clip must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.group_size < 2:
            raise ValueError("GRPO needs a group size of at least 2")
        if self.algorithm not in (PPO, GRPO):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.batch < 1 or self.update_epochs < 1:
            raise ValueError("batch and update_epochs must be positive")
        if self.algorithm == GRPO and self.batch % self.group_size:
            raise ValueError("batch must be a multiple of group_size for GRPO")

    def iterations(self, phase: int) -> int:
        return (self.phase1_iterations, self.phase2_iterations, self.phase3_iterations)[phase - 1]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        return cls(**data)
