"""Goal-conditioned sequential light decomposition environment.

One episode decomposes a target (hue, value) histogram pair into one action
per light, in layout order. The transition is the deterministic mixer: the
state after ``t`` steps carries the mix of the first ``t`` actions with the
remaining lights switched off. The environment emits no rewards; those come
from the learned reward head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .distributions import BIN_COUNTS, HUE, TWO_PI, VALUE, Histogram, ScalarHV
from .mixer import Mixer, MixResult

EXPERT = "expert"
POLICY = "policy"
RELABELED = "relabeled"
PROVENANCES = (EXPERT, POLICY, RELABELED)

MAX_RESAMPLES = 100


@dataclass(frozen=True)
class Goal:
    hue: Histogram
    value: Histogram

    def __post_init__(self):
        if self.hue.kind != HUE or self.value.kind != VALUE:
            raise ValueError("goal needs a hue histogram and a value histogram")

    @classmethod
    def from_mix(cls, result: MixResult) -> "Goal":
        return cls(result.hue, result.value)

    def to_json(self) -> dict:
        return {"hue": self.hue.bins.tolist(), "value": self.value.bins.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Goal":
        return cls(Histogram(HUE, data["hue"]), Histogram(VALUE, data["value"]))


@dataclass(frozen=True)
class DecompState:
    """Goal, actions taken so far and the mix after each of them.

    ``partial_mix`` is the mix of all actions so far with the remaining
    lights dark; ``mixes[k]`` is the mix after action ``k``.
    """

    goal: Goal
    actions: tuple[ScalarHV, ...]
    mixes: tuple[MixResult, ...]
    partial_mix: MixResult
    n_lights: int

    @property
    def step_index(self) -> int:
        return len(self.actions) + 1

    @property
    def terminal(self) -> bool:
        return len(self.actions) >= self.n_lights


@dataclass(frozen=True)
class Trajectory:
    goal: Goal
    actions: tuple[ScalarHV, ...]
    intermediate_mixes: tuple[MixResult, ...]
    provenance: str = EXPERT
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.actions) != len(self.intermediate_mixes):
            raise ValueError("one intermediate mix is required per action")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def final_mix(self) -> MixResult:
        return self.intermediate_mixes[-1]

    def to_json(self) -> dict:
        return {
            "goal": self.goal.to_json(),
            "actions": [a.to_json() for a in self.actions],
            "seed": self.seed,
            "provenance": self.provenance,
        }


def pad_frame(actions: Sequence[ScalarHV], n_lights: int) -> list[ScalarHV]:
    """Actions so far followed by switched-off lights."""
    return list(actions) + [ScalarHV(0.0, 0.0)] * (n_lights - len(actions))


class LightEnv:
    """Deterministic decomposition environment around a :class:`Mixer`."""

    def __init__(self, mixer: Mixer):
        self.mixer = mixer
        self.n_lights = mixer.n_lights
        self._dark = mixer.mix(pad_frame([], self.n_lights))

    def reset(self, goal: Goal) -> DecompState:
        return DecompState(goal, (), (), self._dark, self.n_lights)

    def step(self, state: DecompState, action: ScalarHV) -> DecompState:
        if state.terminal:
            raise ValueError("cannot step a terminal state")
        actions = state.actions + (action,)
        partial = self.mixer.mix(pad_frame(actions, self.n_lights))
        return DecompState(state.goal, actions, state.mixes + (partial,), partial, self.n_lights)

    def prefix_mixes(self, hues: np.ndarray, values: np.ndarray):
        """Mixes of every action prefix for a batch of complete action sequences.

        Returns hue (B, n, 360), value (B, n, 100) and degenerate (B, n) arrays
        where index ``t`` holds the mix of the first ``t + 1`` actions.
        """
        hues = np.asarray(hues, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        batch, n = values.shape
        mask = np.tril(np.ones((n, n)))  # row t keeps lights 0..t
        pv = (values[:, None, :] * mask[None]).reshape(batch * n, n)
        ph = np.broadcast_to(hues[:, None, :], (batch, n, n)).reshape(batch * n, n)
        h, v, deg = self.mixer.mix_batch(ph, pv)
        return h.reshape(batch, n, -1), v.reshape(batch, n, -1), deg.reshape(batch, n)

    def rollout(self, goal: Goal, actions: Sequence[ScalarHV], provenance: str = POLICY,
                seed: Optional[int] = None) -> Trajectory:
        """Replay ``actions`` from a fresh state and record every intermediate mix."""
        if len(actions) != self.n_lights:
            raise ValueError(f"need exactly {self.n_lights} actions")
        state = self.reset(goal)
        mixes = []
        for a in actions:
            state = self.step(state, a)
            mixes.append(state.partial_mix)
        return Trajectory(goal, tuple(actions), tuple(mixes), provenance, seed)

    def sample_expert_goal(self, rng: np.random.Generator, seed: Optional[int] = None):
        """Random actions labeled with the goal they actually achieve."""
        for _ in range(MAX_RESAMPLES):
            hues = rng.uniform(0.0, TWO_PI, self.n_lights)
            values = rng.uniform(0.0, 1.0, self.n_lights)
            actions = [ScalarHV(h, v) for h, v in zip(hues, values)]
            final = self.mixer.mix(actions)
            if final.degenerate:
                continue
            goal = Goal.from_mix(final)
            return goal, self.rollout(goal, actions, EXPERT, seed)
        raise RuntimeError("could not sample a non-degenerate expert frame")

    def sample_arbitrary_goal(self, rng: np.random.Generator, n_bumps: Optional[int] = None,
                              kappa_range=(2.0, 50.0), sigma_range=(0.02, 0.2)) -> Goal:
        """Goal histograms built from random bump mixtures, off the expert manifold.

        Hue is a mixture of 1-4 von Mises bumps, value a mixture of truncated
        Gaussian bumps on [0, 1], both evaluated at bin centers.
        """
        k = n_bumps if n_bumps is not None else int(rng.integers(1, 5))
        centers = (np.arange(BIN_COUNTS[HUE]) + 0.5) * TWO_PI / BIN_COUNTS[HUE]
        weights = rng.dirichlet(np.ones(k))
        hue = np.zeros(BIN_COUNTS[HUE])
        for w in weights:
            mu = rng.uniform(0.0, TWO_PI)
            kappa = rng.uniform(*kappa_range)
            bump = np.exp(kappa * (np.cos(centers - mu) - 1.0))
            hue += w * bump / bump.sum()

        vcenters = (np.arange(BIN_COUNTS[VALUE]) + 0.5) / BIN_COUNTS[VALUE]
        weights = rng.dirichlet(np.ones(k))
        value = np.zeros(BIN_COUNTS[VALUE])
        for w in weights:
            mu = rng.uniform(0.0, 1.0)
            sigma = rng.uniform(*sigma_range)
            bump = np.exp(-0.5 * ((vcenters - mu) / sigma) ** 2)
            if self.mixer.config.zero_lowest_value_bin:
                bump[0] = 0.0
            total = bump.sum()
            if total > 0:
                value += w * bump / total
        if not value.sum() > 0:
            value = np.ones(BIN_COUNTS[VALUE])
            if self.mixer.config.zero_lowest_value_bin:
                value[0] = 0.0
        return Goal(Histogram.from_counts(HUE, hue), Histogram.from_counts(VALUE, value))

    def build_expert_dataset(self, size: int, rng: np.random.Generator) -> list[Trajectory]:
        if size < 1:
            raise ValueError("dataset size must be at least 1")
        seeds = rng.integers(0, 2**63 - 1, size=size)
        out = []
        for s in seeds:
            _, traj = self.sample_expert_goal(np.random.default_rng(int(s)), seed=int(s))
            out.append(traj)
        return out

    def load_trajectory(self, data: dict) -> Trajectory:
        goal = Goal.from_json(data["goal"])
        actions = [ScalarHV.from_json(a) for a in data["actions"]]
        return self.rollout(goal, actions, data.get("provenance", EXPERT), data.get("seed"))


def relabel(trajectory: Trajectory) -> Trajectory:
    """Hindsight relabeling: the achieved final mix becomes the goal."""
    return replace(trajectory, goal=Goal.from_mix(trajectory.final_mix), provenance=RELABELED)


def save_dataset(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_json()) + "\n")


def load_dataset(path, env: LightEnv) -> list[Trajectory]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(env.load_trajectory(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: invalid trajectory ({exc})") from exc
    return out
