"""Frame-by-frame decomposition of a goal sequence into light controls.

Each frame is decomposed by the trained policy, one light at a time. From the
second frame on, every light's sample must stay within ``d_h`` (hue) and
``d_v`` (value) of what that light emitted in the previous frame. Samples that
violate this are redrawn; once ``max_attempts`` is exhausted the closest
rejected sample is pulled just inside the allowed region. Several candidate
frames are drawn and the one whose mix is closest to the goal (KL over hue and
value) wins. A value scale factor is then searched to better match the goal's
value distribution.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .distributions import TWO_PI, ScalarHV, all_metrics, kl_divergence, wasserstein_1d
from .env import Goal, LightEnv
from .policy.network import PolicyNetwork, tokens_from_arrays

FrameControl = tuple[ScalarHV, ...]

GRID = "grid"
GOLDEN = "golden"
# keeps projected samples strictly inside the open constraint region
_MARGIN = 1e-9


@dataclass(frozen=True)
class SequencerConfig:
    d_h: float = math.pi / 2
    d_v: float = 0.3
    iota: float = 1.0
    max_attempts: int = 32
    candidate_count: int = 8
    scale_search: str = GRID
    scale_resolution: int = 101

    def __post_init__(self):
        if not 0 < self.d_h <= math.pi:
            raise ValueError("d_h must lie in (0, pi]")
        if not 0 < self.d_v <= 1:
            raise ValueError("d_v must lie in (0, 1]")
        if not self.iota > 0:
            raise ValueError("iota must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be at least 1")
        if self.scale_search not in (GRID, GOLDEN):
            raise ValueError(f"scale_search must be {GRID!r} or {GOLDEN!r}")
        if self.scale_resolution < 2:
            raise ValueError("scale_resolution must be at least 2")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "SequencerConfig":
        return cls(**data)


@dataclass
class ControlSequence:
    frames: list[FrameControl]
    metrics: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "frames": [[a.to_json() for a in frame] for frame in self.frames],
            "metrics": self.metrics,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ControlSequence":
        frames = [tuple(ScalarHV.from_json(a) for a in frame) for frame in data["frames"]]
        return cls(frames, list(data.get("metrics", [])))

    def violations(self, d_h: float, d_v: float) -> list[tuple[int, int]]:
        """(frame, light) pairs breaking the consecutive-frame constraint."""
        bad = []
        for k in range(1, len(self.frames)):
            for i, (a, b) in enumerate(zip(self.frames[k - 1], self.frames[k])):
                if not satisfies(b, a, d_h, d_v):
                    bad.append((k, i))
        return bad


def _hue_gap(x, y):
    d = np.abs(np.asarray(x) - np.asarray(y))
    return np.minimum(d, TWO_PI - d)


def satisfies(action: ScalarHV, prev: ScalarHV, d_h: float, d_v: float) -> bool:
    return bool(_hue_gap(action.hue, prev.hue) < d_h) and abs(action.value - prev.value) < d_v


def project(hue, value, prev_hue, prev_value, d_h: float, d_v: float) -> tuple[np.ndarray, np.ndarray]:
    """Move samples onto the inner edge of the allowed region around ``prev``."""
    delta = np.mod(np.asarray(hue) - prev_hue + math.pi, TWO_PI) - math.pi
    limit = d_h - _MARGIN
    hue = np.where(np.abs(delta) < d_h, hue, prev_hue + np.sign(delta) * limit)
    value = np.clip(value, prev_value - d_v + _MARGIN, prev_value + d_v - _MARGIN)
    return np.mod(hue, TWO_PI), np.clip(value, 0.0, 1.0)


def _frame_arrays(frame: Sequence[ScalarHV]) -> tuple[np.ndarray, np.ndarray]:
    return np.array([a.hue for a in frame]), np.array([a.value for a in frame])


def _to_frame(hues, values) -> FrameControl:
    return tuple(ScalarHV(float(h), float(v)) for h, v in zip(hues, values))


def _frame_score(goal: Goal, mix_hue: np.ndarray, mix_value: np.ndarray) -> float:
    return kl_divergence(goal.hue.bins, mix_hue) + kl_divergence(goal.value.bins, mix_value)


@torch.no_grad()
def _decompose(net: PolicyNetwork, env: LightEnv, goal: Goal, prev_frame: Optional[FrameControl],
               config: SequencerConfig, rng: np.random.Generator) -> tuple[FrameControl, int]:
    k, n = config.candidate_count, env.n_lights
    if prev_frame is not None and len(prev_frame) != n:
        raise ValueError(f"previous frame has {len(prev_frame)} lights, expected {n}")
    gh = np.repeat(goal.hue.bins[None], k, axis=0)
    gv = np.repeat(goal.value.bins[None], k, axis=0)
    actions = np.zeros((k, n, 2))
    mix_hue = np.zeros((k, n, gh.shape[1]))
    mix_value = np.zeros((k, n, gv.shape[1]))
    projected = np.zeros(k, dtype=np.int64)
    prev_h, prev_v = _frame_arrays(prev_frame) if prev_frame is not None else (None, None)

    for t in range(n):
        tokens = tokens_from_arrays(gh, gv, mix_hue, mix_value, actions, t + 1)
        dist = net.action_dist(net.embed(tokens)[:, t]).with_temperature(config.iota)
        hue, value = dist.sample(rng)
        if prev_frame is not None:
            ph, pv = prev_h[t], prev_v[t]
            excess = np.maximum(_hue_gap(hue, ph) / config.d_h, np.abs(value - pv) / config.d_v)
            best_h, best_v, best_x = hue.copy(), value.copy(), excess.copy()
            pending = excess >= 1
            for _ in range(config.max_attempts - 1):
                if not pending.any():
                    break
                h2, v2 = dist.sample(rng)
                x2 = np.maximum(_hue_gap(h2, ph) / config.d_h, np.abs(v2 - pv) / config.d_v)
                better = pending & (x2 < best_x)
                best_h[better], best_v[better], best_x[better] = h2[better], v2[better], x2[better]
                pending &= x2 >= 1
            projected += pending
            hue, value = project(best_h, best_v, ph, pv, config.d_h, config.d_v)
        actions[:, t, 0], actions[:, t, 1] = hue, value
        lit_h = np.zeros((k, n))
        lit_v = np.zeros((k, n))
        lit_h[:, : t + 1] = actions[:, : t + 1, 0]
        lit_v[:, : t + 1] = actions[:, : t + 1, 1]
        mh, mv, _ = env.mixer.mix_batch(lit_h, lit_v)
        mix_hue[:, t], mix_value[:, t] = mh, mv

    scores = [_frame_score(goal, mix_hue[i, -1], mix_value[i, -1]) for i in range(k)]
    best = int(np.argmin(scores))
    return _to_frame(actions[best, :, 0], actions[best, :, 1]), int(projected[best])


def decompose_frame(net: PolicyNetwork, env: LightEnv, goal: Goal, prev_frame: Optional[FrameControl],
                    config: SequencerConfig, rng: np.random.Generator) -> FrameControl:
    """Best of ``candidate_count`` constrained policy rollouts for one goal."""
    return _decompose(net, env, goal, prev_frame, config, rng)[0]


def _feasible_interval(values: np.ndarray, prev_frame: Optional[FrameControl], d_v: float,
                       f_max: float) -> tuple[float, float]:
    lo, hi = 0.0, f_max
    if prev_frame is None:
        return lo, hi
    _, pv = _frame_arrays(prev_frame)
    lit = values > 0
    if lit.any():
        lo = max(lo, float(np.max((pv[lit] - d_v) / values[lit])))
        hi = min(hi, float(np.min((pv[lit] + d_v) / values[lit])))
    return lo, hi


def scale_values(frame: FrameControl, goal: Goal, env: LightEnv, config: SequencerConfig = SequencerConfig(),
                 prev_frame: Optional[FrameControl] = None) -> tuple[FrameControl, float, bool]:
    """Rescale all light values by one factor ``f`` to match the goal's value histogram.

    ``f`` ranges over ``[0, 1 / max value]`` so every scaled value stays in
    [0, 1], narrowed further so the scaled frame still satisfies the ``d_v``
    constraint against ``prev_frame``. ``f = 1`` is always a candidate and
    wins ties. Returns ``(frame, f, degenerate)``; an all-dark frame is
    returned unchanged with ``degenerate = True``.
    """
    hues, values = _frame_arrays(frame)
    vmax = float(values.max())
    if vmax <= 0:
        return tuple(frame), 1.0, True

    def objective(fs: np.ndarray) -> np.ndarray:
        scaled = np.clip(values[None] * fs[:, None], 0.0, 1.0)
        _, mv, _ = env.mixer.mix_batch(np.repeat(hues[None], len(fs), axis=0), scaled)
        return np.array([wasserstein_1d(m, goal.value.bins) for m in mv])

    def allowed(f: float) -> bool:
        if prev_frame is None:
            return True
        scaled = _to_frame(hues, np.clip(values * f, 0.0, 1.0))
        return all(satisfies(a, p, config.d_h, config.d_v) for a, p in zip(scaled, prev_frame))

    lo, hi = _feasible_interval(values, prev_frame, config.d_v, 1.0 / vmax)
    if config.scale_search == GRID:
        cands = np.linspace(lo, hi, config.scale_resolution) if hi > lo else np.array([])
    else:
        cands = _golden(objective, lo, hi, config.scale_resolution) if hi > lo else np.array([])
    cands = np.array([1.0] + [f for f in cands if f != 1.0 and allowed(f)])
    obj = objective(cands)
    best = np.flatnonzero(obj == obj.min())
    # ties go to the factor closest to 1 (index 0 is exactly 1)
    pick = int(best[np.argmin(np.abs(cands[best] - 1.0))])
    f = float(cands[pick])
    if f == 1.0:
        return tuple(frame), 1.0, False
    return _to_frame(hues, np.clip(values * f, 0.0, 1.0)), f, False


def _golden(objective, lo: float, hi: float, evaluations: int) -> np.ndarray:
    """Points visited by a golden-section search on [lo, hi]."""
    ratio = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = objective(np.array([c, d]))
    seen = [a, b, c, d]
    for _ in range(max(evaluations - 4, 0)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = objective(np.array([c]))[0]
            seen.append(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = objective(np.array([d]))[0]
            seen.append(d)
    return np.array(seen)


def frame_metrics(env: LightEnv, goal: Goal, frame: FrameControl) -> dict:
    result = env.mixer.mix(frame)
    return {"hue": all_metrics(goal.hue, result.hue), "value": all_metrics(goal.value, result.value)}


def run_sequence(net: PolicyNetwork, env: LightEnv, goals: Sequence[Goal],
                 config: SequencerConfig = SequencerConfig(),
                 rng: Optional[np.random.Generator] = None) -> ControlSequence:
    """Decompose and scale each goal in order, constraining every frame by the previous one."""
    if not goals:
        raise ValueError("need at least one goal")
    rng = rng if rng is not None else np.random.default_rng(0)
    frames: list[FrameControl] = []
    metrics: list[dict] = []
    prev: Optional[FrameControl] = None
    for k, goal in enumerate(goals):
        frame, projected = _decompose(net, env, goal, prev, config, rng)
        frame, f, degenerate = scale_values(frame, goal, env, config, prev)
        row = {"frame": k, "scale": f, "scale_degenerate": degenerate, "projected": projected}
        row.update(frame_metrics(env, goal, frame))
        frames.append(frame)
        metrics.append(row)
        prev = frame
    return ControlSequence(frames, metrics)


def load_goal_sequence(path) -> list[Goal]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or not isinstance(data.get("frames"), list):
        raise ValueError(f"{path}: expected an object with a 'frames' list")
    goals = []
    for i, item in enumerate(data["frames"]):
        try:
            goals.append(Goal.from_json(item))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: frame {i}: {exc}") from exc
    if not goals:
        raise ValueError(f"{path}: no frames")
    return goals


def save_goal_sequence(path, goals: Sequence[Goal]) -> None:
    Path(path).write_text(json.dumps({"frames": [g.to_json() for g in goals]}))
