import math

import numpy as np
import pytest

from conftest import TINY_POLICY
from lightdecomp.distributions import ScalarHV, l1_distance, wasserstein_1d
from lightdecomp.env import Goal, LightEnv
from lightdecomp.evaluation import sample_goals
from lightdecomp.mixer import Mixer, MixerConfig
from lightdecomp.sequencer import (
    ControlSequence,
    SequencerConfig,
    decompose_frame,
    load_goal_sequence,
    project,
    run_sequence,
    satisfies,
    save_goal_sequence,
    scale_values,
)
from lightdecomp.training import Trainer, TrainConfig, collect_rollouts

FAST = SequencerConfig(candidate_count=4, max_attempts=8)


@pytest.fixture(scope="module")
def trained(small_env, experts):
    tr = Trainer(small_env, experts, TrainConfig(batch=16, phase1_iterations=40), TINY_POLICY, seed=0)
    tr.run_phase(1)
    return tr.net


def expert_goals(env, n, seed):
    rng = np.random.default_rng(seed)
    return [env.sample_expert_goal(rng)[0] for _ in range(n)]


def frame(hues, values):
    return tuple(ScalarHV(float(h), float(v)) for h, v in zip(hues, values))


class TestConstraint:
    def test_rejection_example(self):
        assert not satisfies(ScalarHV(3 * math.pi / 4, 0.5), ScalarHV(0.0, 0.5), math.pi / 2, 0.3)
        assert satisfies(ScalarHV(math.pi / 4, 0.6), ScalarHV(0.0, 0.5), math.pi / 2, 0.3)

    def test_boundary_is_excluded(self):
        assert not satisfies(ScalarHV(math.pi / 2, 0.5), ScalarHV(0.0, 0.5), math.pi / 2, 0.3)
        assert not satisfies(ScalarHV(0.0, 0.8), ScalarHV(0.0, 0.5), math.pi / 2, 0.3)

    def test_wraparound(self):
        assert satisfies(ScalarHV(0.1, 0.5), ScalarHV(2 * math.pi - 0.1, 0.5), math.pi / 2, 0.3)

    def test_project_lands_inside(self):
        h, v = project(np.array([3 * math.pi / 4, 5.0]), np.array([0.95, 0.0]), 0.0, 0.5, math.pi / 2, 0.3)
        assert h[0] == pytest.approx(math.pi / 2, abs=1e-8) and h[0] < math.pi / 2
        # 5.0 rad is 1.28 rad clockwise of 0, already allowed
        assert h[1] == 5.0
        for hue, val in zip(h, v):
            assert satisfies(ScalarHV(hue, val), ScalarHV(0.0, 0.5), math.pi / 2, 0.3)

    def test_project_keeps_valid_samples(self):
        h, v = project(np.array([0.3]), np.array([0.6]), 0.0, 0.5, math.pi / 2, 0.3)
        assert h[0] == 0.3 and v[0] == 0.6


class TestDecompose:
    def test_first_frame_single_candidate_is_plain_sample(self, trained, small_env):
        goal = expert_goals(small_env, 1, 0)[0]
        cfg = SequencerConfig(candidate_count=1)
        a = decompose_frame(trained, small_env, goal, None, cfg, np.random.default_rng(5))
        ref = collect_rollouts(trained, small_env, goal.hue.bins[None], goal.value.bins[None], np.random.default_rng(5))
        assert np.allclose([x.hue for x in a], ref.actions[0, :, 0], atol=1e-12)
        assert np.allclose([x.value for x in a], ref.actions[0, :, 1], atol=1e-12)

    def test_constrained_frame_respects_previous(self, trained, small_env):
        goal = expert_goals(small_env, 1, 1)[0]
        rng = np.random.default_rng(0)
        for _ in range(10):
            prev = frame(rng.uniform(0, 2 * math.pi, 8), rng.uniform(0, 1, 8))
            out = decompose_frame(trained, small_env, goal, prev, FAST, rng)
            assert all(satisfies(a, p, FAST.d_h, FAST.d_v) for a, p in zip(out, prev))

    def test_best_of_16_not_much_worse_than_unconstrained_median(self, trained, small_env):
        rng = np.random.default_rng(11)
        for goal in expert_goals(small_env, 5, 2):
            singles = []
            for _ in range(16):
                f = decompose_frame(trained, small_env, goal, None, SequencerConfig(candidate_count=1), rng)
                singles.append(l1_distance(goal.hue, small_env.mixer.mix(f).hue))
            best = decompose_frame(trained, small_env, goal, None, SequencerConfig(candidate_count=16), rng)
            assert l1_distance(goal.hue, small_env.mixer.mix(best).hue) <= 2 * np.median(singles)

    def test_deterministic(self, trained, small_env):
        goals = expert_goals(small_env, 3, 3)
        a = run_sequence(trained, small_env, goals, FAST, np.random.default_rng(4))
        b = run_sequence(trained, small_env, goals, FAST, np.random.default_rng(4))
        assert a.to_json() == b.to_json()


class TestScale:
    def test_already_optimal_keeps_one(self, small_env):
        rng = np.random.default_rng(0)
        for _ in range(5):
            f0 = frame(rng.uniform(0, 6.28, 8), rng.uniform(0.2, 0.9, 8))
            goal = Goal.from_mix(small_env.mixer.mix(f0))
            out, f, deg = scale_values(f0, goal, small_env)
            assert f == 1.0 and out == f0 and not deg

    def test_single_light_doubles(self, small_env):
        zeros = [0.0] * 7
        goal = Goal.from_mix(small_env.mixer.mix(frame([1.0] * 8, [1.0] + zeros)))
        out, f, _ = scale_values(frame([1.0] * 8, [0.5] + zeros), goal, small_env)
        assert f == pytest.approx(2.0, abs=0.01)
        assert out[0].value == pytest.approx(1.0, abs=0.005)

    def test_never_worse_and_feasible(self, small_env):
        rng = np.random.default_rng(1)
        for _ in range(20):
            f0 = frame(rng.uniform(0, 6.28, 8), rng.uniform(0, 1, 8))
            goal = small_env.sample_arbitrary_goal(rng)
            out, f, _ = scale_values(f0, goal, small_env)
            before = wasserstein_1d(small_env.mixer.mix(f0).value, goal.value)
            after = wasserstein_1d(small_env.mixer.mix(out).value, goal.value)
            assert after <= before and all(0 <= a.value <= 1 for a in out)

    def test_respects_previous_frame(self, small_env):
        rng = np.random.default_rng(2)
        cfg = SequencerConfig()
        for _ in range(20):
            prev = frame(rng.uniform(0, 6.28, 8), rng.uniform(0.3, 0.7, 8))
            cur = frame([a.hue for a in prev], [min(1.0, a.value + rng.uniform(-0.2, 0.2)) for a in prev])
            goal = small_env.sample_arbitrary_goal(rng)
            out, _, _ = scale_values(cur, goal, small_env, cfg, prev)
            assert all(satisfies(a, p, cfg.d_h, cfg.d_v) for a, p in zip(out, prev))

    def test_all_zero_is_degenerate(self, small_env):
        f0 = frame([0.5] * 8, [0.0] * 8)
        out, f, deg = scale_values(f0, small_env.sample_arbitrary_goal(np.random.default_rng(0)), small_env)
        assert deg and f == 1.0 and out == f0

    def test_hue_unchanged_when_pixels_stay_lit(self, small_env):
        rng = np.random.default_rng(3)
        f0 = frame(rng.uniform(0, 6.28, 8), rng.uniform(0.4, 0.6, 8))
        goal = Goal.from_mix(small_env.mixer.mix(frame([a.hue for a in f0], [1.3 * a.value for a in f0])))
        out, f, _ = scale_values(f0, goal, small_env, SequencerConfig(scale_search="golden"))
        assert f == pytest.approx(1.3, abs=0.05)
        assert small_env.mixer.mix(out).hue == small_env.mixer.mix(f0).hue

    def test_golden_never_worse(self, small_env):
        rng = np.random.default_rng(4)
        cfg = SequencerConfig(scale_search="golden", scale_resolution=30)
        for _ in range(10):
            f0 = frame(rng.uniform(0, 6.28, 8), rng.uniform(0, 1, 8))
            goal = small_env.sample_arbitrary_goal(rng)
            out, _, _ = scale_values(f0, goal, small_env, cfg)
            assert (wasserstein_1d(small_env.mixer.mix(out).value, goal.value)
                    <= wasserstein_1d(small_env.mixer.mix(f0).value, goal.value))


class TestSequence:
    def test_constant_goal_sequence(self, trained, small_env):
        goal = expert_goals(small_env, 1, 5)[0]
        seq = run_sequence(trained, small_env, [goal] * 12, FAST, np.random.default_rng(0))
        assert seq.violations(FAST.d_h, FAST.d_v) == []

    def test_single_frame_equals_decompose_then_scale(self, trained, small_env):
        goal = expert_goals(small_env, 1, 6)[0]
        seq = run_sequence(trained, small_env, [goal], FAST, np.random.default_rng(7))
        f = decompose_frame(trained, small_env, goal, None, FAST, np.random.default_rng(7))
        scaled, factor, _ = scale_values(f, goal, small_env, FAST)
        assert seq.frames[0] == scaled and seq.metrics[0]["scale"] == factor

    def test_sixty_frames_within_three_times_static(self, trained, small_env):
        goals = expert_goals(small_env, 60, 8)
        seq = run_sequence(trained, small_env, goals, FAST, np.random.default_rng(1))
        assert seq.violations(FAST.d_h, FAST.d_v) == []
        rng = np.random.default_rng(2)
        static = [
            l1_distance(g.hue, small_env.mixer.mix(
                decompose_frame(trained, small_env, g, None, SequencerConfig(candidate_count=1), rng)).hue)
            for g in goals
        ]
        seq_l1 = np.mean([row["hue"]["l1"] for row in seq.metrics])
        assert seq_l1 <= 3 * np.mean(static)

    def test_metrics_match_recomputed_mix(self, trained, small_env):
        goals = expert_goals(small_env, 3, 9)
        seq = run_sequence(trained, small_env, goals, FAST, np.random.default_rng(3))
        for g, fr, row in zip(goals, seq.frames, seq.metrics):
            assert row["hue"]["l1"] == l1_distance(g.hue, small_env.mixer.mix(fr).hue)

    def test_json_round_trip(self, trained, small_env):
        seq = run_sequence(trained, small_env, expert_goals(small_env, 2, 10), FAST, np.random.default_rng(0))
        back = ControlSequence.from_json(seq.to_json())
        assert back.frames == seq.frames and back.metrics == seq.metrics

    def test_empty_sequence_rejected(self, trained, small_env):
        with pytest.raises(ValueError):
            run_sequence(trained, small_env, [], FAST)


class TestGoalFiles:
    def test_round_trip(self, small_env, tmp_path):
        gh, gv = sample_goals(small_env, 3, "ood", np.random.default_rng(0))
        goals = [Goal.from_json({"hue": list(h), "value": list(v)}) for h, v in zip(gh, gv)]
        save_goal_sequence(tmp_path / "g.json", goals)
        assert load_goal_sequence(tmp_path / "g.json") == goals

    def test_bad_frame_named(self, small_env, tmp_path):
        good = small_env.sample_arbitrary_goal(np.random.default_rng(0)).to_json()
        bad = {"hue": [1.0 / 359] * 359, "value": good["value"]}
        (tmp_path / "g.json").write_text(__import__("json").dumps({"frames": [good, good, bad]}))
        with pytest.raises(ValueError, match="frame 2"):
            load_goal_sequence(tmp_path / "g.json")


def test_config_validation():
    for bad in (dict(d_h=0.0), dict(d_h=4.0), dict(d_v=1.5), dict(max_attempts=0), dict(iota=0.0),
                dict(candidate_count=0), dict(scale_search="brent")):
        with pytest.raises(ValueError):
            SequencerConfig(**bad)
    cfg = SequencerConfig(iota=0.5, scale_search="golden")
    assert SequencerConfig.from_json(cfg.to_json()) == cfg


def test_works_on_other_resolutions():
    env = LightEnv(Mixer(MixerConfig(width=20, height=12)))
    from lightdecomp.policy.network import init_network

    net = init_network(TINY_POLICY, seed=0)
    seq = run_sequence(net, env, expert_goals(env, 3, 0), FAST, np.random.default_rng(0))
    assert len(seq.frames) == 3 and seq.violations(FAST.d_h, FAST.d_v) == []
