import json
from dataclasses import asdict

import pytest

from conftest import TINY_POLICY
from lightdecomp.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from lightdecomp.policy.checkpoint import load_arrays
from lightdecomp.policy.network import init_network

TINY_CONFIG = {
    "mixer": {"width": 16, "height": 16},
    "policy": asdict(TINY_POLICY),
    "train": {"batch": 8, "group_size": 4, "phase1_iterations": 4, "phase2_iterations": 2,
              "phase3_iterations": 2, "update_epochs": 1, "relabel_every": 2, "relabel_count": 2},
    "checkpoint_every": 2,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    experts = root / "experts.jsonl"
    assert main(["gen-experts", "--size", "12", "--seed", "1", "--config", str(cfg), "--out", str(experts)]) == EXIT_OK
    return root, cfg, experts


@pytest.fixture(scope="module")
def trained_run(workspace):
    root, cfg, experts = workspace
    run = root / "run"
    for phase in (1, 2, 3):
        assert main(["train", "--phase", str(phase), "--experts", str(experts),
                     "--config", str(cfg), "--out", str(run)]) == EXIT_OK
    return run


def goals_file(path, n, seed=0):
    import numpy as np

    from lightdecomp.env import LightEnv
    from lightdecomp.mixer import Mixer, MixerConfig
    from lightdecomp.sequencer import save_goal_sequence

    env = LightEnv(Mixer(MixerConfig(width=16, height=16)))
    rng = np.random.default_rng(seed)
    save_goal_sequence(path, [env.sample_expert_goal(rng)[0] for _ in range(n)])
    return path


class TestGenExperts:
    def test_line_count_and_manifest(self, workspace):
        root, _, experts = workspace
        assert len(experts.read_text().splitlines()) == 12
        manifest = json.loads((root / "experts.jsonl.manifest.json").read_text())
        assert manifest["command"] == "gen-experts" and manifest["seed"] == 1
        assert "finished" in manifest["timestamps"]

    def test_same_seed_same_bytes(self, workspace, tmp_path):
        _, cfg, experts = workspace
        out = tmp_path / "again.jsonl"
        main(["gen-experts", "--size", "12", "--seed", "1", "--config", str(cfg), "--out", str(out)])
        assert out.read_bytes() == experts.read_bytes()

    def test_size_zero_is_usage_error(self, tmp_path, capsys):
        assert main(["gen-experts", "--size", "0", "--out", str(tmp_path / "x.jsonl")]) == EXIT_USAGE
        assert not (tmp_path / "x.jsonl").exists()

    def test_set_override_and_bad_key(self, tmp_path):
        out = tmp_path / "e.jsonl"
        assert main(["gen-experts", "--size", "2", "--set", "mixer.width=20", "--set", "mixer.height=16",
                     "--out", str(out)]) == EXIT_OK
        manifest = json.loads((tmp_path / "e.jsonl.manifest.json").read_text())
        assert manifest["config"]["mixer"]["width"] == 20
        assert main(["gen-experts", "--size", "2", "--set", "mixer.colour=1", "--out", str(out)]) == EXIT_USAGE

    def test_env_config(self, workspace, tmp_path, monkeypatch):
        _, cfg, experts = workspace
        monkeypatch.setenv("LIGHTDECOMP_CONFIG", str(cfg))
        out = tmp_path / "env.jsonl"
        assert main(["gen-experts", "--size", "12", "--seed", "1", "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == experts.read_bytes()


class TestTrain:
    def test_run_layout(self, trained_run):
        ck = trained_run / "checkpoints"
        assert {p.name for p in ck.glob("phase?.ldck")} == {"phase1.ldck", "phase2.ldck", "phase3.ldck"}
        rows = (trained_run / "metrics.csv").read_text().splitlines()
        assert rows[0].startswith("phase,iteration") and len(rows) == 1 + 4 + 2 + 2
        assert json.loads((trained_run / "manifest_phase3.json").read_text())["command"] == "train"

    def test_grpo_phase2_has_no_critic_optimizer_state(self, trained_run):
        arrays, meta = load_arrays(trained_run / "checkpoints" / "phase2.ldck")
        assert meta["phase2_algorithm"] == "grpo"
        net = init_network(TINY_POLICY, seed=0)
        critic = {n for n, _ in net.named_parameters() if net.param_group(n) == "critic"}
        optim_params = {k.split("/")[1] for k in arrays if k.startswith("optim/")}
        assert optim_params and not (optim_params & critic)

    def test_phase_order_refused(self, workspace, tmp_path, capsys):
        root, cfg, experts = workspace
        run = tmp_path / "r"
        assert main(["train", "--phase", "2", "--experts", str(experts), "--config", str(cfg),
                     "--out", str(run)]) == EXIT_USAGE
        assert "phase-1 checkpoint" in capsys.readouterr().err
        assert main(["train", "--phase", "1", "--experts", str(experts), "--config", str(cfg),
                     "--out", str(run)]) == EXIT_OK
        assert main(["train", "--phase", "3", "--experts", str(experts), "--config", str(cfg), "--out", str(run),
                     "--resume", str(run / "checkpoints" / "phase1.ldck")]) == EXIT_USAGE

    def test_resume_continues_exactly(self, workspace, tmp_path):
        root, cfg, experts = workspace
        full, part = tmp_path / "full", tmp_path / "part"
        base = ["train", "--phase", "1", "--experts", str(experts), "--config", str(cfg), "--iterations", "5"]
        assert main(base + ["--out", str(full)]) == EXIT_OK
        assert main(base[:-1] + ["2", "--out", str(part)]) == EXIT_OK
        latest = part / "checkpoints" / "phase1_latest.ldck"
        assert main(base + ["--out", str(part), "--resume", str(latest)]) == EXIT_OK
        for name in ("checkpoints/phase1.ldck", "metrics.csv"):
            assert (full / name).read_bytes() == (part / name).read_bytes()

    def test_missing_experts_is_io_error(self, workspace, tmp_path):
        _, cfg, _ = workspace
        assert main(["train", "--phase", "1", "--experts", str(tmp_path / "none.jsonl"), "--config", str(cfg),
                     "--out", str(tmp_path / "r")]) == EXIT_IO

    def test_mismatched_mixer_rejected(self, workspace, tmp_path, capsys):
        _, cfg, experts = workspace
        code = main(["train", "--phase", "1", "--experts", str(experts), "--config", str(cfg),
                     "--set", "mixer.sigma_rel=0.3", "--out", str(tmp_path / "r")])
        assert code == EXIT_USAGE and "mixer" in capsys.readouterr().err


class TestEval:
    def test_both_domains_and_reproducible(self, trained_run, tmp_path, capsys):
        ck = trained_run / "checkpoints" / "phase3.ldck"
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["eval", "--ckpt", str(ck), "--n", "4", "--seed", "2", "--out", str(a)]) == EXIT_OK
        assert main(["eval", "--ckpt", str(ck), "--n", "4", "--seed", "2", "--out", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        assert set(json.loads(a.read_text())["sections"]) == {"id", "ood"}
        assert "| phase3 |" in capsys.readouterr().out
        assert (tmp_path / "a.csv").is_file()

    def test_single_domain(self, trained_run, tmp_path):
        out = tmp_path / "ood.json"
        assert main(["eval", "--ckpt", str(trained_run / "checkpoints" / "phase1.ldck"), "--domain", "ood",
                     "--n", "2", "--out", str(out)]) == EXIT_OK
        assert list(json.loads(out.read_text())["sections"]) == ["ood"]

    def test_missing_checkpoint(self, tmp_path, capsys):
        code = main(["eval", "--ckpt", str(tmp_path / "nope.ldck"), "--out", str(tmp_path / "r.json")])
        assert code == EXIT_IO and "nope.ldck" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.ldck"
        bad.write_bytes(b"not a checkpoint")
        assert main(["eval", "--ckpt", str(bad), "--out", str(tmp_path / "r.json")]) == EXIT_USAGE

    def test_compare(self, trained_run, tmp_path):
        reports = []
        for phase in (1, 3):
            out = tmp_path / f"p{phase}.json"
            main(["eval", "--ckpt", str(trained_run / "checkpoints" / f"phase{phase}.ldck"), "--n", "2",
                  "--out", str(out)])
            reports.append(str(out))
        table = tmp_path / "t.md"
        assert main(["compare", *reports, "--out", str(table)]) == EXIT_OK
        text = table.read_text()
        assert "| phase1 |" in text and "| phase3 |" in text
        assert main(["compare", *reports[::-1], "--format", "csv", "--out", str(tmp_path / "t.csv")]) == EXIT_OK


class TestDecomposeAndMix:
    def test_one_frame(self, trained_run, tmp_path):
        goals = goals_file(tmp_path / "g.json", 1)
        out = tmp_path / "c.json"
        assert main(["decompose", "--ckpt", str(trained_run / "checkpoints" / "phase3.ldck"),
                     "--goals", str(goals), "--out", str(out), "--render-dir", str(tmp_path / "r")]) == EXIT_OK
        data = json.loads(out.read_text())
        assert len(data["frames"]) == 1 and len(data["frames"][0]) == 8
        assert [p.name for p in (tmp_path / "r").iterdir()] == ["frame_0000.ppm"]

    def test_renders_and_round_trip_through_mix(self, trained_run, tmp_path):
        goals = goals_file(tmp_path / "g.json", 4, seed=1)
        out, again = tmp_path / "c.json", tmp_path / "c2.json"
        args = ["decompose", "--ckpt", str(trained_run / "checkpoints" / "phase3.ldck"), "--goals", str(goals),
                "--seed", "3", "--candidates", "2"]
        assert main(args + ["--out", str(out), "--render-dir", str(tmp_path / "r")]) == EXIT_OK
        assert main(args + ["--out", str(again)]) == EXIT_OK
        assert out.read_bytes() == again.read_bytes()
        assert len(list((tmp_path / "r").glob("*.ppm"))) == 4

        mixed = tmp_path / "m.json"
        assert main(["mix", "--frame-json", str(out), "--goals", str(goals), "--out", str(mixed)]) == EXIT_OK
        recorded = json.loads(out.read_text())["metrics"]
        for row, entry in zip(recorded, json.loads(mixed.read_text())["mixes"]):
            assert entry["metrics"]["hue"] == row["hue"] and entry["metrics"]["value"] == row["value"]
            assert abs(sum(entry["hue"]) - 1) < 1e-9 and abs(sum(entry["value"]) - 1) < 1e-9

    def test_malformed_goal_names_frame(self, trained_run, tmp_path, capsys):
        goals = goals_file(tmp_path / "g.json", 3)
        data = json.loads(goals.read_text())
        data["frames"][1]["hue"] = data["frames"][1]["hue"][:-1]
        goals.write_text(json.dumps(data))
        code = main(["decompose", "--ckpt", str(trained_run / "checkpoints" / "phase3.ldck"),
                     "--goals", str(goals), "--out", str(tmp_path / "c.json")])
        assert code == EXIT_USAGE and "frame 1" in capsys.readouterr().err

    def test_mix_zero_frame_is_degenerate(self, tmp_path, capsys):
        f = tmp_path / "f.json"
        f.write_text(json.dumps([{"h": 1.0, "v": 0.0}] * 8))
        assert main(["mix", "--frame-json", str(f), "--set", "mixer.width=16", "--set", "mixer.height=16"]) == EXIT_OK
        entry = json.loads(capsys.readouterr().out)["mixes"][0]
        assert entry["degenerate"] and abs(sum(entry["value"]) - 1) < 1e-9

    def test_mix_wrong_light_count(self, tmp_path):
        f = tmp_path / "f.json"
        f.write_text(json.dumps([{"h": 1.0, "v": 0.5}] * 3))
        assert main(["mix", "--frame-json", str(f)]) == EXIT_USAGE


def test_unknown_command_is_usage_error(capsys):
    assert main(["paint"]) == EXIT_USAGE
