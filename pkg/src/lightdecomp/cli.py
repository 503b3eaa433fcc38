"""Command-line entry point: ``lightdecomp <command> [options]``.

Commands: ``gen-experts``, ``train``, ``eval``, ``compare``, ``decompose``
and ``mix``. Settings come from built-in defaults, then a JSON config file
(``--config``, or the path in ``$LIGHTDECOMP_CONFIG``), then ``--set
section.key=value`` overrides, then dedicated flags. The config file may hold
the sections ``mixer``, ``policy``, ``train`` and ``sequencer`` plus top-level
``seed`` and ``checkpoint_every``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .distributions import ScalarHV, all_metrics
from .env import EXPERT, LightEnv, load_dataset, save_dataset
from .evaluation import DOMAINS, ID, OOD, EvalReport, compare, evaluate
from .mixer import Mixer, MixerConfig, hsv_to_rgb, write_ppm
from .policy.checkpoint import CheckpointError, load_arrays
from .policy.network import PolicyConfig
from .sequencer import SequencerConfig, load_goal_sequence, run_sequence
from .training import PhaseOrderError, Trainer, TrainConfig, TrajBatch, load_policy

log = logging.getLogger("lightdecomp")

CONFIG_ENV = "LIGHTDECOMP_CONFIG"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SECTIONS = {"mixer": MixerConfig, "policy": PolicyConfig, "train": TrainConfig, "sequencer": SequencerConfig}
METRIC_COLUMNS = ("phase", "iteration", "loss", "bc", "aux", "actor", "critic", "dis", "dis_acc", "reward")


class ValidationError(ValueError):
    pass


# -- config ------------------------------------------------------------------

def default_config() -> dict:
    cfg: dict[str, Any] = {name: cls().to_json() for name, cls in SECTIONS.items()}
    cfg.update(seed=0, checkpoint_every=50)
    return cfg


def _merge(cfg: dict, update: dict, source: str) -> None:
    for key, val in update.items():
        if key in SECTIONS:
            if not isinstance(val, dict):
                raise ValidationError(f"{source}: section {key!r} must be an object")
            unknown = set(val) - set(cfg[key])
            if unknown:
                raise ValidationError(f"{source}: unknown {key} keys {sorted(unknown)}")
            cfg[key].update(val)
        elif key in ("seed", "checkpoint_every"):
            cfg[key] = val
        else:
            raise ValidationError(f"{source}: unknown key {key!r}")


def _read_json(path, what: str) -> Any:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"{what} not found: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def resolve_config(args: argparse.Namespace, base: Optional[dict] = None) -> dict:
    cfg = default_config()
    if base:
        _merge(cfg, base, "checkpoint")
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        data = _read_json(path, "config file")
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        _merge(cfg, data, str(path))
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        section, _, field = key.partition(".")
        _merge(cfg, {section: {field: val}} if field else {section: val}, "--set")
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def build(cfg: dict, section: str):
    try:
        return SECTIONS[section].from_json(cfg[section])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {section} config: {exc}") from exc


def make_env(mixer_config: MixerConfig) -> LightEnv:
    return LightEnv(Mixer(mixer_config))


# -- output helpers ------------------------------------------------------------

def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


class Manifest:
    """Replay record for one command; timestamps live in their own field."""

    def __init__(self, path, command: str, argv: Sequence[str], config: dict, inputs: dict, outputs: dict):
        self.path = Path(path)
        self.data = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seed": config.get("seed"),
            "version": __version__,
            "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
            "outputs": {k: str(v) for k, v in outputs.items() if v is not None},
            "timestamps": {"started": _now()},
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        write_atomic(self.path, dump_json(self.data))

    def finish(self) -> None:
        self.data["timestamps"]["finished"] = _now()
        write_atomic(self.path, dump_json(self.data))


def manifest_for(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


# -- commands ------------------------------------------------------------------

def cmd_gen_experts(args, argv) -> int:
    cfg = resolve_config(args)
    env = make_env(build(cfg, "mixer"))
    out = Path(args.out)
    manifest = Manifest(manifest_for(out), "gen-experts", argv, cfg, {}, {"experts": out})
    trajs = env.build_expert_dataset(args.size, np.random.default_rng(cfg["seed"]))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, trajs)
    manifest.finish()
    log.info("wrote %d expert trajectories to %s", len(trajs), out)
    return EXIT_OK


def load_experts(path, env: LightEnv) -> TrajBatch:
    try:
        trajs = load_dataset(path, env)
    except FileNotFoundError:
        raise FileNotFoundError(f"expert dataset not found: {path}") from None
    if not trajs:
        raise ValidationError(f"{path}: expert dataset is empty")
    for i, t in enumerate(trajs):
        if t.provenance == EXPERT and (t.final_mix.hue != t.goal.hue or t.final_mix.value != t.goal.value):
            raise ValidationError(
                f"{path}:{i + 1}: goal does not match the replayed mix; "
                "was the dataset generated with a different mixer config?"
            )
    return TrajBatch.from_trajectories(trajs)


def _read_metrics(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in METRIC_COLUMNS})


def _format_row(row: dict) -> dict:
    return {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}


def cmd_train(args, argv) -> int:
    out = Path(args.out)
    ckdir = out / "checkpoints"
    resume = Path(args.resume) if args.resume else None
    if resume is None and args.phase > 1:
        default = ckdir / f"phase{args.phase - 1}.ldck"
        if not default.is_file():
            raise ValidationError(
                f"phase {args.phase} requires a phase-{args.phase - 1} checkpoint; pass --resume"
            )
        resume = default

    base = None
    if resume is not None:
        _, meta = load_arrays(resume)
        base = {"mixer": meta["mixer_config"], "policy": meta["policy_config"],
                "train": meta["train_config"], "seed": meta["seed"]}
    cfg = resolve_config(args, base)
    if args.algo:
        cfg["train"]["algorithm"] = args.algo
    if args.iterations is not None:
        cfg["train"][f"phase{args.phase}_iterations"] = args.iterations
    train_cfg = build(cfg, "train")
    env = make_env(build(cfg, "mixer"))
    experts = load_experts(args.experts, env)

    ckdir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / f"manifest_phase{args.phase}.json", "train", argv, cfg,
                        {"experts": args.experts, "resume": resume}, {"run_dir": out})
    write_atomic(out / f"config_phase{args.phase}.json", dump_json(cfg))

    trainer = Trainer(env, experts, train_cfg, build(cfg, "policy"), seed=cfg["seed"])
    if resume is not None:
        trainer.load(resume)
        trainer.config = train_cfg
    trainer.check_phase(args.phase)
    start = trainer.iteration if trainer.phase == args.phase else 0

    metrics_path = out / "metrics.csv"
    kept = [r for r in _read_metrics(metrics_path)
            if int(r["phase"]) < args.phase or (int(r["phase"]) == args.phase and int(r["iteration"]) <= start)]
    _write_metrics(metrics_path, kept)
    every = int(cfg["checkpoint_every"])

    with open(metrics_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n", extrasaction="ignore")

        def on_iteration(row: dict) -> None:
            writer.writerow(_format_row(row))
            fh.flush()
            if every > 0 and trainer.iteration % every == 0:
                trainer.save(ckdir / f"phase{args.phase}_latest.ldck")

        trainer.run_phase(args.phase, on_iteration)
    trainer.save(ckdir / f"phase{args.phase}.ldck")
    manifest.finish()
    log.info("phase %d finished at iteration %d", args.phase, trainer.iteration)
    return EXIT_OK


def _domains(choice: str) -> tuple[str, ...]:
    return DOMAINS if choice == "both" else (choice,)


def cmd_eval(args, argv) -> int:
    net, meta = load_policy(args.ckpt)
    env = make_env(MixerConfig.from_json(meta["mixer_config"]))
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    label = args.label or Path(args.ckpt).stem
    cfg = {"n": args.n, "domain": args.domain, "seed": args.seed, "label": label}
    manifest = Manifest(manifest_for(out), "eval", argv, cfg, {"ckpt": args.ckpt}, {"report": out, "csv": csv_path})
    report = evaluate(net, env, args.n, _domains(args.domain), seed=args.seed, label=label)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_atomic(out, dump_json(report.to_json()))
    write_atomic(csv_path, report.to_csv())
    manifest.finish()
    print(compare([report]), end="")
    return EXIT_OK


def cmd_compare(args, argv) -> int:
    reports = [EvalReport.from_json(_read_json(p, "report")) for p in args.reports]
    text = compare(reports, args.format)
    if args.out:
        write_atomic(args.out, text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_decompose(args, argv) -> int:
    net, meta = load_policy(args.ckpt)
    cfg = resolve_config(args, {"mixer": meta["mixer_config"]})
    if cfg["mixer"] != meta["mixer_config"]:
        raise ValidationError("mixer config differs from the one the checkpoint was trained with")
    if args.iota is not None:
        cfg["sequencer"]["iota"] = args.iota
    if args.candidates is not None:
        cfg["sequencer"]["candidate_count"] = args.candidates
    seq_cfg = build(cfg, "sequencer")
    mixer_cfg = MixerConfig.from_json(meta["mixer_config"])
    env = make_env(mixer_cfg)
    try:
        goals = load_goal_sequence(args.goals)
    except FileNotFoundError:
        raise FileNotFoundError(f"goal file not found: {args.goals}") from None
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc

    out = Path(args.out)
    manifest = Manifest(manifest_for(out), "decompose", argv, cfg,
                        {"ckpt": args.ckpt, "goals": args.goals}, {"controls": out, "renders": args.render_dir})
    seq = run_sequence(net, env, goals, seq_cfg, np.random.default_rng(cfg["seed"]))
    payload = seq.to_json()
    payload["mixer"] = mixer_cfg.to_json()
    payload["sequencer"] = seq_cfg.to_json()
    out.parent.mkdir(parents=True, exist_ok=True)
    write_atomic(out, dump_json(payload))
    if args.render_dir:
        render_frames(env, seq.frames, Path(args.render_dir))
    manifest.finish()
    return EXIT_OK


def render_frames(env: LightEnv, frames, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(frames):
        path = directory / f"frame_{k:04d}.ppm"
        write_ppm(path, hsv_to_rgb(env.mixer.render(frame)))
        paths.append(path)
    return paths


def _parse_frames(data, n_lights: int) -> list[tuple[ScalarHV, ...]]:
    raw = data["frames"] if isinstance(data, dict) else [data]
    if not isinstance(raw, list) or not raw:
        raise ValidationError("expected a non-empty list of frames")
    frames = []
    for i, frame in enumerate(raw):
        try:
            parsed = tuple(ScalarHV.from_json(a) for a in frame)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"frame {i}: {exc}") from exc
        if len(parsed) != n_lights:
            raise ValidationError(f"frame {i}: {len(parsed)} lights, expected {n_lights}")
        frames.append(parsed)
    return frames


def cmd_mix(args, argv) -> int:
    data = _read_json(args.frame_json, "frame file")
    base = {"mixer": data["mixer"]} if isinstance(data, dict) and "mixer" in data else None
    cfg = resolve_config(args, base)
    mixer_cfg = build(cfg, "mixer")
    env = make_env(mixer_cfg)
    frames = _parse_frames(data, mixer_cfg.n_lights)
    goals = None
    if args.goals:
        try:
            goals = load_goal_sequence(args.goals)
        except FileNotFoundError:
            raise FileNotFoundError(f"goal file not found: {args.goals}") from None
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        if len(goals) != len(frames):
            raise ValidationError(f"{len(goals)} goals for {len(frames)} frames")
    mixes = []
    for k, frame in enumerate(frames):
        res = env.mixer.mix(frame)
        entry = {"hue": res.hue.bins.tolist(), "value": res.value.bins.tolist(), "degenerate": res.degenerate}
        if goals is not None:
            entry["metrics"] = {"hue": all_metrics(goals[k].hue, res.hue),
                                "value": all_metrics(goals[k].value, res.value)}
        mixes.append(entry)
    text = dump_json({"mixer": mixer_cfg.to_json(), "mixes": mixes})
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def positive_int(text: str) -> int:
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lightdecomp", description="Decompose light color distributions into per-light controls.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. train.lr=1e-4")
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen-experts", help="generate a hindsight-labeled expert dataset")
    sp.add_argument("--size", type=positive_int, required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_gen_experts)

    sp = sub.add_parser("train", help="run one training phase")
    sp.add_argument("--phase", type=int, choices=(1, 2, 3), required=True)
    sp.add_argument("--algo", choices=("ppo", "grpo"))
    sp.add_argument("--experts", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--iterations", type=positive_int, help="override this phase's iteration count")
    sp.add_argument("--out", required=True, help="run directory")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on ID and/or OOD goals")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--domain", choices=(ID, OOD, "both"), default="both")
    sp.add_argument("--n", type=positive_int, default=256)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--label")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="tabulate several eval reports")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("decompose", help="turn a goal sequence into a control sequence")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--goals", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--render-dir")
    sp.add_argument("--iota", type=float)
    sp.add_argument("--candidates", type=positive_int)
    common(sp)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("mix", help="mix light controls into hue/value histograms")
    sp.add_argument("--frame-json", required=True)
    sp.add_argument("--goals", help="goal sequence to score the mixes against")
    sp.add_argument("--out")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_mix)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (ValidationError, CheckpointError, PhaseOrderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
