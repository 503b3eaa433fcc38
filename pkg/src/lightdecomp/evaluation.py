"""Static per-goal evaluation on expert-manifold (ID) and arbitrary (OOD) goals."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distributions import METRICS
from .env import LightEnv
from .policy.network import PolicyNetwork
from .training.rollout import TrajBatch, collect_rollouts

ID = "id"
OOD = "ood"
DOMAINS = (ID, OOD)
KINDS = ("hue", "value")
LOWER_IS_BETTER = {m: m != "cosine" for m in METRICS}


@dataclass
class EvalReport:
    """Mean/std/count for each (metric, kind, domain) cell of one checkpoint."""

    label: str
    cells: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: Optional[int] = None

    def cell(self, metric: str, kind: str, domain: str) -> dict:
        return self.cells[f"{metric}/{kind}/{domain}"]

    @property
    def domains(self) -> list[str]:
        return sorted({key.rsplit("/", 1)[1] for key in self.cells})

    def to_json(self) -> dict:
        """One section per goal domain, keyed ``metric/kind`` inside."""
        sections: dict = {}
        for key in sorted(self.cells):
            stem, domain = key.rsplit("/", 1)
            sections.setdefault(domain, {})[stem] = self.cells[key]
        return {"label": self.label, "config_hash": self.config_hash, "seed": self.seed, "sections": sections}

    @classmethod
    def from_json(cls, data: dict) -> "EvalReport":
        cells = {f"{stem}/{domain}": cell
                 for domain, section in data["sections"].items() for stem, cell in section.items()}
        return cls(data["label"], cells, data.get("config_hash", ""), data.get("seed"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "metric", "kind", "domain", "mean", "std", "count"])
        for key in sorted(self.cells):
            metric, kind, domain = key.split("/")
            c = self.cells[key]
            w.writerow([self.label, metric, kind, domain, repr(c["mean"]), repr(c["std"]), c["count"]])
        return buf.getvalue()


def domain_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent ID/OOD streams derived from one run seed."""
    id_ss, ood_ss = np.random.SeedSequence(seed).spawn(2)
    return {ID: np.random.default_rng(id_ss), OOD: np.random.default_rng(ood_ss)}


def sample_goals(env: LightEnv, n_goals: int, domain: str, rng: np.random.Generator):
    if domain == ID:
        goals = [env.sample_expert_goal(rng)[0] for _ in range(n_goals)]
    elif domain == OOD:
        goals = [env.sample_arbitrary_goal(rng) for _ in range(n_goals)]
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return np.stack([g.hue.bins for g in goals]), np.stack([g.value.bins for g in goals])


def score(batch: TrajBatch) -> dict[str, np.ndarray]:
    """Every metric between each goal and the final achieved mix."""
    out = {}
    for kind, goals, mixes in (("hue", batch.goal_hue, batch.mix_hue[:, -1]),
                               ("value", batch.goal_value, batch.mix_value[:, -1])):
        for name, fn in METRICS.items():
            out[f"{name}/{kind}"] = np.array([fn(g, m) for g, m in zip(goals, mixes)])
    return out


def summarize(scores: dict[str, np.ndarray], domain: str, cells: dict) -> None:
    for key, vals in scores.items():
        cells[f"{key}/{domain}"] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "count": int(vals.size)}


def evaluate(net: PolicyNetwork, env: LightEnv, n_goals: int = 256, domains: Sequence[str] = DOMAINS,
             seed: int = 0, label: str = "policy", batch_size: int = 256) -> EvalReport:
    """Roll the policy once per goal (temperature 1, no frame constraints) and score it."""
    if n_goals < 1:
        raise ValueError("need at least one evaluation goal")
    rngs = domain_rngs(seed)
    cells: dict = {}
    for domain in domains:
        rng = rngs[domain]
        gh, gv = sample_goals(env, n_goals, domain, rng)
        parts = [
            collect_rollouts(net, env, gh[i : i + batch_size], gv[i : i + batch_size], rng)
            for i in range(0, n_goals, batch_size)
        ]
        summarize(score(TrajBatch.concat(parts)), domain, cells)
    return EvalReport(label, cells, config_hash(env, net), seed)


def evaluate_actions(env: LightEnv, goal_hue, goal_value, actions, domain: str = ID,
                     label: str = "actions") -> EvalReport:
    """Score fixed action sequences (e.g. the expert actions) against their goals."""
    cells: dict = {}
    summarize(score(TrajBatch.from_actions(env, goal_hue, goal_value, actions)), domain, cells)
    return EvalReport(label, cells)


def config_hash(env: LightEnv, net: Optional[PolicyNetwork] = None) -> str:
    payload = {"mixer": env.mixer.config.to_json()}
    if net is not None:
        payload["policy"] = net.config.to_json()
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def compare(reports: Sequence[EvalReport], fmt: str = "markdown") -> str:
    """Table with one row per report and one column per (metric, kind, domain).

    Best cells are wrapped in ``**`` and second-best in ``_`` (markdown), or
    flagged in a ``rank`` suffix for CSV. Rows are sorted by label, so input
    order never changes the output.
    """
    if not reports:
        raise ValueError("need at least one report")
    reports = sorted(reports, key=lambda r: r.label)
    keys = sorted(set().union(*(r.cells for r in reports)))
    hashes = {r.config_hash for r in reports if r.config_hash}
    warning = "config hashes differ between reports" if len(hashes) > 1 else ""

    ranks: dict[tuple[str, str], int] = {}
    for key in keys:
        metric = key.split("/")[0]
        vals = sorted({r.cells[key]["mean"] for r in reports if key in r.cells},
                      reverse=not LOWER_IS_BETTER[metric])
        for r in reports:
            if key in r.cells:
                ranks[(r.label, key)] = vals.index(r.cells[key]["mean"]) + 1

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label"] + keys)
        for r in reports:
            row = [r.label]
            for key in keys:
                c = r.cells.get(key)
                row.append("" if c is None else f"{c['mean']:.6g}±{c['std']:.6g} (rank {ranks[(r.label, key)]})")
            w.writerow(row)
        if warning:
            w.writerow([f"# warning: {warning}"])
        return buf.getvalue()

    lines = ["| model | " + " | ".join(keys) + " |", "|---" * (len(keys) + 1) + "|"]
    for r in reports:
        cells = []
        for key in keys:
            c = r.cells.get(key)
            if c is None:
                cells.append("")
                continue
            text = f"{c['mean']:.4g}±{c['std']:.3g}"
            rank = ranks[(r.label, key)]
            if len(reports) > 1 and rank == 1:
                text = f"**{text}**"
            elif len(reports) > 2 and rank == 2:
                text = f"_{text}_"
            cells.append(text)
        lines.append(f"| {r.label} | " + " | ".join(cells) + " |")
    if warning:
        lines.append("")
        lines.append(f"> warning: {warning}")
    return "\n".join(lines) + "\n"
