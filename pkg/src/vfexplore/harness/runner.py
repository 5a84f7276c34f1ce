"""Run orchestration and on-disk records.

A run directory holds ``config.yaml`` (canonical), ``record.json`` and one
``seed_<k>/`` directory per seed with ``metrics.jsonl``, ``checkpoint.bin`` and
an ``eval/`` directory (``trajectories.csv``, ``diagnostics.json``,
``visitation_grid.txt``). Every file carries the config hash.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .. import __version__, boxworld, diagnostics
from ..agent import checkpoint
from ..agent.sac import AgentBundle, TrainingDivergenceError, make_bundle, policy_fn, train
from .config import RunConfig

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "VFEXPLORE_OUTPUT_ROOT"


def resolve_output_dir(cfg: RunConfig, output_dir: Optional[str] = None) -> Path:
    out = Path(output_dir or cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _json_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True) + "\n"


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def eval_rng(seed: int) -> tuple[np.random.Generator, torch.Generator]:
    ss = np.random.SeedSequence([seed, 7919])
    env_ss, torch_ss = ss.spawn(2)
    return np.random.default_rng(env_ss), torch.Generator().manual_seed(int(torch_ss.generate_state(1)[0]))


def evaluate(cfg: RunConfig, bundle: AgentBundle, n_episodes: int, seed: int) -> list[list[boxworld.Transition]]:
    """Roll out the frozen policy; parameters are never touched."""
    rng, gen = eval_rng(seed)
    pol = policy_fn(bundle, gen, cfg.eval.deterministic)
    return [
        boxworld.run_episode(cfg.env, cfg.field, cfg.shaping, pol, cfg.reward_mode, rng)
        for _ in range(n_episodes)
    ]


def write_eval(cfg: RunConfig, episodes, out_dir: Path, extra_header: Optional[dict] = None) -> diagnostics.DiagnosticsReport:
    out_dir.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    report = diagnostics.build_report(cfg.field, cfg.band, cfg.shaping, episodes,
                                      cfg.eval.grid_resolution, cfg.eval.n_bins)
    payload = {"config_hash": h, **(extra_header or {}), **report.to_dict()}
    write_json(out_dir / "diagnostics.json", payload)
    grid = np.asarray(report.visitation_grid)
    (out_dir / "visitation_grid.txt").write_text(diagnostics.format_grid(grid, {"config_hash": h}))
    keep = episodes[-cfg.eval.trajectory_episodes:] if cfg.eval.trajectory_episodes else []
    first = len(episodes) - len(keep)
    with open(out_dir / "trajectories.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(("episode",) + boxworld.TRAJECTORY_COLUMNS)
        for i, ep in enumerate(keep):
            for row in boxworld.trajectory_rows(ep, first + i):
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return report


def train_seed(cfg: RunConfig, seed: int, run_dir: Path) -> dict:
    seed_dir = run_dir / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train.__class__(**{**vars(cfg.train), "seed": seed})
    h = cfg.config_hash
    meta = {"config_hash": h, "seed": seed}
    metrics_path = seed_dir / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        def sink(rec: dict) -> None:
            fh.write(_json_line({"config_hash": h, "seed": seed, **rec}))
            fh.flush()

        try:
            bundle, _ = train(cfg.env, cfg.field, cfg.shaping, tcfg, cfg.reward_mode, on_metrics=sink, band=cfg.band)
        except TrainingDivergenceError as err:
            if err.last_good is not None:
                good = make_bundle(cfg.env.obs_dim, cfg.env.action_dim, cfg.env.action_limit, tcfg, with_buffer=False)
                _restore(good, err.last_good)
                checkpoint.save_checkpoint(good, seed_dir / "checkpoint_last_good.bin", meta)
            raise
    checkpoint.save_checkpoint(bundle, seed_dir / "checkpoint.bin", {**meta, "step_count": bundle.env_steps})
    episodes = evaluate(cfg, bundle, cfg.eval.episodes, seed)
    report = write_eval(cfg, episodes, seed_dir / "eval", {"seed": seed, "checkpoint": "checkpoint.bin"})
    return {"seed": seed, "env_steps": bundle.env_steps, "diagnostics": _summary(report)}


def _restore(bundle: AgentBundle, state: dict) -> None:
    for k, m in bundle.named_modules().items():
        m.load_state_dict(state["modules"][k])
    with torch.no_grad():
        bundle.log_alpha.copy_(state["log_alpha"])
    for k, o in bundle.named_optimizers().items():
        o.load_state_dict(state["optimizers"][k])
    bundle.env_steps, bundle.updates = state["env_steps"], state["updates"]


SUMMARY_KEYS = ("tangential_speed", "unsafe_rate", "angular_coverage", "off_manifold_mass", "no_sticking_value", "goal_rate")


def _summary(report: diagnostics.DiagnosticsReport) -> dict:
    d = report.to_dict()
    out = {k: d[k] for k in SUMMARY_KEYS}
    out.update({k: v for k, v in d["extra"].items() if k.startswith("frac_")})
    return out


def run_train(cfg: RunConfig, output_dir: Optional[str] = None) -> Path:
    """Train and evaluate every seed sequentially; returns the run directory."""
    run_dir = resolve_output_dir(cfg, output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(f"# config_hash: {cfg.config_hash}\n" + cfg.canonical_text)
    record = {
        "config_hash": cfg.config_hash,
        "name": cfg.name,
        "seeds": cfg.seeds,
        "artifact_version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "per_seed": [],
        "status": "running",
    }
    write_json(run_dir / "record.json", record)
    try:
        for seed in cfg.seeds:
            t0 = time.time()
            res = train_seed(cfg, seed, run_dir)
            res["wall_seconds"] = round(time.time() - t0, 3)
            record["per_seed"].append(res)
            write_json(run_dir / "record.json", record)
    except TrainingDivergenceError:
        record["status"] = "diverged"
        write_json(run_dir / "record.json", record)
        raise
    record["status"] = "complete"
    record["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    write_json(run_dir / "record.json", record)
    return run_dir


def read_config_snapshot(run_dir: Path) -> dict:
    import yaml

    return yaml.safe_load((Path(run_dir) / "config.yaml").read_text())


def seed_dirs(run_dir: Path) -> list[Path]:
    return sorted(p for p in Path(run_dir).glob("seed_*") if p.is_dir())


def median_summary(run_dir: Path, eval_subdir: str = "eval") -> dict:
    """Median over seeds of each headline diagnostic; raises FileNotFoundError if any is missing."""
    seeds = seed_dirs(run_dir)
    if not seeds:
        raise FileNotFoundError(f"{run_dir}: no seed directories")
    rows = []
    for sd in seeds:
        p = sd / eval_subdir / "diagnostics.json"
        if not p.is_file():
            raise FileNotFoundError(str(p))
        rows.append(json.loads(p.read_text()))
    out = {k: float(np.median([r[k] for r in rows])) for k in SUMMARY_KEYS}
    out["n_seeds"] = len(rows)
    out["per_seed"] = [{k: r[k] for k in SUMMARY_KEYS} | {"extra": r.get("extra", {})} for r in rows]
    return out
