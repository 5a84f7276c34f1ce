"""Command line entry point: ``vfexplore {train,eval,verify,compare,sweep}``.

Exit codes: 0 success, 1 a verification check failed, 2 bad input
(config, missing files), 3 training diverged.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from ..agent import checkpoint
from ..agent.sac import TrainingDivergenceError
from . import runner, verify
from .config import ConfigError, build, get_path, load, load_raw, parse_override, resolve, set_path

log = logging.getLogger("vfexplore")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_train(args, overrides: list[str]) -> int:
    try:
        cfg = load(args.config, overrides)
    except ConfigError as err:
        _err(str(err))
        return EXIT_INPUT
    try:
        run_dir = runner.run_train(cfg, args.output_dir)
    except TrainingDivergenceError as err:
        _err(f"training diverged: {err}; last good checkpoint retained")
        return EXIT_DIVERGED
    print(f"run written to {run_dir} (config {cfg.config_hash[:12]})")
    return EXIT_OK


def cmd_eval(args, overrides: list[str]) -> int:
    run_dir = Path(args.run_dir)
    try:
        cfg = build(load_raw(run_dir / "config.yaml"))
    except ConfigError as err:
        _err(str(err))
        return EXIT_INPUT
    train_seed = cfg.seeds[0] if args.train_seed is None else args.train_seed
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / f"seed_{train_seed}" / "checkpoint.bin"
    if not ckpt.is_absolute() and not ckpt.exists():
        ckpt = run_dir / ckpt
    if not ckpt.is_file():
        _err(f"checkpoint not found: {ckpt}")
        return EXIT_INPUT
    try:
        bundle = checkpoint.load_checkpoint(ckpt, expected_obs_dim=cfg.env.obs_dim, expected_act_dim=cfg.env.action_dim)
    except checkpoint.CheckpointError as err:
        _err(str(err))
        return EXIT_INPUT
    out = Path(args.output) if args.output else ckpt.parent / f"eval_{ckpt.stem}_n{args.n_episodes}_s{args.seed}"
    episodes = runner.evaluate(cfg, bundle, args.n_episodes, args.seed)
    report = runner.write_eval(cfg, episodes, out, {"seed": args.seed, "checkpoint": str(ckpt)})
    print(json.dumps({k: getattr(report, k) for k in runner.SUMMARY_KEYS}, sort_keys=True))
    print(f"evaluation written to {out}")
    return EXIT_OK


def cmd_verify(args, overrides: list[str]) -> int:
    try:
        cfg = load(args.config, overrides)
    except ConfigError as err:
        _err(str(err))
        return EXIT_INPUT
    results = verify.run_checks(cfg, args.seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("ALL PASS" if ok else "SOME CHECKS FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_compare(args, overrides: list[str]) -> int:
    a, b = Path(args.run_dir_vf), Path(args.run_dir_baseline)
    try:
        sa, sb = runner.median_summary(a), runner.median_summary(b)
        ca, cb = runner.read_config_snapshot(a), runner.read_config_snapshot(b)
    except (FileNotFoundError, OSError) as err:
        _err(f"missing diagnostics: {err}")
        return EXIT_INPUT
    if ca.get("field") != cb.get("field"):
        print("warning: runs use different field configurations; comparison proceeds", file=sys.stderr)
    rows = []
    print(f"{'metric':<20}{'vf':>14}{'baseline':>14}{'delta':>14}")
    for k in runner.SUMMARY_KEYS:
        d = sa[k] - sb[k]
        rows.append({"metric": k, "vf": sa[k], "baseline": sb[k], "delta": d})
        print(f"{k:<20}{sa[k]:>14.5g}{sb[k]:>14.5g}{d:>14.5g}")
    out = Path(args.output) if args.output else Path(f"compare_{a.name}_vs_{b.name}")
    out.mkdir(parents=True, exist_ok=True)
    runner.write_json(out / "comparison.json", {
        "run_vf": str(a), "run_baseline": str(b), "rows": rows,
        "config_hash_vf": _hash_of(a), "config_hash_baseline": _hash_of(b),
        "field_mismatch": ca.get("field") != cb.get("field"),
    })
    from ..diagnostics import format_grid, parse_grid

    for tag, rd in (("vf", a), ("baseline", b)):
        grids = [parse_grid((sd / "eval" / "visitation_grid.txt").read_text()) for sd in runner.seed_dirs(rd)]
        (out / f"visitation_grid_{tag}.txt").write_text(format_grid(sum(grids), {"config_hash": _hash_of(rd), "seeds": len(grids)}))
    print(f"comparison written to {out}")
    return EXIT_OK


def _hash_of(run_dir: Path) -> Optional[str]:
    try:
        return json.loads((run_dir / "record.json").read_text())["config_hash"]
    except (OSError, KeyError, ValueError):
        return None


def cmd_sweep(args, overrides: list[str]) -> int:
    try:
        raw = load_raw(args.config)
        for tok in overrides:
            k, v = parse_override(tok)
            raw = set_path(raw, k, v)
        base = resolve(raw)
        current = get_path(base, args.axis)
        if isinstance(current, (dict, list)):
            raise ConfigError(f"{args.axis}: sweep axis must be a scalar field")
        values = [yaml.safe_load(v) for v in args.values]
        cfgs = [build(set_path(raw, args.axis, v)) for v in values]
    except ConfigError as err:
        _err(str(err))
        return EXIT_INPUT
    root = Path(args.output_dir) if args.output_dir else runner.resolve_output_dir(cfgs[0] if cfgs else build(raw)) / "sweep"
    summary = []
    for v, cfg in zip(values, cfgs):
        sub = root / f"{args.axis}={v}"
        try:
            runner.run_train(cfg, str(sub))
        except TrainingDivergenceError as err:
            _err(f"{args.axis}={v}: training diverged: {err}")
            return EXIT_DIVERGED
        try:
            med = runner.median_summary(sub)
        except FileNotFoundError:
            med = {}
        summary.append({"value": v, "config_hash": cfg.config_hash, "run_dir": str(sub),
                        **{k: med.get(k) for k in runner.SUMMARY_KEYS}})
        print(f"{args.axis}={v}: {cfg.config_hash[:12]} -> {sub}")
    if summary:
        root.mkdir(parents=True, exist_ok=True)
        runner.write_json(root / "summary.json", {"axis": args.axis, "runs": summary})
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfexplore", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", allow_abbrev=False, help="train every seed of a config and evaluate the final policy")
    t.add_argument("config", help="YAML config path or built-in name (pure_vf, pure_baseline, goal_vf, goal_baseline)")
    t.add_argument("--output-dir", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", allow_abbrev=False, help="roll out a frozen checkpoint")
    e.add_argument("run_dir")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--n-episodes", type=int, default=32)
    e.add_argument("--seed", type=int, default=0, help="evaluation rollout seed")
    e.add_argument("--train-seed", type=int, default=None, help="which seed_<k> checkpoint (default: first seed)")
    e.add_argument("--output", default=None)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", allow_abbrev=False, help="run the shaping-theory check suite")
    v.add_argument("config")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", allow_abbrev=False, help="side-by-side diagnostics of two runs")
    c.add_argument("run_dir_vf")
    c.add_argument("run_dir_baseline")
    c.add_argument("--output", default=None)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", allow_abbrev=False, help="one run per value of a scalar config field")
    s.add_argument("config")
    s.add_argument("axis", help="dotted config path, e.g. shaping.u_mid")
    s.add_argument("values", nargs="*")
    s.add_argument("--output-dir", default=None)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args, rest = parser.parse_known_args(argv)
    bad = [r for r in rest if not (r.startswith("--") and "=" in r)]
    if bad:
        parser.error(f"unrecognized arguments: {' '.join(bad)}")
    if args.command in ("eval", "compare") and rest:
        parser.error(f"{args.command} takes no config overrides")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args, rest)


if __name__ == "__main__":
    sys.exit(main())
