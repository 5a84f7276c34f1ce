"""Run configuration: YAML in, validated dataclasses, canonical text and hash out."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from ..agent.sac import TrainConfig
from ..boxworld import EnvConfig, RewardMode, TimeEmbedding
from ..diagnostics import BandSpec
from ..oracle import InvalidInputError, UncertaintyField
from ..shaping import ShapingConfig, SkewGenerator

BUILTIN_CONFIGS = ("pure_vf", "pure_baseline", "goal_vf", "goal_baseline")
HASH_EXCLUDED = ("output_dir",)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 32
    trajectory_episodes: int = 10
    deterministic: bool = False
    grid_resolution: int = 20
    n_bins: int = 16


@dataclass
class RunConfig:
    name: str
    env: EnvConfig
    field: UncertaintyField
    shaping: ShapingConfig
    train: TrainConfig
    reward_mode: RewardMode
    band: BandSpec
    eval: EvalConfig
    seeds: list[int]
    output_dir: str
    raw: dict = dataclasses.field(repr=False, default_factory=dict)

    @property
    def canonical_text(self) -> str:
        return canonical_text(self.raw)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


DEFAULTS: dict[str, Any] = {
    "name": "run",
    "reward_mode": "vf",
    "seeds": [0],
    "output_dir": "runs/run",
    "env": {
        "goal_center": [0.9, 0.9],
        "goal_radius": 0.05,
        "noise_scale": 0.01,
        "horizon": 60,
        "start_box": [0.05, 0.2],
        "step_penalty": 0.01,
        "distance_reward_scale": 10.0,
        "goal_bonus": 20.0,
        "action_limit": 0.1,
        "time_embedding": "none",
    },
    "field": {"dimension": 2, "bumps": [{"amplitude": 1.0, "center": [0.5, 0.5], "sigma": 0.2}]},
    "shaping": {
        "u_mid": None,  # 0.5 * smallest amplitude
        "orientation": 1,
        "w_upper": None,
        "w_matrix": None,
        "c_grad": 1.0,
        "c_rot": 1.0,
        "lambda_unsafe": 100.0,
        "eps_unsafe": None,  # 0.1 * smallest amplitude
    },
    "train": {f.name: f.default for f in dataclasses.fields(TrainConfig)},
    "diagnostics": {"delta_band": None, "eps_unsafe": None},
    "eval": {f.name: f.default for f in dataclasses.fields(EvalConfig)},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[k], dict) and base[k] is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _plain(x):
    """Normalise YAML values to canonical JSON-like types (tuples -> lists, ints kept)."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int):
        return int(x)
    if isinstance(x, float):
        return float(x)
    return x


def resolve(raw: dict) -> dict:
    """Fill defaults and derived values so equal configurations have equal text."""
    merged = _merge(DEFAULTS, _plain(raw or {}))
    bumps = merged["field"]["bumps"] or []
    try:
        a_min = min(float(b["amplitude"]) for b in bumps) if bumps else 1.0
    except (KeyError, TypeError) as err:
        raise ConfigError(f"field.bumps: each bump needs amplitude, center, sigma ({err})") from err
    sh = merged["shaping"]
    if sh["u_mid"] is None:
        sh["u_mid"] = 0.5 * a_min
    if sh["eps_unsafe"] is None:
        sh["eps_unsafe"] = 0.1 * a_min
    dg = merged["diagnostics"]
    if dg["delta_band"] is None:
        dg["delta_band"] = 0.1 * a_min
    if dg["eps_unsafe"] is None:
        dg["eps_unsafe"] = sh["eps_unsafe"]
    # numeric fields are stored as floats so that 1 and 1.0 hash identically
    for sect, keys in (
        ("shaping", ("u_mid", "c_grad", "c_rot", "lambda_unsafe", "eps_unsafe")),
        ("diagnostics", ("delta_band", "eps_unsafe")),
        ("env", ("goal_radius", "noise_scale", "step_penalty", "distance_reward_scale", "goal_bonus", "action_limit")),
        ("train", ("actor_lr", "critic_lr", "alpha_lr", "gamma", "tau", "max_grad_norm", "initial_alpha", "target_entropy")),
    ):
        for k in keys:
            v = merged[sect][k]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{sect}.{k}: expected a number, got {v!r}")
            merged[sect][k] = float(v)
    return _plain(merged)


def canonical_text(resolved: dict) -> str:
    return yaml.safe_dump(resolved, sort_keys=True, default_flow_style=False)


def config_hash(resolved: dict) -> str:
    payload = {k: v for k, v in resolved.items() if k not in HASH_EXCLUDED}
    return hashlib.sha256(canonical_text(payload).encode()).hexdigest()


def build(raw: dict) -> RunConfig:
    """Validate and construct every sub-configuration."""
    r = resolve(raw)
    where = "?"
    try:
        where = "env"
        env_kw = dict(r["env"])
        env_kw["goal_center"] = tuple(env_kw["goal_center"])
        env_kw["start_box"] = tuple(env_kw["start_box"])
        env_kw["time_embedding"] = TimeEmbedding(env_kw["time_embedding"])
        env = EnvConfig(**env_kw)
        where = "field"
        fld = UncertaintyField.from_specs(r["field"]["bumps"], r["field"]["dimension"])
        where = "shaping"
        sh = r["shaping"]
        if sh["w_matrix"] is not None:
            w = SkewGenerator(sh["w_matrix"])
        elif sh["w_upper"] is not None:
            w = SkewGenerator.from_upper(sh["w_upper"], fld.dimension)
        else:
            if fld.dimension != 2:
                raise ConfigError("shaping.w_upper: required when field.dimension != 2")
            w = SkewGenerator.symplectic(int(sh["orientation"]))
        if w.dimension != fld.dimension:
            raise ConfigError(f"shaping: W dimension {w.dimension} != field dimension {fld.dimension}")
        shaping_cfg = ShapingConfig(sh["u_mid"], w, sh["c_grad"], sh["c_rot"], sh["lambda_unsafe"], sh["eps_unsafe"])
        where = "train"
        train = TrainConfig(**r["train"])
        where = "reward_mode"
        mode = RewardMode(r["reward_mode"])
        where = "diagnostics"
        band = BandSpec(shaping_cfg.u_mid, r["diagnostics"]["delta_band"], r["diagnostics"]["eps_unsafe"])
        where = "eval"
        ev = EvalConfig(**r["eval"])
        if ev.episodes < 0 or ev.trajectory_episodes < 0:
            raise ConfigError("eval: episode counts must be nonnegative")
        where = "seeds"
        seeds = [int(s) for s in r["seeds"]]
        if not seeds:
            raise ConfigError("seeds: must be a non-empty list")
    except ConfigError:
        raise
    except (InvalidInputError, ValueError, TypeError, KeyError) as err:
        raise ConfigError(f"{where}: {err}") from err
    return RunConfig(
        name=str(r["name"]), env=env, field=fld, shaping=shaping_cfg, train=train, reward_mode=mode,
        band=band, eval=ev, seeds=seeds, output_dir=str(r["output_dir"]), raw=r,
    )


def parse_override(token: str) -> tuple[str, Any]:
    """``--a.b=value`` or ``a.b=value`` -> (``a.b``, parsed YAML scalar/list)."""
    body = token[2:] if token.startswith("--") else token
    if "=" not in body:
        raise ConfigError(f"override {token!r}: expected --path.to.field=value")
    key, val = body.split("=", 1)
    return key, yaml.safe_load(val) if val != "" else None


def set_path(raw: dict, dotted: str, value: Any) -> dict:
    out = copy.deepcopy(raw)
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {p} is not a mapping")
    node[parts[-1]] = value
    return out


def get_path(resolved: dict, dotted: str) -> Any:
    node: Any = resolved
    for p in dotted.split("."):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"{dotted}: no such field")
        node = node[p]
    return node


def load_raw(path) -> dict:
    """Read a config file, or a built-in config by name (``pure_vf``...)."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN_CONFIGS:
        text = resources.files("vfexplore.configs").joinpath(f"{path}.yaml").read_text()
    else:
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = p.read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load(path, overrides: Optional[list[str]] = None) -> RunConfig:
    raw = load_raw(path)
    for tok in overrides or []:
        k, v = parse_override(tok)
        raw = set_path(raw, k, v)
    return build(raw)
