"""Empirical checks on recorded transitions: manifold speed, safety, coverage, concentration."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import shaping
from .boxworld import EnvConfig, Transition
from .oracle import InvalidInputError, UncertaintyField, curvature_bound
from .shaping import ShapingConfig

log = logging.getLogger(__name__)


class UnsupportedConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BandSpec:
    u_mid: float
    delta_band: float
    eps_unsafe: float

    def __post_init__(self) -> None:
        if not self.delta_band > 0:
            raise InvalidInputError("delta_band must be > 0")


@dataclass
class Flagged:
    """A scalar diagnostic plus the reasons it may be degenerate."""

    value: float
    flags: list[str] = field(default_factory=list)

    def __float__(self) -> float:
        return float(self.value)


def _arrays(transitions: Sequence[Transition]) -> tuple[np.ndarray, np.ndarray]:
    if len(transitions) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    s = np.array([t.s for t in transitions], dtype=float)
    s_next = np.array([t.s_next for t in transitions], dtype=float)
    return s, s_next


def in_band(field: UncertaintyField, cfg: BandSpec, states) -> np.ndarray:
    states = np.asarray(states, dtype=float).reshape(-1, field.dimension)
    if len(states) == 0:
        return np.zeros(0, dtype=bool)
    return np.abs(np.atleast_1d(field.value(states)) - cfg.u_mid) < cfg.delta_band


def tangential_speed(field: UncertaintyField, cfg: BandSpec, transitions, w: shaping.SkewGenerator) -> Flagged:
    s, s_next = _arrays(transitions)
    mask = in_band(field, cfg, s)
    if not mask.any():
        return Flagged(0.0, ["no in-band transitions"])
    tang = np.atleast_2d(field.gradient(s[mask])) @ w.matrix.T
    norm = np.linalg.norm(tang, axis=1)
    ok = norm >= 1e-12
    flags = []
    if not ok.all():
        log.warning("%d in-band states with vanishing tangent excluded", int((~ok).sum()))
        flags.append(f"excluded {int((~ok).sum())} degenerate-gradient states")
    if not ok.any():
        return Flagged(0.0, flags + ["no usable in-band transitions"])
    delta = (s_next - s)[mask][ok]
    proj = np.sum(delta * tang[ok], axis=1) / norm[ok]
    return Flagged(float(proj.mean()), flags)


def unsafe_rate(field: UncertaintyField, cfg: BandSpec, transitions) -> Flagged:
    _, s_next = _arrays(transitions)
    if len(s_next) == 0:
        return Flagged(0.0, ["empty input"])
    u = np.atleast_1d(field.value(s_next))
    return Flagged(float(np.mean(u > cfg.u_mid + cfg.eps_unsafe)))


def angular_coverage(
    field: UncertaintyField,
    cfg: BandSpec,
    states,
    n_bins: int = 16,
    bump: Optional[int] = None,
) -> Flagged:
    """Fraction of equal angular sectors around a bump centre hit by in-band states.

    With several bumps the caller must pick one; only in-band states whose
    dominant bump is the selected one are counted.
    """
    if n_bins < 2:
        raise InvalidInputError("n_bins must be >= 2")
    nb = len(field.bumps)
    if nb == 0:
        raise UnsupportedConfigurationError("angular coverage needs at least one bump")
    if bump is None:
        if nb > 1:
            raise UnsupportedConfigurationError("multi-bump field: select a bump for angular coverage")
        bump = 0
    states = np.asarray(states, dtype=float).reshape(-1, field.dimension)
    mask = in_band(field, cfg, states)
    if nb > 1 and mask.any():
        mask[mask] = np.atleast_1d(field.dominant_bump(states[mask])) == bump
    if not mask.any():
        return Flagged(0.0, ["no in-band states"])
    rel = states[mask] - np.asarray(field.bumps[bump].center)
    ang = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2.0 * np.pi)
    bins = np.minimum((ang / (2.0 * np.pi) * n_bins).astype(int), n_bins - 1)
    return Flagged(len(np.unique(bins)) / n_bins)


def off_manifold_mass(field: UncertaintyField, cfg: BandSpec, states, eps: float) -> Flagged:
    if not eps > 0:
        raise InvalidInputError("eps must be > 0")
    states = np.asarray(states, dtype=float).reshape(-1, field.dimension)
    if len(states) == 0:
        return Flagged(0.0, ["empty input"])
    u = np.atleast_1d(field.value(states))
    return Flagged(float(np.mean(np.abs(u - cfg.u_mid) >= eps)))


def no_sticking_value(field: UncertaintyField, shaping_cfg: ShapingConfig, transitions) -> Flagged:
    """Mean of ``beta(U(s)) <W grad U(s), delta>`` over all transitions."""
    s, s_next = _arrays(transitions)
    if len(s) == 0:
        return Flagged(0.0, ["empty input"])
    unit = shaping.ShapingConfig(shaping_cfg.u_mid, shaping_cfg.w, 0.0, 1.0)
    _, _, rot = shaping.shaping_reward(unit, field, s, s_next)
    return Flagged(float(np.mean(rot)))


def visitation_grid(states, resolution: int) -> np.ndarray:
    if resolution < 2:
        raise InvalidInputError("resolution must be >= 2")
    states = np.asarray(states, dtype=float).reshape(-1, 2)
    idx = np.clip((states * resolution).astype(int), 0, resolution - 1)
    grid = np.zeros((resolution, resolution), dtype=np.int64)
    # row = y cell, column = x cell
    np.add.at(grid, (idx[:, 1], idx[:, 0]), 1)
    return grid


def format_grid(grid: np.ndarray, header: dict) -> str:
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines.append(f"resolution {grid.shape[0]}")
    lines.extend(" ".join(str(int(c)) for c in row) for row in grid)
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> np.ndarray:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    res = int(rows[0].split()[1])
    grid = np.array([[int(c) for c in ln.split()] for ln in rows[1:1 + res]], dtype=np.int64)
    if grid.shape != (res, res):
        raise ValueError("grid file does not match its resolution header")
    return grid


def episode_states(transitions: Sequence[Transition]) -> np.ndarray:
    """Visited states: every ``s`` plus the final ``s_next``."""
    if not transitions:
        return np.zeros((0, 2))
    return np.vstack([np.array([t.s for t in transitions]), transitions[-1].s_next[None, :]])


def in_band_steps_before_goal(field: UncertaintyField, cfg: BandSpec, transitions, bump: Optional[int] = None) -> int:
    """Number of steps starting in the band (optionally a given bump's band) before the goal is reached."""
    count = 0
    for tr in transitions:
        if tr.reached_goal:
            break
        if abs(tr.u_s - cfg.u_mid) < cfg.delta_band:
            if bump is None or field.dominant_bump(tr.s) == bump:
                count += 1
    return count


@dataclass
class DiagnosticsReport:
    tangential_speed: float
    unsafe_rate: float
    angular_coverage: float
    off_manifold_mass: float
    no_sticking_value: float
    visitation_grid: list
    goal_rate: float = 0.0
    n_transitions: int = 0
    n_episodes: int = 0
    flags: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(
    field: UncertaintyField,
    band: BandSpec,
    shaping_cfg: ShapingConfig,
    episodes: Sequence[Sequence[Transition]],
    resolution: int = 20,
    n_bins: int = 16,
) -> DiagnosticsReport:
    transitions = [tr for ep in episodes for tr in ep]
    states = np.vstack([episode_states(ep) for ep in episodes if ep]) if transitions else np.zeros((0, 2))
    flags: dict = {}
    ts = tangential_speed(field, band, transitions, shaping_cfg.w)
    ur = unsafe_rate(field, band, transitions)
    om = off_manifold_mass(field, band, states, band.delta_band)
    ns = no_sticking_value(field, shaping_cfg, transitions)
    extra: dict = {}
    if len(field.bumps) == 1:
        cov = angular_coverage(field, band, states, n_bins)
    elif len(field.bumps) > 1:
        per = [angular_coverage(field, band, states, n_bins, bump=i) for i in range(len(field.bumps))]
        cov = Flagged(max(p.value for p in per), [f for p in per for f in p.flags])
        extra["angular_coverage_per_bump"] = [p.value for p in per]
    else:
        cov = Flagged(0.0, ["no bumps"])
    for name, val in (("tangential_speed", ts), ("unsafe_rate", ur), ("angular_coverage", cov),
                      ("off_manifold_mass", om), ("no_sticking_value", ns)):
        if val.flags:
            flags[name] = val.flags
    n_ep = len(episodes)
    goal_rate = float(np.mean([any(t.reached_goal for t in ep) for ep in episodes])) if n_ep else 0.0
    if n_ep:
        steps = [in_band_steps_before_goal(field, band, ep) for ep in episodes]
        extra["in_band_steps_before_goal"] = steps
        extra["frac_episodes_ge10_in_band"] = float(np.mean([k >= 10 for k in steps]))
        if len(field.bumps) > 1:
            extra["frac_episodes_ge10_in_band_per_bump"] = [
                float(np.mean([in_band_steps_before_goal(field, band, ep, bump=i) >= 10 for ep in episodes]))
                for i in range(len(field.bumps))
            ]
    grid = visitation_grid(states, resolution)
    return DiagnosticsReport(
        tangential_speed=float(ts), unsafe_rate=float(ur), angular_coverage=float(cov),
        off_manifold_mass=float(om), no_sticking_value=float(ns), visitation_grid=grid.tolist(),
        goal_rate=goal_rate, n_transitions=len(transitions), n_episodes=n_ep, flags=flags, extra=extra,
    )


# --- scripted manifold-following reference -------------------------------------------------


def reference_controller(
    field: UncertaintyField,
    shaping_cfg: ShapingConfig,
    env_cfg: EnvConfig,
    speed: float = 0.06,
    gain: float = 1.0,
    far_gradient: float = 0.05,
):
    """Policy that moves along the unit tangent and Newton-corrects U toward u_mid.

    When the gradient is too weak to steer by (far from every bump) it heads for
    the nearest bump centre instead.
    """
    lim = env_cfg.action_limit
    centers = field.centers

    def policy(obs: np.ndarray) -> np.ndarray:
        pos = np.asarray(obs[:2], dtype=float)
        g = field.gradient(pos)
        gn = float(np.linalg.norm(g))
        if gn < far_gradient:
            if len(centers) == 0:
                return np.zeros(2)
            c = centers[np.argmin(np.linalg.norm(centers - pos, axis=1))]
            d = c - pos
            return np.clip(d / max(np.linalg.norm(d), 1e-12) * lim, -lim, lim)
        n_hat = g / gn
        t = g @ shaping_cfg.w.matrix.T
        t_hat = t / max(np.linalg.norm(t), 1e-12)
        u = field.value(pos)
        normal_step = np.clip(gain * (shaping_cfg.u_mid - u) / gn, -lim, lim)
        return np.clip(speed * t_hat + normal_step * n_hat, -lim, lim)

    return policy


# --- concentration bound ---------------------------------------------------------------------


def concentration_bound_report(
    field: UncertaintyField,
    band: BandSpec,
    shaping_cfg: ShapingConfig,
    run_vf: Sequence[Transition],
    run_reference: Sequence[Transition],
    eps: float,
    curvature: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """Evaluate both sides of the near-manifold concentration bound with empirical surrogates.

    ``run_*`` are flat transition lists. Status is PASS/FAIL when the
    tangential-speed surrogate is positive, INCONCLUSIVE otherwise.
    """
    if curvature is None:
        curvature = curvature_bound(field, (0.0, 1.0), 20000, rng or np.random.default_rng(0), u_mid=band.u_mid)
    s_vf, sn_vf = _arrays(run_vf)
    s_ref, sn_ref = _arrays(run_reference)
    mass = float(off_manifold_mass(field, band, s_vf, eps)) if len(s_vf) else 0.0

    def rot_inner(s, sn):
        if len(s) == 0:
            return np.zeros(0)
        return np.sum(np.atleast_2d(field.gradient(s)) @ shaping_cfg.w.matrix.T * (sn - s), axis=1)

    all_rot = np.concatenate([np.abs(rot_inner(s_vf, sn_vf)), np.abs(rot_inner(s_ref, sn_ref))])
    v_max = float(all_rot.max()) if len(all_rot) else 0.0
    ref_band = [t for t, m in zip(run_reference, in_band(field, band, s_ref)) if m]
    v0 = float(no_sticking_value(field, shaping_cfg, ref_band))
    rho_vf = float(np.mean([t.base_reward for t in run_vf])) if run_vf else 0.0
    rho_ref = float(np.mean([t.base_reward for t in run_reference])) if run_reference else 0.0

    def taylor(s, sn):
        return 0.5 * curvature * float(np.mean(np.sum((sn - s) ** 2, axis=1))) if len(s) else 0.0

    e_vf, e_ref = taylor(s_vf, sn_vf), taylor(s_ref, sn_ref)
    b_eps = 1.0 - math.tanh(eps)
    denom = (1.0 - b_eps) * v_max
    numer = (rho_vf - rho_ref) + (v_max - v0) + e_vf + e_ref
    flags = []
    bound = numer / denom if denom > 0 else math.inf
    if not math.isfinite(bound) or bound >= 1.0:
        flags.append("bound is vacuous (>= 1)")
    if v0 <= 0:
        status = "INCONCLUSIVE"
        flags.append("reference tangential surrogate v0 <= 0")
    else:
        status = "PASS" if mass <= bound else "FAIL"
    return {
        "status": status,
        "measured_off_manifold_mass": mass,
        "bound": bound if math.isfinite(bound) else None,
        "eps": eps,
        "b_eps": b_eps,
        "v_max_hat": v_max,
        "v0_hat": v0,
        "base_reward_vf": rho_vf,
        "base_reward_reference": rho_ref,
        "taylor_error_vf": e_vf,
        "taylor_error_reference": e_ref,
        "curvature_bound": curvature,
        "flags": flags,
    }
