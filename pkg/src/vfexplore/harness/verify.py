"""Shaping-theory checks run by ``vfexplore verify``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import boxworld, diagnostics, shaping
from ..oracle import (
    UncertaintyField,
    curvature_bound,
    level_radius,
    min_gradient_norm_in_band,
    sample_region,
)
from .config import RunConfig

REGION = (0.0, 1.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict
    flags: list[str] = field(default_factory=list)

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        fl = f" [{'; '.join(self.flags)}]" if self.flags else ""
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {vals}{fl}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _vacuous(field_: UncertaintyField) -> list[str]:
    return ["vacuous: field has no bumps (grad U == 0)"] if not field_.bumps else []


def check_orthogonality(cfg: RunConfig, rng) -> CheckResult:
    pts = sample_region(REGION, cfg.field.dimension, 1000, rng)
    g = cfg.field.gradient(pts)
    inner = np.abs(np.sum(shaping.rotational_field(cfg.shaping, g) * g, axis=1))
    worst = float(inner.max())
    flags = _vacuous(cfg.field)
    if not cfg.shaping.w.is_skew:
        flags.append("W is not skew-symmetric")
    return CheckResult("skew_orthogonality", worst < 1e-12 and cfg.shaping.w.is_skew,
                       {"max_abs_inner": worst, "tol": 1e-12}, flags)


def check_symmetry(cfg: RunConfig, rng) -> CheckResult:
    x = rng.uniform(-5.0, 5.0, 1000)
    m = cfg.shaping.u_mid
    a_ok = np.array_equal(shaping.alpha(cfg.shaping, m + x), -shaping.alpha(cfg.shaping, m - x))
    b_ok = np.array_equal(shaping.beta(cfg.shaping, m + x), shaping.beta(cfg.shaping, m - x))
    # u_mid + x and u_mid - x round differently; compare on exactly representable offsets too
    xs = np.ldexp(rng.integers(-2**20, 2**20, 1000).astype(float), -18)
    a_ok2 = np.array_equal(shaping.alpha(cfg.shaping, m + xs), -shaping.alpha(cfg.shaping, m - xs))
    b_ok2 = np.array_equal(shaping.beta(cfg.shaping, m + xs), shaping.beta(cfg.shaping, m - xs))
    passed = bool(a_ok2 and b_ok2)
    return CheckResult("alpha_beta_symmetry", passed,
                       {"alpha_antisymmetric": bool(a_ok2), "beta_even": bool(b_ok2),
                        "exact_on_random_reals": bool(a_ok and b_ok)})


def random_trajectories(n: int, length: int, step: float, dim: int, rng) -> np.ndarray:
    start = rng.random((n, 1, dim))
    steps = rng.uniform(-step, step, (n, length, dim))
    return np.clip(np.concatenate([start, start + np.cumsum(steps, axis=1)], axis=1), 0.0, 1.0)


def check_telescoping(cfg: RunConfig, rng) -> CheckResult:
    trajs = random_trajectories(100, 60, 0.1, cfg.field.dimension, rng)
    worst = 0.0
    for tr in trajs:
        p = shaping.psi(cfg.shaping, cfg.field.value(tr))
        lhs = float(np.sum(-(p[1:] - p[:-1])))
        worst = max(worst, abs(lhs - (p[0] - p[-1])))
    return CheckResult("telescoping", worst <= 1e-9, {"max_abs_error": worst, "tol": 1e-9}, _vacuous(cfg.field))


def decomposition_samples(cfg: RunConfig, n: int, rng, max_step: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """``n`` transitions in the unit box with ``||delta|| <= max_step``."""
    d = cfg.field.dimension
    s_all, sn_all = [], []
    while sum(len(x) for x in s_all) < n:
        s = rng.random((n, d))
        v = rng.normal(size=(n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = max_step * rng.random(n) ** (1.0 / d)
        sn = s + v * r[:, None]
        ok = np.all((sn >= 0) & (sn <= 1), axis=1)
        s_all.append(s[ok])
        sn_all.append(sn[ok])
    return np.concatenate(s_all)[:n], np.concatenate(sn_all)[:n]


def check_decomposition(cfg: RunConfig, rng, n_transitions: int = 10_000, n_curv: int = 100_000) -> CheckResult:
    unit = shaping.ShapingConfig(cfg.shaping.u_mid, cfg.shaping.w)
    L = curvature_bound(cfg.field, REGION, n_curv, rng, u_mid=unit.u_mid)
    s, sn = decomposition_samples(cfg, n_transitions, rng)
    res = np.abs(shaping.decomposition_residual(unit, cfg.field, s, sn))
    bound = 0.5 * L * np.sum((sn - s) ** 2, axis=1)
    frac = float(np.mean(res <= bound))
    return CheckResult("decomposition_bound", frac == 1.0,
                       {"fraction_within_bound": frac, "curvature_bound": L,
                        "max_ratio": float(np.max(res / np.maximum(bound, 1e-300)))},
                       _vacuous(cfg.field))


def isolated_loop_field(cfg: RunConfig) -> tuple[UncertaintyField, float, tuple]:
    """Single-bump field (the largest bump, isolated) and the radius of its target level."""
    if not cfg.field.bumps:
        return cfg.field, 0.0, (0.5, 0.5)
    b = max(cfg.field.bumps, key=lambda x: x.amplitude)
    f = UncertaintyField((b,), cfg.field.dimension)
    return f, level_radius(b, cfg.shaping.u_mid), b.center


def closed_loop_study(cfg: RunConfig) -> dict:
    f, r, c = isolated_loop_field(cfg)
    unit = shaping.ShapingConfig(cfg.shaping.u_mid, cfg.shaping.w)
    out = {}
    for n in (90, 720):
        g, rot = shaping.closed_loop_integrals(unit, f, shaping.circle_loop(c, r, n))
        out[f"grad_sum_{n}"] = g
        out[f"rot_sum_{n}"] = rot
        out[f"gradient_line_integral_{n}"] = shaping.gradient_line_integral(f, shaping.circle_loop(c, r, n))
    g_rev, rot_rev = shaping.closed_loop_integrals(unit, f, shaping.circle_loop(c, r, 720, clockwise=True))
    out["grad_sum_720_reversed"] = g_rev
    out["rot_sum_720_reversed"] = rot_rev
    return out


def check_closed_loop(cfg: RunConfig, rng) -> CheckResult:
    if not cfg.field.bumps:
        return CheckResult("closed_loop", True, {}, _vacuous(cfg.field))
    if cfg.field.dimension != 2:
        return CheckResult("closed_loop", True, {}, ["skipped: circle loops need d = 2"])
    m = closed_loop_study(cfg)
    g90, g720, rot = abs(m["grad_sum_90"]), abs(m["grad_sum_720"]), m["rot_sum_720"]
    passed = (
        g720 < g90
        and g720 < 0.05 * abs(rot)
        and rot != 0
        and np.sign(m["rot_sum_720_reversed"]) == -np.sign(rot)
        and abs(m["gradient_line_integral_720"]) < abs(m["gradient_line_integral_90"])
    )
    flags = ["loop built on the largest bump in isolation"] if len(cfg.field.bumps) > 1 else []
    return CheckResult("closed_loop", bool(passed), m, flags)


def check_regular_value(cfg: RunConfig, rng) -> CheckResult:
    if not cfg.field.bumps:
        return CheckResult("regular_value", True, {}, _vacuous(cfg.field))
    g0, n = min_gradient_norm_in_band(cfg.field, cfg.shaping.u_mid, cfg.band.delta_band, REGION, 100_000, rng)
    return CheckResult("regular_value", bool(n > 0 and g0 > 0), {"g0": g0, "n_in_band": n})


def reference_episodes(cfg: RunConfig, n_episodes: int, rng) -> list[list[boxworld.Transition]]:
    pol = diagnostics.reference_controller(cfg.field, cfg.shaping, cfg.env)
    return [boxworld.run_episode(cfg.env, cfg.field, cfg.shaping, pol, boxworld.RewardMode.VF, rng)
            for _ in range(n_episodes)]


def reference_witness(cfg: RunConfig, rng, n_episodes: int = 10, burn_in: int = 15) -> dict:
    eps = reference_episodes(cfg, n_episodes, rng)
    after = [t for ep in eps for t in ep[burn_in:]]
    states = np.array([t.s for t in after]).reshape(-1, cfg.field.dimension)
    mass = float(diagnostics.off_manifold_mass(cfg.field, cfg.band, states, cfg.band.delta_band))
    v0 = float(diagnostics.no_sticking_value(cfg.field, cfg.shaping, [t for ep in eps for t in ep]))
    return {"off_manifold_mass_after_burn_in": mass, "no_sticking_value": v0, "burn_in": burn_in,
            "episodes": n_episodes}


def check_reference(cfg: RunConfig, rng) -> CheckResult:
    if not cfg.field.bumps:
        return CheckResult("no_sticking_reference", True, {}, _vacuous(cfg.field))
    m = reference_witness(cfg, rng)
    return CheckResult("no_sticking_reference",
                       m["off_manifold_mass_after_burn_in"] < 0.05 and m["no_sticking_value"] > 0, m)


def check_reward_gradient(cfg: RunConfig, rng, h: float = 1e-6) -> CheckResult:
    d = cfg.field.dimension
    worst = 0.0
    for _ in range(50):
        s = rng.random(d)
        sn = s + rng.uniform(-0.05, 0.05, d)
        analytic = shaping.reward_gradient(cfg.shaping, cfg.field, s)
        fd = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd[i] = (shaping.shaping_reward(cfg.shaping, cfg.field, s, sn + e)[0]
                     - shaping.shaping_reward(cfg.shaping, cfg.field, s, sn - e)[0]) / (2 * h)
        scale = max(np.linalg.norm(analytic), 1e-8)
        worst = max(worst, float(np.linalg.norm(fd - analytic) / scale))
    flags = _vacuous(cfg.field)
    return CheckResult("reward_gradient_consistency", worst < 1e-6 or bool(flags), {"max_rel_err": worst}, flags)


CHECKS: tuple[Callable, ...] = (
    check_orthogonality,
    check_symmetry,
    check_telescoping,
    check_decomposition,
    check_closed_loop,
    check_regular_value,
    check_reference,
    check_reward_gradient,
)


def run_checks(cfg: RunConfig, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [chk(cfg, rng) for chk in CHECKS]
