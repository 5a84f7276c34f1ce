"""Vector-field shaping reward, its potential, and the state-based baseline.

The shaping reward for a step ``s -> s_next`` with ``delta = s_next - s`` is::

    c_grad * alpha(U(s)) * <grad U(s), delta> + c_rot * beta(U(s)) * <W grad U(s), delta>

with ``alpha(u) = sign(u_mid - u) tanh(|u - u_mid|)``, ``beta(u) = 1 - |tanh(u - u_mid)|``
and ``W`` skew-symmetric. All functions accept single points or ``(n, d)`` batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .oracle import InvalidInputError, UncertaintyField


@dataclass(frozen=True)
class SkewGenerator:
    """Constant d x d matrix applied to grad U to get a level-set tangent.

    Use the constructors; they produce exactly skew-symmetric matrices.
    Direct construction accepts any square matrix so that a corrupted
    generator can be fed to the verification suite.
    """

    matrix: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInputError(f"skew generator must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def symplectic(cls, orientation: int = 1) -> "SkewGenerator":
        """``orientation * [[0, 1], [-1, 0]]``; +1 favours counter-clockwise motion around a bump."""
        if orientation not in (1, -1):
            raise InvalidInputError("orientation must be +1 or -1")
        return cls.from_upper([float(orientation)], 2)

    @classmethod
    def from_upper(cls, upper: Sequence[float], dimension: int) -> "SkewGenerator":
        """Build from the strictly-upper-triangular entries in row-major order."""
        iu = np.triu_indices(dimension, k=1)
        if len(upper) != len(iu[0]):
            raise InvalidInputError(
                f"need {len(iu[0])} upper-triangular entries for d={dimension}, got {len(upper)}"
            )
        m = np.zeros((dimension, dimension))
        m[iu] = np.asarray(upper, dtype=float)
        return cls(m - m.T)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_skew(self) -> bool:
        return bool(np.array_equal(self.matrix + self.matrix.T, np.zeros_like(self.matrix)))


@dataclass(frozen=True)
class ShapingConfig:
    u_mid: float
    w: SkewGenerator = field(default_factory=SkewGenerator.symplectic)
    c_grad: float = 1.0
    c_rot: float = 1.0
    lambda_unsafe: float = 100.0
    eps_unsafe: float = 0.1

    def __post_init__(self) -> None:
        for name in ("c_grad", "c_rot", "lambda_unsafe", "eps_unsafe"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")


def alpha(cfg: ShapingConfig, u_s):
    """Signed attraction weight; zero exactly on the target level."""
    diff = np.asarray(u_s, dtype=float) - cfg.u_mid
    out = np.sign(-diff) * np.tanh(np.abs(diff))
    return float(out) if out.ndim == 0 else out


def beta(cfg: ShapingConfig, u_s):
    diff = np.asarray(u_s, dtype=float) - cfg.u_mid
    out = 1.0 - np.abs(np.tanh(diff))
    return float(out) if out.ndim == 0 else out


def rotational_field(cfg: ShapingConfig, grad_u) -> np.ndarray:
    g = np.asarray(grad_u, dtype=float)
    if g.shape[-1] != cfg.w.dimension:
        raise InvalidInputError(f"gradient dimension {g.shape[-1]} != W dimension {cfg.w.dimension}")
    return g @ cfg.w.matrix.T


def _check_pair(field: UncertaintyField, s, s_next) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    s_next = np.asarray(s_next, dtype=float)
    if s.shape != s_next.shape or s.shape[-1] != field.dimension:
        raise InvalidInputError(f"state shapes {s.shape} / {s_next.shape} do not match dimension {field.dimension}")
    return s, s_next


def shaping_reward(cfg: ShapingConfig, field: UncertaintyField, s, s_next):
    """Return ``(total, grad_term, rot_term)`` for one step or a batch of steps."""
    s, s_next = _check_pair(field, s, s_next)
    delta = s_next - s
    u = field.value(s)
    g = field.gradient(s)
    grad_term = cfg.c_grad * alpha(cfg, u) * np.sum(g * delta, axis=-1)
    rot_term = cfg.c_rot * beta(cfg, u) * np.sum(rotational_field(cfg, g) * delta, axis=-1)
    total = grad_term + rot_term
    if np.ndim(total) == 0:
        return float(total), float(grad_term), float(rot_term)
    return total, grad_term, rot_term


def reward_gradient(cfg: ShapingConfig, field: UncertaintyField, s) -> np.ndarray:
    """Derivative of ``shaping_reward(s, .)`` with respect to ``s_next`` (constant in ``s_next``)."""
    u = field.value(s)
    g = field.gradient(s)
    a = np.asarray(alpha(cfg, u))[..., None]
    b = np.asarray(beta(cfg, u))[..., None]
    return cfg.c_grad * a * g + cfg.c_rot * b * rotational_field(cfg, g)


def _logcosh(x):
    ax = np.abs(np.asarray(x, dtype=float))
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def psi(cfg: ShapingConfig, u_s):
    """Shaping potential ``log cosh(|u - u_mid|)``, stable for large arguments."""
    out = _logcosh(np.asarray(u_s, dtype=float) - cfg.u_mid)
    return float(out) if out.ndim == 0 else out


def decomposition_residual(cfg: ShapingConfig, field: UncertaintyField, s, s_next):
    """Remainder left after writing the unscaled attraction term as a potential drop.

    ``alpha(s) <grad U(s), delta> + (psi(s_next) - psi(s))``; second order in ``||delta||``.
    """
    s, s_next = _check_pair(field, s, s_next)
    delta = s_next - s
    u = field.value(s)
    lin = alpha(cfg, u) * np.sum(field.gradient(s) * delta, axis=-1)
    out = lin + (psi(cfg, field.value(s_next)) - psi(cfg, u))
    return float(out) if np.ndim(out) == 0 else out


def baseline_reward(cfg: ShapingConfig, field: UncertaintyField, s_next):
    """State-based intrinsic reward ``U(s')`` minus the unsafe-entry penalty (strict inequality)."""
    u = field.value(s_next)
    out = u - cfg.lambda_unsafe * (np.asarray(u) > cfg.u_mid + cfg.eps_unsafe)
    return float(out) if np.ndim(out) == 0 else out


def closed_loop_integrals(cfg: ShapingConfig, field: UncertaintyField, loop) -> tuple[float, float]:
    """Accumulated attraction and rotation terms around a closed polygon.

    ``loop`` is a sequence of points whose last entry equals the first.
    """
    pts = np.asarray(loop, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != field.dimension or len(pts) < 1:
        raise InvalidInputError("loop must be a non-empty (n, d) array")
    if not np.array_equal(pts[0], pts[-1]):
        raise InvalidInputError("loop is not closed: last point must equal the first")
    if len(pts) == 1:
        return 0.0, 0.0
    _, grad_terms, rot_terms = shaping_reward(cfg, field, pts[:-1], pts[1:])
    return float(np.sum(grad_terms)), float(np.sum(rot_terms))


def gradient_line_integral(field: UncertaintyField, loop) -> float:
    """Left-point sum of ``<grad U, delta>`` around a polygon (pure gradient field)."""
    pts = np.asarray(loop, dtype=float)
    return float(np.sum(field.gradient(pts[:-1]) * np.diff(pts, axis=0)))


def circle_loop(center, radius: float, n: int, clockwise: bool = False) -> np.ndarray:
    """``n`` segments around a circle, closed (first point repeated)."""
    theta = np.arange(n + 1) * (2.0 * np.pi / n)
    if clockwise:
        theta = -theta
    pts = np.asarray(center, dtype=float) + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts[-1] = pts[0]
    return pts
