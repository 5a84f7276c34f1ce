"""Analytic uncertainty landscape built from Gaussian bumps.

The field is ``U(s) = sum_i A_i exp(-||s - c_i||^2 / (2 sigma_i^2))``. Value,
gradient and Hessian are exact and vectorised: every method accepts either a
single point of shape ``(d,)`` or a batch of shape ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised on malformed points, bumps or regions."""


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float
    center: tuple[float, ...]
    sigma: float

    def __post_init__(self) -> None:
        if not self.amplitude > 0:
            raise InvalidInputError(f"bump amplitude must be > 0, got {self.amplitude}")
        if not self.sigma > 0:
            raise InvalidInputError(f"bump sigma must be > 0, got {self.sigma}")
        if len(self.center) == 0:
            raise InvalidInputError("bump center must be non-empty")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dimension(self) -> int:
        return len(self.center)


@dataclass(frozen=True)
class UncertaintyField:
    """Sum of Gaussian bumps over R^d.

    An empty bump list is allowed and gives the constant-zero field; it is
    useful for degenerate-configuration checks.
    """

    bumps: tuple[GaussianBump, ...]
    dimension: int = 2
    _centers: np.ndarray = field(init=False, repr=False, compare=False)
    _amps: np.ndarray = field(init=False, repr=False, compare=False)
    _inv_var: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        bumps = tuple(self.bumps)
        object.__setattr__(self, "bumps", bumps)
        if self.dimension < 1:
            raise InvalidInputError("dimension must be positive")
        for b in bumps:
            if b.dimension != self.dimension:
                raise InvalidInputError(
                    f"bump center {b.center} does not have dimension {self.dimension}"
                )
        centers = np.array([b.center for b in bumps], dtype=float).reshape(len(bumps), self.dimension)
        object.__setattr__(self, "_centers", centers)
        object.__setattr__(self, "_amps", np.array([b.amplitude for b in bumps], dtype=float))
        object.__setattr__(self, "_inv_var", np.array([1.0 / b.sigma**2 for b in bumps], dtype=float))

    @classmethod
    def from_specs(cls, specs: Sequence[dict], dimension: Optional[int] = None) -> "UncertaintyField":
        """Build from a list of ``{amplitude, center, sigma}`` mappings."""
        bumps = tuple(
            GaussianBump(float(b["amplitude"]), tuple(b["center"]), float(b["sigma"])) for b in specs
        )
        if dimension is None:
            dimension = bumps[0].dimension if bumps else 2
        return cls(bumps, dimension)

    @property
    def amplitude_min(self) -> float:
        return float(self._amps.min()) if len(self.bumps) else 0.0

    @property
    def amplitude_total(self) -> float:
        return float(self._amps.sum())

    @property
    def centers(self) -> np.ndarray:
        return self._centers.copy()

    def _as_batch(self, s) -> tuple[np.ndarray, bool]:
        arr = np.asarray(s, dtype=float)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.dimension:
            raise InvalidInputError(
                f"expected point(s) of dimension {self.dimension}, got shape {np.shape(s)}"
            )
        return arr, single

    def _terms(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # diff: (n, k, d); weighted: (n, k) = A_k exp(...)
        diff = pts[:, None, :] - self._centers[None, :, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        weighted = self._amps[None, :] * np.exp(-0.5 * sq * self._inv_var[None, :])
        return diff, weighted

    def value(self, s) -> np.ndarray | float:
        pts, single = self._as_batch(s)
        if not self.bumps:
            out = np.zeros(len(pts))
        else:
            _, w = self._terms(pts)
            out = w.sum(axis=1)
        return float(out[0]) if single else out

    def gradient(self, s) -> np.ndarray:
        pts, single = self._as_batch(s)
        if not self.bumps:
            out = np.zeros_like(pts)
        else:
            diff, w = self._terms(pts)
            out = -np.einsum("nk,nkd->nd", w * self._inv_var[None, :], diff)
        return out[0] if single else out

    def hessian(self, s) -> np.ndarray:
        pts, single = self._as_batch(s)
        d = self.dimension
        if not self.bumps:
            out = np.zeros((len(pts), d, d))
        else:
            diff, w = self._terms(pts)
            iv = self._inv_var[None, :]
            outer = np.einsum("nkd,nke->nkde", diff, diff)
            # d2/ds2 of A exp(-r^2/2s^2) = w (iv^2 diff diff^T - iv I)
            out = np.einsum("nk,nkde->nde", w * iv**2, outer)
            out -= (w * iv).sum(axis=1)[:, None, None] * np.eye(d)[None]
            out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
        return out[0] if single else out

    def dominant_bump(self, s) -> np.ndarray | int:
        """Index of the bump contributing most to U at each point."""
        pts, single = self._as_batch(s)
        if not self.bumps:
            raise InvalidInputError("field has no bumps")
        _, w = self._terms(pts)
        idx = np.argmax(w, axis=1)
        return int(idx[0]) if single else idx


def _region_bounds(region, dimension: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = (np.asarray(x, dtype=float) for x in region)
    lo = np.broadcast_to(lo, (dimension,))
    hi = np.broadcast_to(hi, (dimension,))
    if np.any(hi <= lo):
        raise InvalidInputError(f"empty region {region}")
    return lo, hi


def sample_region(region, dimension: int, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = _region_bounds(region, dimension)
    return lo + (hi - lo) * rng.random((n, dimension))


def psi_hessian(field: UncertaintyField, s, u_mid: float) -> np.ndarray:
    """Hessian of log cosh(U(s) - u_mid).

    log cosh is even, so this equals the Hessian of log cosh(|U - u_mid|).
    """
    x = np.atleast_1d(field.value(s)) - u_mid
    g = np.atleast_2d(field.gradient(s))
    h = field.hessian(s).reshape(len(x), field.dimension, field.dimension)
    sech2 = 1.0 / np.cosh(np.clip(x, -350, 350)) ** 2
    out = sech2[:, None, None] * np.einsum("nd,ne->nde", g, g) + np.tanh(x)[:, None, None] * h
    return out[0] if np.ndim(s) == 1 else out


def curvature_bound(
    field: UncertaintyField,
    region,
    n_samples: int,
    rng: np.random.Generator,
    u_mid: Optional[float] = None,
    safety: float = 1.01,
) -> float:
    """Sampled estimate of the maximal Hessian operator norm over ``region``.

    With ``u_mid`` given the Hessian is that of the shaping potential
    ``log cosh(U - u_mid)``; otherwise it is the field's own Hessian.
    ``region`` is a ``(low, high)`` pair of scalars or per-axis bounds.
    """
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    pts = sample_region(region, field.dimension, n_samples, rng)
    return safety * float(max_operator_norm(field, pts, u_mid))


def max_operator_norm(field: UncertaintyField, pts: np.ndarray, u_mid: Optional[float] = None,
                      chunk: int = 20000) -> float:
    best = 0.0
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        h = field.hessian(block) if u_mid is None else psi_hessian(field, block, u_mid)
        h = h.reshape(len(block), field.dimension, field.dimension)
        # symmetric: operator norm is the largest |eigenvalue|
        eig = np.linalg.eigvalsh(h)
        best = max(best, float(np.abs(eig).max()))
    return best


def min_gradient_norm_in_band(
    field: UncertaintyField,
    u_mid: float,
    delta_band: float,
    region,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, int]:
    """Smallest ||grad U|| over sampled points with |U - u_mid| < delta_band.

    Returns ``(g0, n_in_band)``; ``g0`` is ``nan`` when no sample lands in the band.
    """
    pts = sample_region(region, field.dimension, n_samples, rng)
    u = np.atleast_1d(field.value(pts))
    mask = np.abs(u - u_mid) < delta_band
    if not mask.any():
        return float("nan"), 0
    g = np.linalg.norm(field.gradient(pts[mask]), axis=1)
    return float(g.min()), int(mask.sum())


def level_radius(bump: GaussianBump, level: float) -> float:
    """Radius of the ``level`` set of an isolated bump (requires 0 < level < amplitude)."""
    if not 0 < level < bump.amplitude:
        raise InvalidInputError(f"level {level} outside (0, {bump.amplitude})")
    return bump.sigma * float(np.sqrt(2.0 * np.log(bump.amplitude / level)))
