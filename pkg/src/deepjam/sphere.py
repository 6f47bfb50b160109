"""Warps as points on the positive orthant of the unit Hilbert sphere.

A warp ``γ`` on [0, 1] is represented by ``ψ = sqrt(γ')``, which has unit L2
norm. Means of warps are computed there with the exponential map and its
inverse (the Karcher mean fixed-point iteration).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import (
    Grid,
    Warp,
    WarpError,
    _sqrt_slope,
    check_warp_values,
    cumulative_trapezoid,
    inner,
    l2_norm_sq,
)

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-12


class OrthantError(ArithmeticError):
    """An exponential-map step left the positive orthant of the sphere."""


@dataclass(frozen=True)
class PsiPoint:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.num_points,):
            raise ValueError("psi values do not match the grid")
        if np.any(values < 0):
            raise OrthantError("psi has negative coordinates")
        norm = np.sqrt(l2_norm_sq(values, self.grid.spacing))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"psi is not on the unit sphere (norm {norm!r})")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class TangentVector:
    base: PsiPoint
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.base.values.shape:
            raise ValueError("tangent vector does not match its base point")
        ip = inner(self.base.values, values, self.base.grid.spacing)
        if abs(ip) > 1e-8 * max(1.0, np.sqrt(l2_norm_sq(values, self.base.grid.spacing))):
            raise ValueError(f"vector is not tangent at its base (inner product {ip:.3e})")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class KarcherConfig:
    tol: float = 1e-6
    max_iter: int = 200
    step_size: float = 0.3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must lie in (0, 1]")


@dataclass(frozen=True)
class KarcherResult:
    mean: Warp
    converged: bool
    n_iter: int
    tangent_norm: float
    functional: list[float]


# ---------------------------------------------------------------- array level
# psi arrays have shape (n, P) on [0, 1]; spacing is passed explicitly.


def _normalize(psi: np.ndarray, spacing: float) -> np.ndarray:
    return psi / np.sqrt(l2_norm_sq(psi, spacing, axis=-1))[..., None]


def _warps_to_psi(gamma: np.ndarray, spacing: float) -> np.ndarray:
    return _normalize(_sqrt_slope(gamma, spacing), spacing)


def _psi_to_warps(psi: np.ndarray, spacing: float) -> np.ndarray:
    gamma = cumulative_trapezoid(psi**2, spacing, axis=-1)
    gamma = gamma / gamma[..., -1:]
    gamma[..., 0] = 0.0
    gamma[..., -1] = 1.0
    return gamma


def _exp(psi: np.ndarray, v: np.ndarray, spacing: float) -> np.ndarray:
    nv = np.sqrt(l2_norm_sq(v, spacing, axis=-1))[..., None]
    safe = np.where(nv < SERIES_THRESHOLD, 1.0, nv)
    out = np.cos(nv) * psi + np.sin(nv) * v / safe
    return np.where(nv < SERIES_THRESHOLD, psi, out)


def _inv_exp(psi: np.ndarray, target: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Tangent vectors at ``psi`` pointing at ``target``, and the angles between them."""
    theta = np.arccos(np.clip(inner(psi, target, spacing), -1.0, 1.0))
    if np.any(theta >= np.pi - 1e-9):
        raise OrthantError("antipodal points have no unique geodesic")
    th = theta[..., None]
    small = th < SERIES_THRESHOLD
    factor = np.where(small, 1.0, th / np.where(small, 1.0, np.sin(th)))
    v = factor * (target - np.cos(th) * psi)
    return np.where(small, 0.0, v), theta


def _karcher_mean_psi(psi: np.ndarray, spacing: float, cfg: KarcherConfig):
    """Fixed-point Karcher iteration on rows of ``psi``; returns (mean psi, info)."""
    n = psi.shape[0]
    mu = _normalize(psi.sum(axis=0) / n, spacing)
    mu_v = np.zeros_like(mu)
    history: list[float] = []
    norm_v = np.inf
    e = 0
    while (norm_v >= cfg.tol or e == 0) and e < cfg.max_iter:
        e += 1
        mu = _normalize(_exp(mu, cfg.step_size * mu_v, spacing), spacing)
        if np.any(mu <= 0):
            raise OrthantError(f"Karcher iterate left the positive orthant at iteration {e}")
        v, theta = _inv_exp(mu[None], psi, spacing)
        mu_v = v.sum(axis=0) / n
        norm_v = float(np.sqrt(l2_norm_sq(mu_v, spacing)))
        history.append(float(np.sum(theta**2)))
    converged = norm_v < cfg.tol
    if not converged:
        logger.warning("Karcher mean stopped after %d iterations with |mean v| = %.3e", e, norm_v)
    return mu, converged, e, norm_v, history


def _karcher_mean_warps(gamma: np.ndarray, cfg: KarcherConfig) -> np.ndarray:
    """Karcher mean of unit warps given as rows of ``gamma``."""
    spacing = 1.0 / (gamma.shape[1] - 1)
    mu, *_ = _karcher_mean_psi(_warps_to_psi(gamma, spacing), spacing, cfg)
    return _psi_to_warps(mu, spacing)


# ---------------------------------------------------------------- typed operations


def _require_unit(grid: Grid) -> None:
    if (grid.a, grid.b) != (0.0, 1.0):
        raise WarpError(f"sphere operations need warps on [0, 1], got [{grid.a}, {grid.b}]")


def warp_to_psi(gamma: Warp) -> PsiPoint:
    _require_unit(gamma.grid)
    return PsiPoint(gamma.grid, _warps_to_psi(gamma.values[None], gamma.grid.spacing)[0])


def psi_to_warp(psi: PsiPoint) -> Warp:
    _require_unit(psi.grid)
    return Warp(psi.grid, _psi_to_warps(psi.values[None], psi.grid.spacing)[0])


def exp_map(psi: PsiPoint, v: TangentVector, scale: float = 1.0) -> PsiPoint:
    out = _exp(psi.values, scale * v.values, psi.grid.spacing)
    if np.any(out <= 0):
        raise OrthantError("exponential map left the positive orthant")
    return PsiPoint(psi.grid, _normalize(out, psi.grid.spacing))


def inv_exp_map(psi: PsiPoint, target: PsiPoint) -> TangentVector:
    """Shooting vector from ``psi`` to ``target``: ``θ/sinθ · (target − cosθ·psi)``."""
    if psi.grid != target.grid:
        raise ValueError("points live on different grids")
    v, _ = _inv_exp(psi.values, target.values, psi.grid.spacing)
    return TangentVector(psi, v)


def geodesic_distance(psi: PsiPoint, target: PsiPoint) -> float:
    return float(np.arccos(np.clip(inner(psi.values, target.values, psi.grid.spacing), -1.0, 1.0)))


def karcher_mean_warps(warps: list[Warp], cfg: KarcherConfig | None = None) -> KarcherResult:
    """Karcher mean of warps on [0, 1] under the Fisher-Rao metric.

    Starts from the normalized cross-sectional mean of the square-root slopes
    and iterates ``μ ← exp_μ(ε·mean_i exp_μ⁻¹ ψ_i)`` until the mean shooting
    vector is shorter than ``cfg.tol`` or ``cfg.max_iter`` steps were taken.
    Non-convergence is reported through ``KarcherResult.converged``.
    """
    cfg = cfg or KarcherConfig()
    if not warps:
        raise ValueError("need at least one warp")
    grid = warps[0].grid
    _require_unit(grid)
    if any(w.grid != grid for w in warps):
        raise ValueError("all warps must share one grid")
    gamma = np.stack([w.values for w in warps])
    for g in gamma:
        check_warp_values(g, 0.0, 1.0)
    psi = _warps_to_psi(gamma, grid.spacing)
    mu, converged, n_iter, norm_v, history = _karcher_mean_psi(psi, grid.spacing, cfg)
    mean = Warp(grid, _psi_to_warps(mu, grid.spacing))
    return KarcherResult(mean, converged, n_iter, norm_v, history)
