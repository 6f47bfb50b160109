"""Simulated quasi-periodic data from a multiscale warping model.

Each subject is ``f_i = ext(μ) ∘ ext(γ_i^l) ∘ γ_i^g``: a template ``μ`` on one
period, repeated K times, warped by a periodically extended local warp and a
global warp. Templates are evaluated analytically at the warped time points,
so the only discretization error is in the warps themselves.

Random warps are drawn as ``ψ = exp_1(v)`` for a Gaussian tangent vector ``v``
at the identity, expanded in ``sqrt(2)·sin(2πmt)``; the law is symmetric in
``v`` so the population Karcher mean is the identity warp.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .grid import Grid, PeriodStructure, Warp, _compose, _extend_warp_unit, _invert, trapezoid_weights
from .jam import _decompose
from .sphere import KarcherConfig, OrthantError, _exp, _psi_to_warps

SPLITS = ("train", "tune", "validation", "test")


@dataclass(frozen=True)
class SimConfig:
    n_total: int = 14_000
    fractions: tuple[float, float, float, float] = (8 / 14, 2 / 14, 2 / 14, 2 / 14)
    num_periods: int = 3
    points_per_period: int = 65
    seed: int = 0
    warp_roughness: float = 0.11
    basis_size: int = 4
    local_roughness: float | None = None

    def __post_init__(self):
        if self.n_total < 1:
            raise ValueError("n_total must be positive")
        if len(self.fractions) != 4 or any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be four non-negative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")
        if self.num_periods < 1 or self.points_per_period < 3:
            raise ValueError("need at least one period of at least 3 points")
        if self.warp_roughness < 0 or (self.local_roughness or 0) < 0 or self.basis_size < 1:
            raise ValueError("roughness must be non-negative and basis_size positive")

    @property
    def num_points(self) -> int:
        return self.num_periods * (self.points_per_period - 1) + 1

    def split_sizes(self) -> dict[str, int]:
        sizes = [int(np.floor(f * self.n_total + 1e-9)) for f in self.fractions]
        sizes[0] += self.n_total - sum(sizes)
        return dict(zip(SPLITS, sizes))


@dataclass
class SimDataset:
    """Observed functions plus the ground truth that generated them.

    Arrays: ``functions`` (n, P, J); ``true_local`` (n, m) and
    ``true_global``/``true_total`` (n, P), all warps on [0, 1];
    ``template`` (m, J) on one period and ``extended_template`` (P, J);
    ``amplitudes`` (n, 18) for scenario 2, else None.
    """

    scenario: int
    config: SimConfig
    functions: np.ndarray
    true_local: np.ndarray
    true_global: np.ndarray
    true_total: np.ndarray
    template: np.ndarray
    extended_template: np.ndarray
    amplitudes: np.ndarray | None
    split: np.ndarray = field(default=None)

    def subset(self, name: str) -> "SimDataset":
        idx = np.flatnonzero(self.split == name)
        return SimDataset(
            self.scenario, self.config, self.functions[idx], self.true_local[idx], self.true_global[idx],
            self.true_total[idx], self.template, self.extended_template,
            None if self.amplitudes is None else self.amplitudes[idx], self.split[idx],
        )

    @property
    def num_subjects(self) -> int:
        return self.functions.shape[0]


# ---------------------------------------------------------------- warps


def random_warp(grid: Grid, roughness: float, basis_size: int, rng: np.random.Generator,
                max_tries: int = 100) -> Warp:
    """Random warp on [0, 1] with tangent coefficients ``a_m ~ N(0, (roughness/m)^2)``."""
    if (grid.a, grid.b) != (0.0, 1.0):
        raise ValueError("random warps are drawn on [0, 1]")
    return Warp(grid, _random_warp_values(grid.num_points, roughness, basis_size, rng, max_tries))


def _random_warp_values(num_points: int, roughness: float, basis_size: int, rng: np.random.Generator,
                        max_tries: int = 100) -> np.ndarray:
    t = np.linspace(0.0, 1.0, num_points)
    spacing = t[1]
    m = np.arange(1, basis_size + 1)
    basis = np.sqrt(2.0) * np.sin(2 * np.pi * m[:, None] * t[None])
    one = np.ones(num_points)
    for _ in range(max_tries):
        coef = rng.normal(0.0, roughness / m)
        v = coef @ basis
        v -= np.sum(v * trapezoid_weights(num_points, spacing))  # exact discrete tangency at psi = 1
        psi = _exp(one, v, spacing)
        if np.all(psi > 0):
            return _psi_to_warps(psi[None], spacing)[0]
    raise OrthantError(f"no valid warp in {max_tries} draws; lower the roughness")


def center_warp_set(local: np.ndarray, global_: np.ndarray, num_periods: int,
                    cfg: KarcherConfig | None = None):
    """Re-split planted warps so each local warp is identifiable.

    The total warps ``ext(local) ∘ global`` are kept; the local part is replaced
    by the inverse period-wise Karcher mean of the aligning warp and the global
    part absorbs the rest. Returns ``(local, global, total)``.
    """
    cfg = cfg or KarcherConfig()
    num_points = global_.shape[1]
    spacing = 1.0 / (num_points - 1)
    total = _compose(_extend_warp_unit(local, num_periods), global_, 0.0, spacing)
    aligning = _invert(total, 0.0, spacing)
    means, inverse_global = _decompose(aligning, num_periods, cfg)
    new_local = _invert(means, 0.0, 1.0 / (means.shape[1] - 1))
    new_global = _invert(inverse_global, 0.0, spacing)
    return new_local, new_global, total


def _planted_warps(cfg: SimConfig, scenario: int):
    n = cfg.n_total
    P, m = cfg.num_points, cfg.points_per_period
    local = np.empty((n, m))
    global_ = np.empty((n, P))
    local_rough = cfg.warp_roughness if cfg.local_roughness is None else cfg.local_roughness
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, scenario, i])
        global_[i] = _random_warp_values(P, cfg.warp_roughness, cfg.basis_size, rng)
        local[i] = _random_warp_values(m, local_rough, cfg.basis_size, rng)
    return local, global_


# ---------------------------------------------------------------- templates


def _scenario1_values(s: np.ndarray, num_periods: int) -> np.ndarray:
    return np.sin(2 * np.pi * num_periods * s)[..., None]


_E45 = np.exp(-4.5**2 / 2)
_E15 = np.exp(-1.5**2 / 2)


def _bumps(x):
    """Gaussian bumps at ∓1.5 and the straight lines through their endpoint values on [-3, 3]."""
    c1 = np.exp(-((x + 1.5) ** 2) / 2)
    c2 = np.exp(-((x - 1.5) ** 2) / 2)
    c3 = (_E45 - _E15) / 6 * x + (_E45 + _E15) / 2
    c4 = (_E15 - _E45) / 6 * x + (_E45 + _E15) / 2
    return c1, c2, c3, c4


_P1 = norm(0.25, 0.1).pdf
_P2 = norm(0.5, 0.15).pdf
_P3 = norm(0.75, 0.1).pdf


def _channel2_raw(t, z):
    """``t`` in [0, 18], ``z`` of shape (n, 18) (only z_4..z_9 are used)."""
    piece = np.minimum(np.floor(t / 6.0), 2).astype(int)
    x = t - 3.0 - 6.0 * piece
    c1, c2, c3, c4 = _bumps(x)
    za = np.take_along_axis(z, 3 + 2 * piece, axis=1)
    zb = np.take_along_axis(z, 4 + 2 * piece, axis=1)
    return za * (c1 - c3) + c3 + zb * (c2 - c4) + c4


def _channel3_raw(t, z):
    """``t`` in [0, 3]; the closed end t = 3 takes the left limit."""
    half = np.minimum(np.floor(2.0 * t), 5).astype(int)
    k = half // 2
    x = t - k
    base = np.take_along_axis(z, 9 + 3 * k, axis=1) * _P2(x)
    dip = np.take_along_axis(z, 10 + 3 * k, axis=1) * (_P1(x) - _P1(0.0))
    rise = np.take_along_axis(z, 11 + 3 * k, axis=1) * (_P3(x) - _P3(0.0))
    return np.where(half % 2 == 0, base - dip, base + rise)


def _affine_to_unit(values: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    scale = 2.0 / (hi - lo)
    return scale, -1.0 - lo * scale


def _scenario2_affines():
    ones = np.ones((1, 18))
    x = np.linspace(0.0, 6.0, 200_001)[None]
    mu2 = _channel2_raw(x, ones)
    x = np.linspace(0.0, 1.0, 200_001)[None]
    x = x[x < 1.0][None]  # one full period of the half-open pieces
    mu3 = _channel3_raw(x, ones)
    return _affine_to_unit(mu2), _affine_to_unit(mu3)


_AFFINES = None


def scenario2_affines():
    """``((scale, shift), (scale, shift))`` mapping the images of templates 2 and 3 onto [-1, 1]."""
    global _AFFINES
    if _AFFINES is None:
        _AFFINES = _scenario2_affines()
    return _AFFINES


def _scenario2_values(s: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Channels evaluated at unit times ``s`` (n, M) with amplitudes ``z`` (n, 18)."""
    (a2, b2), (a3, b3) = scenario2_affines()
    t1 = 6 * np.pi * s
    piece = np.minimum(np.floor(t1 / (2 * np.pi)), 2).astype(int)
    y1 = np.take_along_axis(z, piece, axis=1) * np.sin(t1)
    y2 = a2 * _channel2_raw(18.0 * s, z) + b2
    y3 = a3 * _channel3_raw(3.0 * s, z) + b3
    return np.stack([y1, y2, y3], axis=-1)


# ---------------------------------------------------------------- scenarios


def _simulate(cfg: SimConfig, scenario: int) -> SimDataset:
    n, P, m, K = cfg.n_total, cfg.num_points, cfg.points_per_period, cfg.num_periods
    PeriodStructure(P, K)
    local, global_ = _planted_warps(cfg, scenario)
    local, global_, total = center_warp_set(local, global_, K)
    s_period = np.linspace(0.0, 1.0 / K, m)[None]
    s_full = np.linspace(0.0, 1.0, P)[None]
    if scenario == 1:
        amplitudes = None
        functions = _scenario1_values(total, K)
        template = _scenario1_values(s_period, K)[0]
        extended = _scenario1_values(s_full, K)[0]
    else:
        if K != 3:
            raise ValueError("scenario 2 is defined for exactly three periods")
        amplitudes = np.empty((n, 18))
        for i in range(n):
            amplitudes[i] = np.random.default_rng([cfg.seed, scenario, i, 1]).normal(1.0, 0.25, size=18)
        functions = _scenario2_values(total, amplitudes)
        ones = np.ones((1, 18))
        template = _scenario2_values(s_period, ones)[0]
        extended = _scenario2_values(s_full, ones)[0]
    split = np.repeat(np.array(SPLITS), list(cfg.split_sizes().values()))
    return SimDataset(scenario, cfg, functions, local, global_, total, template, extended, amplitudes, split)


def scenario1(cfg: SimConfig | None = None) -> SimDataset:
    """Univariate sine waves over K periods with local and global warping."""
    return _simulate(cfg or SimConfig(), 1)


def scenario2(cfg: SimConfig | None = None) -> SimDataset:
    """Trivariate data with per-period amplitude variability (K = 3)."""
    return _simulate(cfg or SimConfig(), 2)


def simulate(scenario: int, cfg: SimConfig | None = None) -> SimDataset:
    if scenario not in (1, 2):
        raise ValueError(f"unknown scenario {scenario!r}; expected 1 or 2")
    return _simulate(cfg or SimConfig(), scenario)


def warp_norm(gamma: np.ndarray) -> np.ndarray:
    """Sup distance of each warp row from the identity."""
    return np.max(np.abs(gamma - np.linspace(0.0, 1.0, gamma.shape[-1])), axis=-1)
