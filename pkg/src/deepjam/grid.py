"""Discretized functions and warps on equidistant grids.

Everything here works on piecewise-linear data: derivatives use central
differences in the interior and second-order one-sided stencils at the
boundaries (``numpy.gradient(..., edge_order=2)``), composition and
inversion use linear interpolation, and integrals use the trapezoidal rule.
The array-level helpers (leading underscore) are vectorized over a batch
axis and are what the training loop calls; the typed wrappers validate and
are what users call.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MONOTONE_MARGIN = 1e-12


class WarpError(ValueError):
    """Raised when a warp violates monotonicity or boundary conditions."""


@dataclass(frozen=True)
class Grid:
    num_points: int
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.num_points < 3:
            raise ValueError(f"a grid needs at least 3 points, got {self.num_points}")
        if not self.b > self.a:
            raise ValueError(f"empty domain [{self.a}, {self.b}]")

    @property
    def spacing(self) -> float:
        return (self.b - self.a) / (self.num_points - 1)

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.num_points)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.num_points, self.spacing)

    def rescaled(self, a: float, b: float) -> "Grid":
        return Grid(self.num_points, a, b)


@dataclass(frozen=True)
class PeriodStructure:
    """``num_periods`` equal periods covering a grid of ``num_points``."""

    num_points: int
    num_periods: int

    def __post_init__(self):
        if self.num_periods < 1:
            raise ValueError("num_periods must be positive")
        if (self.num_points - 1) % self.num_periods:
            raise ValueError(
                f"P-1={self.num_points - 1} is not divisible by K={self.num_periods}; "
                "every period must own the same sub-grid"
            )

    @property
    def points_per_period(self) -> int:
        return (self.num_points - 1) // self.num_periods + 1

    def period_length(self, grid: Grid) -> float:
        return grid.length / self.num_periods


@dataclass(frozen=True)
class FunctionSample:
    grid: Grid
    values: np.ndarray  # (P, J)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.num_points:
            raise ValueError(
                f"values of shape {values.shape} do not match a grid of {self.grid.num_points} points"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("function values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SrsfSample:
    grid: Grid
    values: np.ndarray  # (P, J)
    anchor: np.ndarray  # (J,) initial values f(0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.num_points:
            raise ValueError("SRSF values do not match the grid")
        anchor = np.broadcast_to(np.asarray(self.anchor, dtype=float), (values.shape[1],)).copy()
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(anchor))):
            raise ValueError("SRSF values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "anchor", anchor)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Warp:
    """Strictly increasing, boundary-preserving map of ``[a, b]`` onto itself."""

    grid: Grid
    values: np.ndarray  # (P,)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.shape != (self.grid.num_points,):
            raise WarpError(f"warp of shape {values.shape} on a {self.grid.num_points}-point grid")
        check_warp_values(values, self.grid.a, self.grid.b)
        object.__setattr__(self, "values", values)

    @classmethod
    def identity(cls, grid: Grid) -> "Warp":
        return cls(grid, grid.points)


# ---------------------------------------------------------------- array helpers


@lru_cache(maxsize=64)
def _trapezoid_weights(num_points: int, spacing: float) -> np.ndarray:
    w = np.full(num_points, spacing)
    w[0] = w[-1] = spacing / 2
    w.setflags(write=False)
    return w


def trapezoid_weights(num_points: int, spacing: float) -> np.ndarray:
    return _trapezoid_weights(int(num_points), float(spacing))


@lru_cache(maxsize=64)
def _derivative_matrix(num_points: int, spacing: float) -> np.ndarray:
    """Dense matrix of the shared derivative stencil; ``D @ f`` equals ``np.gradient``."""
    n = num_points
    d = np.zeros((n, n))
    i = np.arange(1, n - 1)
    d[i, i - 1] = -0.5
    d[i, i + 1] = 0.5
    d[0, :3] = (-1.5, 2.0, -0.5)
    d[-1, -3:] = (0.5, -2.0, 1.5)
    d /= spacing
    d.setflags(write=False)
    return d


def derivative_matrix(num_points: int, spacing: float) -> np.ndarray:
    return _derivative_matrix(int(num_points), float(spacing))


def derivative(values: np.ndarray, spacing: float, axis: int = 0) -> np.ndarray:
    return np.gradient(values, spacing, axis=axis, edge_order=2)


def l2_norm_sq(values: np.ndarray, spacing: float, axis: int = 0) -> np.ndarray:
    """Squared L2 norm by trapezoidal quadrature along ``axis``."""
    w = trapezoid_weights(values.shape[axis], spacing)
    shape = [1] * values.ndim
    shape[axis] = -1
    return np.sum(w.reshape(shape) * values**2, axis=axis)


def inner(u: np.ndarray, v: np.ndarray, spacing: float, axis: int = -1) -> np.ndarray:
    w = trapezoid_weights(u.shape[axis], spacing)
    shape = [1] * u.ndim
    shape[axis] = -1
    return np.sum(w.reshape(shape) * u * v, axis=axis)


def cumulative_trapezoid(values: np.ndarray, spacing: float, axis: int = 0) -> np.ndarray:
    values = np.moveaxis(values, axis, 0)
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum((values[1:] + values[:-1]) * (spacing / 2), axis=0)
    return np.moveaxis(out, 0, axis)


def check_warp_values(values: np.ndarray, a: float, b: float) -> None:
    if values[0] != a or values[-1] != b:
        raise WarpError(f"warp endpoints ({values[0]!r}, {values[-1]!r}) differ from ({a!r}, {b!r})")
    steps = np.diff(values)
    if not np.all(steps > MONOTONE_MARGIN * (b - a)):
        bad = int(np.argmin(steps))
        raise WarpError(f"warp is not strictly increasing at index {bad} (step {steps[bad]:.3e})")


def _interp_rows(x: np.ndarray, a: float, spacing: float, values: np.ndarray) -> np.ndarray:
    """Evaluate grid functions at points ``x`` by linear interpolation.

    ``values`` has the grid along axis 1 (shape ``(n, P, ...)``) and ``x`` has
    shape ``(n, M)``; the result has shape ``(n, M, ...)``. Points outside the
    grid are clamped to the endpoints.
    """
    num_points = values.shape[1]
    s = (x - a) / spacing
    k = np.clip(np.floor(s).astype(np.int64), 0, num_points - 2)
    frac = s - k
    rows = np.arange(values.shape[0])[:, None]
    lo = values[rows, k]
    hi = values[rows, k + 1]
    frac = frac.reshape(frac.shape + (1,) * (values.ndim - 2))
    return lo + (hi - lo) * frac


def _compose(outer: np.ndarray, inner_: np.ndarray, a: float, spacing: float) -> np.ndarray:
    """``outer ∘ inner`` for batches of warps on one grid, endpoints re-pinned."""
    out = _interp_rows(inner_, a, spacing, outer)
    out[:, 0] = a
    out[:, -1] = a + spacing * (outer.shape[1] - 1)
    return out


def _invert(gamma: np.ndarray, a: float, spacing: float) -> np.ndarray:
    num_points = gamma.shape[1]
    t = a + spacing * np.arange(num_points)
    out = np.empty_like(gamma)
    for i, g in enumerate(gamma):
        out[i] = np.interp(t, g, t)
    out[:, 0] = t[0]
    out[:, -1] = t[-1]
    return out


def _srsf(f: np.ndarray, spacing: float) -> np.ndarray:
    """SRSF along axis 1 of an ``(n, P, ...)`` array."""
    d = derivative(f, spacing, axis=1)
    return np.sign(d) * np.sqrt(np.abs(d))


def _srsf_inverse(q: np.ndarray, anchor: np.ndarray, spacing: float) -> np.ndarray:
    return np.expand_dims(anchor, 1) + cumulative_trapezoid(q * np.abs(q), spacing, axis=1)


def _warp_slope(gamma: np.ndarray, spacing: float):
    """Derivative of warps along axis 1 with a positivity guard at the ends.

    The second-order one-sided stencil can go non-positive on sharply curved
    warps; there the first-order difference (positive for any increasing warp)
    is used instead. Returns ``(slope, left_fallback, right_fallback)``.
    """
    slope = derivative(gamma, spacing, axis=1)
    left = slope[:, 0] <= 0
    right = slope[:, -1] <= 0
    slope[left, 0] = (gamma[left, 1] - gamma[left, 0]) / spacing
    slope[right, -1] = (gamma[right, -1] - gamma[right, -2]) / spacing
    return slope, left, right


def _sqrt_slope(gamma: np.ndarray, spacing: float) -> np.ndarray:
    return np.sqrt(np.maximum(_warp_slope(gamma, spacing)[0], 0.0))


def _warp_srsf(q: np.ndarray, gamma: np.ndarray, a: float, spacing: float) -> np.ndarray:
    """Group action ``(q∘γ)·sqrt(γ')`` for ``q`` of shape (n, P, J), ``gamma`` (n, P)."""
    return _interp_rows(gamma, a, spacing, q) * _sqrt_slope(gamma, spacing)[:, :, None]


def _rescale(values: np.ndarray, src: tuple[float, float], dst: tuple[float, float]) -> np.ndarray:
    return dst[0] + (values - src[0]) * ((dst[1] - dst[0]) / (src[1] - src[0]))


def _segment_slices(num_points: int, num_periods: int) -> list[slice]:
    m = PeriodStructure(num_points, num_periods).points_per_period - 1
    return [slice(k * m, k * m + m + 1) for k in range(num_periods)]


def _split_warps_unit(gamma: np.ndarray, num_periods: int) -> np.ndarray:
    """Split warps on [0,1] into K segments, each rescaled to [0,1]x[0,1].

    Returns shape (n*K, P_seg), subject-major. Every split of a warp goes
    through here so the rescaling step cannot be skipped.
    """
    n, num_points = gamma.shape
    segs = np.stack([gamma[:, s] for s in _segment_slices(num_points, num_periods)], axis=1)
    lo = segs[:, :, :1]
    hi = segs[:, :, -1:]
    out = (segs - lo) / (hi - lo)
    out[:, :, 0] = 0.0
    out[:, :, -1] = 1.0
    return out.reshape(n * num_periods, -1)


def _extend_warp_unit(gamma: np.ndarray, num_periods: int) -> np.ndarray:
    """Periodic extension of unit warps (n, m) to unit warps (n, K(m-1)+1)."""
    n, m = gamma.shape
    pieces = [(gamma[:, :-1] + k) / num_periods for k in range(num_periods)]
    out = np.concatenate(pieces + [np.ones((n, 1))], axis=1)
    out[:, 0] = 0.0
    return out


def _extend_values(values: np.ndarray, num_periods: int) -> np.ndarray:
    """Periodic extension along axis 1 of (n, m, ...) arrays."""
    body = np.concatenate([values[:, :-1]] * num_periods, axis=1)
    return np.concatenate([body, values[:, -1:]], axis=1)


def _split_values(values: np.ndarray, num_periods: int) -> np.ndarray:
    """Split along axis 1: (n, P, ...) -> (n, K, m, ...)."""
    return np.stack([values[:, s] for s in _segment_slices(values.shape[1], num_periods)], axis=1)


# ---------------------------------------------------------------- typed operations


def srsf(f: FunctionSample) -> SrsfSample:
    q = _srsf(f.values[None], f.grid.spacing)[0]
    return SrsfSample(f.grid, q, f.values[0])


def srsf_inverse(q: SrsfSample) -> FunctionSample:
    f = _srsf_inverse(q.values[None], q.anchor[None], q.grid.spacing)[0]
    return FunctionSample(q.grid, f)


def _require_same_domain(grid: Grid, warp: Warp) -> None:
    if grid != warp.grid:
        raise ValueError(f"grid mismatch: {grid} vs {warp.grid}")


def warp_srsf(q: SrsfSample, gamma: Warp) -> SrsfSample:
    _require_same_domain(q.grid, gamma)
    out = _warp_srsf(q.values[None], gamma.values[None], q.grid.a, q.grid.spacing)[0]
    return SrsfSample(q.grid, out, q.anchor)


def warp_function(f: FunctionSample, gamma: Warp) -> FunctionSample:
    _require_same_domain(f.grid, gamma)
    out = _interp_rows(gamma.values[None], f.grid.a, f.grid.spacing, f.values[None])[0]
    return FunctionSample(f.grid, out)


def compose_warps(outer: Warp, inner_: Warp) -> Warp:
    """``outer ∘ inner``."""
    if outer.grid != inner_.grid:
        raise ValueError("warps live on different grids")
    g = outer.grid
    return Warp(g, _compose(outer.values[None], inner_.values[None], g.a, g.spacing)[0])


def invert_warp(gamma: Warp) -> Warp:
    g = gamma.grid
    return Warp(g, _invert(gamma.values[None], g.a, g.spacing)[0])


def scale_warp(gamma: Warp, domain: tuple[float, float], image: tuple[float, float] | None = None) -> Warp:
    """Affinely move a warp to a new domain (and image, defaulting to the domain).

    Only ``image == domain`` yields a :class:`Warp`; use :func:`scale_values`
    for the raw rescaled array otherwise.
    """
    image = domain if image is None else image
    if tuple(image) != tuple(domain):
        raise ValueError("a Warp must map its domain onto itself; use scale_values")
    grid = gamma.grid.rescaled(*domain)
    values = _rescale(gamma.values, (gamma.grid.a, gamma.grid.b), tuple(image))
    values[0], values[-1] = image
    return Warp(grid, values)


def scale_values(values: np.ndarray, src: tuple[float, float], dst: tuple[float, float]) -> np.ndarray:
    return _rescale(np.asarray(values, dtype=float), src, dst)


def extend_function(f: FunctionSample, num_periods: int) -> FunctionSample:
    """Concatenate ``num_periods`` copies of ``f``; the result lives on [0, 1]."""
    values = _extend_values(f.values[None], num_periods)[0]
    return FunctionSample(Grid(values.shape[0], 0.0, 1.0), values)


def extend_warp(gamma: Warp, num_periods: int) -> Warp:
    """Periodic extension ``γ(t + kτ) = γ(t) + kτ``, returned on [0, 1]."""
    unit = scale_warp(gamma, (0.0, 1.0))
    values = _extend_warp_unit(unit.values[None], num_periods)[0]
    return Warp(Grid(values.shape[0], 0.0, 1.0), values)


def split(x: FunctionSample | Warp, num_periods: int) -> list[FunctionSample] | list[Warp]:
    """Split into ``num_periods`` pieces on ``[0, τ]``; neighbours share endpoints.

    Warp pieces have their image moved affinely onto ``[0, τ]`` so each piece is
    itself a warp; for a warp that fixes the period boundaries this is the plain
    shift by ``-kτ``.
    """
    grid = x.grid
    slices = _segment_slices(grid.num_points, num_periods)
    tau = grid.length / num_periods
    sub = Grid(slices[0].stop - slices[0].start, 0.0, tau)
    if isinstance(x, Warp):
        out = []
        for s in slices:
            seg = x.values[s]
            vals = _rescale(seg, (seg[0], seg[-1]), (0.0, tau))
            vals[0], vals[-1] = 0.0, tau
            out.append(Warp(sub, vals))
        return out
    return [FunctionSample(sub, x.values[s]) for s in slices]
