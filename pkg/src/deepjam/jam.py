"""Joint alignment of quasi-periodic multivariate functions (DeepJAM).

The outer loop alternates between a template step (cross-sectional mean of
the currently aligned SRSF periods) and a warping step (one epoch of the
network against the periodically extended template, then centering the
predicted warps so their period-wise Karcher mean is the identity).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    FunctionSample,
    Grid,
    PeriodStructure,
    SrsfSample,
    Warp,
    _compose,
    _extend_values,
    _extend_warp_unit,
    _interp_rows,
    _invert,
    _split_values,
    _split_warps_unit,
    _srsf,
    _srsf_inverse,
    _warp_srsf,
    l2_norm_sq,
)
from .sphere import KarcherConfig, _karcher_mean_warps
from .warpnet import NetConfig, WarpNet

logger = logging.getLogger(__name__)

ANCHOR_RULES = ("zero", "mean_initial_values")
TEMPLATE_MODES = ("warp", "amplitude")


@dataclass(frozen=True)
class JamConfig:
    num_periods: int
    outer_iterations: int
    net: NetConfig
    karcher: KarcherConfig = field(default_factory=KarcherConfig)
    epochs_per_iteration: int = 1
    template_anchor: str = "mean_initial_values"
    subject_template_mode: str = "amplitude"

    def __post_init__(self):
        if self.num_periods < 1:
            raise ValueError("num_periods must be at least 1")
        if self.outer_iterations < 1 or self.epochs_per_iteration < 1:
            raise ValueError("iteration counts must be positive")
        if self.template_anchor not in ANCHOR_RULES:
            raise ValueError(f"template_anchor must be one of {ANCHOR_RULES}")
        if self.subject_template_mode not in TEMPLATE_MODES:
            raise ValueError(f"subject_template_mode must be one of {TEMPLATE_MODES}")
        PeriodStructure(self.net.num_points, self.num_periods)


@dataclass
class AlignmentResult:
    """Everything a DeepJAM run estimates.

    Warps are stored as arrays on [0, 1]: ``total_warps`` (n, P) align each
    observed function to the extended template, ``local_means`` (n, m) are the
    period-wise Karcher means (inverse local warps) and ``global_warps``
    (n, P) the remaining inverse global warps. Templates live on one period
    ``[0, 1/K]`` with ``m`` points.
    """

    num_periods: int
    total_warps: np.ndarray
    local_means: np.ndarray
    global_warps: np.ndarray
    template_srsf: SrsfSample
    template: FunctionSample
    subject_templates: np.ndarray
    centering_warp: np.ndarray
    loss_history: list[float]
    variance_history: list[list[float]]

    @property
    def num_subjects(self) -> int:
        return self.total_warps.shape[0]

    def warp(self, i: int) -> Warp:
        return Warp(Grid(self.total_warps.shape[1]), self.total_warps[i])

    def local_warp(self, i: int) -> Warp:
        """Estimated local warp of subject ``i`` (inverse of its local mean)."""
        return Warp(Grid(self.local_means.shape[1]), _invert(self.local_means[i:i + 1], 0.0, 1.0 / (self.local_means.shape[1] - 1))[0])

    def global_warp(self, i: int) -> Warp:
        """Estimated global warp of subject ``i``."""
        g = self.global_warps[i:i + 1]
        return Warp(Grid(g.shape[1]), _invert(g, 0.0, 1.0 / (g.shape[1] - 1))[0])


# ---------------------------------------------------------------- helpers


def _as_batch(data) -> np.ndarray:
    """Stack FunctionSamples or an array into shape (n, P, J)."""
    if isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=float)
    else:
        data = list(data)
        if data and isinstance(data[0], FunctionSample):
            grid = data[0].grid
            if any(f.grid != grid or f.num_channels != data[0].num_channels for f in data):
                raise ValueError("all subjects must share one grid and channel count")
            arr = np.stack([f.values for f in data])
        else:
            arr = np.asarray(data, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected data of shape (n, P) or (n, P, J), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("data contains non-finite values")
    return arr


def _cross_sectional_variance(f: np.ndarray, spacing: float) -> np.ndarray:
    n = f.shape[0]
    resid = f - f.mean(axis=0, keepdims=True)
    return l2_norm_sq(resid, spacing, axis=1).sum(axis=0) / (n - 1) if n > 1 else np.zeros(f.shape[2])


def _centering(predicted: np.ndarray, num_periods: int, cfg: KarcherConfig):
    """Karcher mean of all rescaled periods and the extended inverse used to center."""
    segments = _split_warps_unit(predicted, num_periods)
    m = segments.shape[1]
    mean = _karcher_mean_warps(segments, cfg)
    inverse = _invert(mean[None], 0.0, 1.0 / (m - 1))
    return mean, _extend_warp_unit(inverse, num_periods)[0]


def center_warps(predicted, num_periods: int, cfg: KarcherConfig | None = None):
    """Compose each warp with the extended inverse of the period-wise Karcher mean.

    Returns ``(centered warps, Karcher mean of the rescaled periods)`` as arrays
    when given an array, or as :class:`Warp` objects when given Warps.
    """
    cfg = cfg or KarcherConfig()
    typed = not isinstance(predicted, np.ndarray)
    gamma = np.stack([w.values for w in predicted]) if typed else np.atleast_2d(predicted)
    num_points = gamma.shape[1]
    mean, correction = _centering(gamma, num_periods, cfg)
    centered = _compose(gamma, np.broadcast_to(correction, gamma.shape), 0.0, 1.0 / (num_points - 1))
    if typed:
        grid = Grid(num_points)
        return [Warp(grid, g) for g in centered], Warp(Grid(len(mean)), mean)
    return centered, mean


def _decompose(gamma: np.ndarray, num_periods: int, cfg: KarcherConfig):
    num_points = gamma.shape[1]
    spacing = 1.0 / (num_points - 1)
    locals_ = np.empty((gamma.shape[0], PeriodStructure(num_points, num_periods).points_per_period))
    globals_ = np.empty_like(gamma)
    for i, g in enumerate(gamma):
        segs = _split_warps_unit(g[None], num_periods)
        locals_[i] = _karcher_mean_warps(segs, cfg)
        ext = _extend_warp_unit(locals_[i][None], num_periods)
        globals_[i] = _compose(g[None], _invert(ext, 0.0, spacing), 0.0, spacing)[0]
    return locals_, globals_


def decompose_total_warp(gamma: Warp, num_periods: int, cfg: KarcherConfig | None = None):
    """Split an aligning warp into its local mean and global remainder.

    Returns ``(local_mean, global_part)`` with ``local_mean`` the Karcher mean of
    the K rescaled periods (the inverse local warp) and
    ``global_part = γ ∘ (ext local_mean)⁻¹`` (the inverse global warp), so that
    ``global_part ∘ ext(local_mean) ≈ γ``.
    """
    cfg = cfg or KarcherConfig()
    locals_, globals_ = _decompose(gamma.values[None], num_periods, cfg)
    return Warp(Grid(locals_.shape[1]), locals_[0]), Warp(gamma.grid, globals_[0])


def extract_common_template(template_srsf: SrsfSample, anchor: float | np.ndarray | None = None) -> FunctionSample:
    """Integrate a template SRSF back to a function; ``anchor`` is the free constant."""
    if anchor is not None:
        template_srsf = SrsfSample(template_srsf.grid, template_srsf.values, anchor)
    return FunctionSample(
        template_srsf.grid,
        _srsf_inverse(template_srsf.values[None], template_srsf.anchor[None], template_srsf.grid.spacing)[0],
    )


def _subject_templates(data: np.ndarray, q: np.ndarray, gamma: np.ndarray, locals_: np.ndarray,
                       globals_: np.ndarray, template: np.ndarray, num_periods: int, mode: str) -> np.ndarray:
    n, num_points, _ = data.shape
    m = locals_.shape[1]
    unit = 1.0 / (m - 1)
    if mode == "warp":
        inv_local = _invert(locals_, 0.0, unit)
        return _interp_rows(inv_local, 0.0, unit, np.broadcast_to(template, (n,) + template.shape))
    spacing = 1.0 / (num_points - 1)
    aligned_q = _warp_srsf(q, globals_, 0.0, spacing)
    mean_q = _split_values(aligned_q, num_periods).mean(axis=1)
    aligned_f = _interp_rows(globals_, 0.0, spacing, data)
    anchor = _split_values(aligned_f, num_periods)[:, :, 0].mean(axis=1)
    return _srsf_inverse(mean_q, anchor, spacing)


def subject_template(data: FunctionSample, gamma: Warp, num_periods: int, mode: str = "amplitude",
                     template: FunctionSample | None = None, cfg: KarcherConfig | None = None) -> FunctionSample:
    """Subject-specific template on one period for a single subject.

    ``mode="warp"`` warps the common ``template`` by the inverse local mean;
    ``mode="amplitude"`` averages the subject's K globally aligned SRSF periods
    and integrates, which stays valid when amplitudes vary between periods.
    """
    if mode not in TEMPLATE_MODES:
        raise ValueError(f"mode must be one of {TEMPLATE_MODES}")
    cfg = cfg or KarcherConfig()
    f = data.values[None]
    locals_, globals_ = _decompose(gamma.values[None], num_periods, cfg)
    if mode == "warp":
        if template is None:
            raise ValueError("mode 'warp' needs the common template")
        tmpl = template.values
    else:
        tmpl = None
    spacing = data.grid.spacing
    values = _subject_templates(f, _srsf(f, spacing), gamma.values[None], locals_, globals_, tmpl, num_periods, mode)[0]
    tau = data.grid.length / num_periods
    return FunctionSample(Grid(values.shape[0], 0.0, tau), values)


# ---------------------------------------------------------------- main loop


def run_deepjam(data, cfg: JamConfig, net: WarpNet | None = None, callback=None) -> tuple[AlignmentResult, WarpNet]:
    """Run the DeepJAM outer loop on ``data`` (n subjects on one [0, 1] grid).

    Returns the alignment result and the trained network. ``callback``, if
    given, is called as ``callback(iteration, loss, variance)`` after each
    outer iteration.
    """
    f = _as_batch(data)
    n, num_points, num_channels = f.shape
    K = cfg.num_periods
    PeriodStructure(num_points, K)
    if (cfg.net.num_points, cfg.net.num_channels) != (num_points, num_channels):
        raise ValueError(
            f"network expects ({cfg.net.num_points}, {cfg.net.num_channels}) inputs, data is ({num_points}, {num_channels})"
        )
    net = net or WarpNet(cfg.net)
    spacing = 1.0 / (num_points - 1)
    q = _srsf(f, spacing)
    gamma = np.broadcast_to(np.linspace(0.0, 1.0, num_points), (n, num_points)).copy()
    loss_history: list[float] = []
    variance_history: list[list[float]] = []
    mean_q = correction = karcher = None
    for e in range(1, cfg.outer_iterations + 1):
        warped = _warp_srsf(q, gamma, 0.0, spacing)
        mean_q = _split_values(warped, K).mean(axis=(0, 1))
        target = _extend_values(mean_q[None], K)[0]
        for _ in range(cfg.epochs_per_iteration):
            loss, _ = net.train_epoch(q, target)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss at outer iteration {e}")
        predicted = net.predict(q)
        karcher, correction = _centering(predicted, K, cfg.karcher)
        gamma = _compose(predicted, np.broadcast_to(correction, predicted.shape), 0.0, spacing)
        variance = _cross_sectional_variance(_interp_rows(gamma, 0.0, spacing, f), spacing)
        loss_history.append(float(loss))
        variance_history.append([float(v) for v in variance])
        logger.info("iteration %d: loss %.6g, variance %s", e, loss, np.array2string(variance, precision=4))
        if callback is not None:
            callback(e, float(loss), variance)

    m = mean_q.shape[0]
    tau = 1.0 / K
    period_grid = Grid(m, 0.0, tau)
    inverse_mean = _invert(karcher[None], 0.0, 1.0 / (m - 1)) * tau
    template_q = _warp_srsf(mean_q[None], inverse_mean, 0.0, period_grid.spacing)[0]
    anchor = f[:, 0, :].mean(axis=0) if cfg.template_anchor == "mean_initial_values" else np.zeros(num_channels)
    template_srsf = SrsfSample(period_grid, template_q, anchor)
    template = extract_common_template(template_srsf)

    locals_, globals_ = _decompose(gamma, K, cfg.karcher)
    subject = _subject_templates(f, q, gamma, locals_, globals_, template.values, K, cfg.subject_template_mode)
    result = AlignmentResult(
        num_periods=K,
        total_warps=gamma,
        local_means=locals_,
        global_warps=globals_,
        template_srsf=template_srsf,
        template=template,
        subject_templates=subject,
        centering_warp=correction,
        loss_history=loss_history,
        variance_history=variance_history,
    )
    return result, net


def align_new(net: WarpNet, data, centering_warp: np.ndarray) -> np.ndarray:
    """Aligning warps for unseen subjects: predict, then apply the stored centering."""
    f = _as_batch(data)
    spacing = 1.0 / (f.shape[1] - 1)
    predicted = net.predict(_srsf(f, spacing))
    return _compose(predicted, np.broadcast_to(centering_warp, predicted.shape), 0.0, spacing)


def apply_warps(data, warps: np.ndarray) -> np.ndarray:
    """``f_i ∘ γ_i`` for every subject; returns shape (n, P, J)."""
    f = _as_batch(data)
    return _interp_rows(np.atleast_2d(warps), 0.0, 1.0 / (f.shape[1] - 1), f)
