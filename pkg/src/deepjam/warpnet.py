"""Convolutional warping network with a unit-simplex output activation.

The network maps SRSFs ``q`` of shape ``(n, P, J)`` to one warp per subject.
Hidden layers are length-preserving 1D convolutions with ``tanh``; the last
layer has a single filter whose output ``y`` goes through
:func:`simplex_activation`. Training minimizes the Fisher-Rao loss (the L2
distance between a template SRSF and the warped input SRSFs) with Adam.

Everything is float64 numpy with a hand-written reverse pass, so gradients
can be checked against finite differences to high precision.

Checkpoint layout (``save_checkpoint``): a zip archive with fixed member
timestamps holding ``meta.json`` (format version, network config, Adam step
counter, shuffle-generator state, free-form ``extra`` dict) and one ``.npy``
member per tensor: ``kernel_{l}``, ``bias_{l}``, ``adam_m_kernel_{l}``,
``adam_v_kernel_{l}``, ``adam_m_bias_{l}``, ``adam_v_bias_{l}`` for each layer
``l`` plus any extra arrays under ``extra/{name}``.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import _warp_slope, derivative_matrix, trapezoid_weights

CHECKPOINT_VERSION = 1
SIMPLEX_FLOOR = 1e-9
SLOPE_FLOOR = 1e-10
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class NetConfig:
    num_points: int
    num_channels: int = 1
    num_layers: int = 6
    filters: int = 16
    kernel_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.num_points < 3:
            raise ValueError("num_points must be at least 3")
        if self.num_channels < 1 or self.num_layers < 1 or self.filters < 1:
            raise ValueError("channels, layers and filters must be positive")
        if not 1 <= self.kernel_size <= self.num_points:
            raise ValueError(f"kernel_size must lie in [1, {self.num_points}]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def layer_widths(self) -> list[int]:
        """Channel counts from input to output, e.g. ``[J, F, ..., F, 1]``."""
        return [self.num_channels] + [self.filters] * (self.num_layers - 1) + [1]


# ---------------------------------------------------------------- simplex activation


@lru_cache(maxsize=16)
def _simplex_constants(num_points: int):
    p = np.arange(1, num_points + 1)
    offsets = np.log(num_points - p + 1.0)
    # gamma on P+2 equidistant knots is cumsum(x) with a leading zero; resample to P knots
    coarse = np.linspace(0.0, 1.0, num_points + 2)
    fine = np.linspace(0.0, 1.0, num_points)
    resample = np.zeros((num_points, num_points + 2))
    for i, t in enumerate(fine):
        k = min(np.searchsorted(coarse, t, side="right") - 1, num_points)
        frac = (t - coarse[k]) / (coarse[k + 1] - coarse[k])
        resample[i, k] += 1 - frac
        resample[i, k + 1] += frac
    lower = np.tril(np.ones((num_points + 2, num_points + 1)), k=-1)
    mix = resample @ lower
    for arr in (offsets, mix):
        arr.setflags(write=False)
    return offsets, mix


def _softplus(u):
    return np.logaddexp(0.0, u)


def _expit(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _simplex_forward(y: np.ndarray):
    """Batch simplex activation; returns ``(gamma, cache)`` for ``y`` of shape (n, P)."""
    num_points = y.shape[1]
    offsets, mix = _simplex_constants(num_points)
    u = y - offsets
    z = _expit(u)
    log_z = -_softplus(-u)
    # log of the mass left before coordinate p, i.e. log(1 - sum_{p'<p} x_p')
    log_rest = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(-_softplus(u), axis=1)], axis=1)
    x = np.exp(np.concatenate([log_rest[:, :-1] + log_z, log_rest[:, -1:]], axis=1))
    x_floor = (1.0 - (num_points + 1) * SIMPLEX_FLOOR) * x + SIMPLEX_FLOOR
    gamma = x_floor @ mix.T
    gamma[:, 0] = 0.0
    gamma[:, -1] = 1.0
    return gamma, (z, x)


def _simplex_backward(g_gamma: np.ndarray, cache) -> np.ndarray:
    z, x = cache
    num_points = z.shape[1]
    _, mix = _simplex_constants(num_points)
    g = g_gamma.copy()
    g[:, 0] = 0.0
    g[:, -1] = 0.0
    g_logx = (g @ mix) * (1.0 - (num_points + 1) * SIMPLEX_FLOOR) * x
    # mass after coordinate k flows through every later log x
    tail = np.cumsum(g_logx[:, ::-1], axis=1)[:, ::-1]
    later = tail[:, 1:]
    return g_logx[:, :-1] * (1.0 - z) - z * later


def simplex_activation(y: np.ndarray) -> np.ndarray:
    """Map raw outputs ``y`` (shape (P,) or (n, P)) to warp values on [0, 1].

    ``z_p = expit(y_p - log(P - p + 1))`` gives stick-breaking fractions, the
    stick pieces ``x`` (P + 1 of them, summing to one) become increments of a
    warp on P + 2 equidistant knots, and that warp is resampled linearly to P
    knots. A zero input gives the identity warp. Every increment is floored
    at ``SIMPLEX_FLOOR`` so saturated inputs still give strictly increasing
    warps.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    gamma, _ = _simplex_forward(np.atleast_2d(y))
    return gamma[0] if single else gamma


def simplex_coordinates(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The intermediate ``(z, x)`` coordinates of :func:`simplex_activation` for one ``y``."""
    _, (z, x) = _simplex_forward(np.atleast_2d(np.asarray(y, dtype=float)))
    return z[0], x[0]


# ---------------------------------------------------------------- Fisher-Rao loss


def _interp_with_slope(q: np.ndarray, gamma: np.ndarray, spacing: float):
    """Interpolate ``q`` (n, P, J) at ``gamma`` (n, P) on a grid starting at 0.

    Also returns the slope of the interpolant at each point, taking the left
    segment at knots.
    """
    num_points = q.shape[1]
    s = gamma / spacing
    k = np.clip(np.floor(s).astype(np.int64), 0, num_points - 2)
    k_left = np.clip(np.ceil(s).astype(np.int64) - 1, 0, num_points - 2)
    rows = np.arange(q.shape[0])[:, None]
    lo = q[rows, k]
    hi = q[rows, k + 1]
    value = lo + (hi - lo) * (s - k)[:, :, None]
    slope = (q[rows, k_left + 1] - q[rows, k_left]) / spacing
    return value, slope


def _loss_and_grad_gamma(q: np.ndarray, template: np.ndarray, gamma: np.ndarray, spacing: float,
                         need_grad: bool = True):
    """Fisher-Rao loss of a batch and its gradient with respect to the warps.

    ``q`` is (n, P, J), ``template`` is (P, J), ``gamma`` is (n, P).
    """
    n, num_points, num_channels = q.shape
    dmat = derivative_matrix(num_points, spacing)
    w = trapezoid_weights(num_points, spacing)
    slope_gamma, left, right = _warp_slope(gamma, spacing)
    root = np.sqrt(np.maximum(slope_gamma, 0.0))
    q_at, q_slope = _interp_with_slope(q, gamma, spacing)
    warped = q_at * root[:, :, None]
    resid = template[None] - warped
    scale = 1.0 / (n * num_channels)
    loss = scale * float(np.sum(w[None, :, None] * resid**2))
    if not need_grad:
        return loss, None
    g_warped = -2.0 * scale * w[None, :, None] * resid
    g_gamma = np.sum(g_warped * root[:, :, None] * q_slope, axis=2)
    g_root = np.sum(g_warped * q_at, axis=2)
    g_slope = np.where(slope_gamma > 0, 0.5 / np.sqrt(np.maximum(slope_gamma, SLOPE_FLOOR)), 0.0) * g_root
    g_gamma += g_slope @ dmat
    # rows where the boundary slope fell back to a first-order difference
    for mask, end, cols, first in ((left, 0, slice(0, 3), slice(0, 2)), (right, -1, slice(-3, None), slice(-2, None))):
        if np.any(mask):
            g_end = g_slope[mask, end][:, None]
            g_gamma[mask, cols] -= g_end * dmat[end, cols]
            sign = np.array([-1.0, 1.0]) / spacing
            g_gamma[mask, first] += g_end * sign
    return loss, g_gamma


def fisher_rao_loss(q: np.ndarray, template: np.ndarray, gamma: np.ndarray, spacing: float) -> float:
    """``mean_i mean_j ||template_j - (q_ij, γ_i)||²`` with trapezoidal L2 norms.

    Grids start at 0; ``spacing`` is the grid step of all three arrays.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        q = q[:, :, None]
    template = np.asarray(template, dtype=float).reshape(q.shape[1], -1)
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if template.shape[1] != q.shape[2] or gamma.shape != q.shape[:2]:
        raise ValueError(f"shape mismatch: q {q.shape}, template {template.shape}, warps {gamma.shape}")
    return _loss_and_grad_gamma(q, template, gamma, spacing, need_grad=False)[0]


# ---------------------------------------------------------------- convolutions


def _im2col(x: np.ndarray, kernel_size: int) -> np.ndarray:
    n, num_points, channels = x.shape
    left = (kernel_size - 1) // 2
    padded = np.pad(x, ((0, 0), (left, kernel_size - 1 - left), (0, 0)))
    win = sliding_window_view(padded, kernel_size, axis=1)  # (n, P, C, k)
    return win.transpose(0, 1, 3, 2).reshape(n * num_points, kernel_size * channels)


def _col2im(g_cols: np.ndarray, n: int, num_points: int, kernel_size: int, channels: int) -> np.ndarray:
    left = (kernel_size - 1) // 2
    g_cols = g_cols.reshape(n, num_points, kernel_size, channels)
    padded = np.zeros((n, num_points + kernel_size - 1, channels))
    for a in range(kernel_size):
        padded[:, a:a + num_points] += g_cols[:, :, a]
    return padded[:, left:left + num_points]


class WarpNet:
    """Parameters, Adam state and shuffle generator of a warping network."""

    def __init__(self, config: NetConfig, zero_output: bool = True):
        self.config = config
        rng = np.random.default_rng(config.seed)
        widths = config.layer_widths
        k = config.kernel_size
        self.kernels: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for layer, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:])):
            limit = np.sqrt(6.0 / (k * c_in + k * c_out))
            kernel = rng.uniform(-limit, limit, size=(k, c_in, c_out))
            if zero_output and layer == len(widths) - 2:
                kernel = np.zeros_like(kernel)
            self.kernels.append(kernel)
            self.biases.append(np.zeros(c_out))
        self.m = [np.zeros_like(p) for p in self.parameters()]
        self.v = [np.zeros_like(p) for p in self.parameters()]
        self.step = 0
        self.shuffle_rng = np.random.default_rng([config.seed, 1])

    @property
    def num_layers(self) -> int:
        return len(self.kernels)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list ``[kernel_0, bias_0, kernel_1, ...]`` (live references)."""
        out = []
        for kernel, bias in zip(self.kernels, self.biases):
            out.extend([kernel, bias])
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        self.kernels = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    # -------------------------------------------------------------- passes

    def _check_input(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.ndim == 2:
            q = q[:, :, None]
        expected = (self.config.num_points, self.config.num_channels)
        if q.ndim != 3 or q.shape[1:] != expected:
            raise ValueError(f"expected input of shape (n, {expected[0]}, {expected[1]}), got {q.shape}")
        return q

    def raw_output(self, q: np.ndarray, keep: bool = False):
        h = self._check_input(q)
        n, num_points, _ = h.shape
        k = self.config.kernel_size
        tape = []
        for layer, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            cols = _im2col(h, k)
            a = (cols @ kernel.reshape(-1, kernel.shape[2]) + bias).reshape(n, num_points, -1)
            last = layer == self.num_layers - 1
            h = a if last else np.tanh(a)
            if keep:
                tape.append((cols, h))
        return h[:, :, 0], tape

    def forward(self, q: np.ndarray):
        """Warps of shape (n, P) on [0, 1] and the tape needed by :meth:`backward`."""
        y, tape = self.raw_output(q, keep=True)
        gamma, cache = _simplex_forward(y)
        return gamma, (tape, cache)

    def predict(self, q: np.ndarray, chunk: int = 256) -> np.ndarray:
        q = self._check_input(q)
        parts = [_simplex_forward(self.raw_output(q[i:i + chunk])[0])[0] for i in range(0, len(q), chunk)]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.config.num_points))

    def backward(self, tape, g_gamma: np.ndarray) -> list[np.ndarray]:
        """Gradients (same layout as :meth:`parameters`) given dL/dγ."""
        layers, cache = tape
        g_a = _simplex_backward(g_gamma, cache)[:, :, None]
        n, num_points, _ = g_a.shape
        k = self.config.kernel_size
        grads: list[np.ndarray] = [None] * (2 * self.num_layers)
        for layer in range(self.num_layers - 1, -1, -1):
            kernel = self.kernels[layer]
            cols, _ = layers[layer]
            g_flat = g_a.reshape(n * num_points, -1)
            g_kernel = (cols.T @ g_flat).reshape(kernel.shape)
            g_bias = g_flat.sum(axis=0)
            for name, g in (("kernel", g_kernel), ("bias", g_bias)):
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(f"non-finite gradient in {name} of layer {layer}")
            grads[2 * layer] = g_kernel
            grads[2 * layer + 1] = g_bias
            if layer == 0:
                break
            g_cols = g_flat @ kernel.reshape(-1, kernel.shape[2]).T
            g_h = _col2im(g_cols, n, num_points, k, kernel.shape[1])
            h_prev = layers[layer - 1][1]
            g_a = g_h * (1.0 - h_prev**2)
        return grads

    def loss_and_grad(self, q: np.ndarray, template: np.ndarray):
        q = self._check_input(q)
        spacing = 1.0 / (self.config.num_points - 1)
        gamma, tape = self.forward(q)
        loss, g_gamma = _loss_and_grad_gamma(q, np.asarray(template, dtype=float), gamma, spacing)
        return loss, self.backward(tape, g_gamma)

    def loss(self, q: np.ndarray, template: np.ndarray) -> float:
        q = self._check_input(q)
        spacing = 1.0 / (self.config.num_points - 1)
        return fisher_rao_loss(q, template, self.predict(q), spacing)

    def adam_step(self, grads: list[np.ndarray]) -> None:
        cfg = self.config
        self.step += 1
        c1 = 1.0 - cfg.beta1**self.step
        c2 = 1.0 - cfg.beta2**self.step
        for p, g, m, v in zip(self.parameters(), grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)

    def train_epoch(self, q: np.ndarray, template: np.ndarray, batch_size: int | None = None):
        """One shuffled pass over ``q``; returns ``(epoch mean loss, per-batch losses)``.

        The epoch mean weights each batch by its size, so it is the mean
        per-subject loss seen during the pass.
        """
        q = self._check_input(q)
        batch_size = batch_size or self.config.batch_size
        order = self.shuffle_rng.permutation(len(q))
        batch_losses = []
        total = 0.0
        for start in range(0, len(q), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = self.loss_and_grad(q[idx], template)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at Adam step {self.step}")
            self.adam_step(grads)
            batch_losses.append(loss)
            total += loss * len(idx)
        return total / len(q), batch_losses

    # -------------------------------------------------------------- persistence

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in range(self.num_layers):
            out[f"kernel_{layer}"] = self.kernels[layer]
            out[f"bias_{layer}"] = self.biases[layer]
            out[f"adam_m_kernel_{layer}"] = self.m[2 * layer]
            out[f"adam_v_kernel_{layer}"] = self.v[2 * layer]
            out[f"adam_m_bias_{layer}"] = self.m[2 * layer + 1]
            out[f"adam_v_bias_{layer}"] = self.v[2 * layer + 1]
        return out


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(net: WarpNet, path: str | Path, extra: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write ``net`` (and optional extras) to ``path``; byte-identical for identical state."""
    meta = {
        "format": "deepjam-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "adam_step": net.step,
        "shuffle_rng": net.shuffle_rng.bit_generator.state,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name, arr in net.state_arrays().items():
            _write_member(zf, f"{name}.npy", _npy_bytes(arr))
        for name, arr in sorted((extra_arrays or {}).items()):
            _write_member(zf, f"extra/{name}.npy", _npy_bytes(arr))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path):
    """Inverse of :func:`save_checkpoint`; returns ``(net, extra, extra_arrays)``."""
    try:
        zf = zipfile.ZipFile(Path(path))
    except (OSError, zipfile.BadZipFile) as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "deepjam-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} deepjam checkpoint")
        arrays = {}
        extras = {}
        for name in zf.namelist():
            if not name.endswith(".npy"):
                continue
            arr = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
            if name.startswith("extra/"):
                extras[name[len("extra/"):-4]] = arr
            else:
                arrays[name[:-4]] = arr
    net = WarpNet(NetConfig(**meta["config"]))
    for layer in range(net.num_layers):
        net.kernels[layer] = arrays[f"kernel_{layer}"]
        net.biases[layer] = arrays[f"bias_{layer}"]
        net.m[2 * layer] = arrays[f"adam_m_kernel_{layer}"]
        net.v[2 * layer] = arrays[f"adam_v_kernel_{layer}"]
        net.m[2 * layer + 1] = arrays[f"adam_m_bias_{layer}"]
        net.v[2 * layer + 1] = arrays[f"adam_v_bias_{layer}"]
    net.step = int(meta["adam_step"])
    net.shuffle_rng.bit_generator.state = meta["shuffle_rng"]
    return net, meta["extra"], extras
