"""scikit-learn style front end for DeepJAM."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TRAIN_DEFAULTS, jam_config
from .grid import PeriodStructure
from .jam import align_new, apply_warps, run_deepjam


def check_functions(X, num_points: int | None = None, num_channels: int | None = None) -> np.ndarray:
    """Validate functional input and return it as a float array of shape (n, P, J).

    A 2-D array is read as n univariate functions. All functions are assumed
    to be sampled on the same uniform grid over [0, 1].
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected an array of shape (n, P) or (n, P, J), got {X.ndim} dimensions")
    if X.shape[0] < 1 or X.shape[1] < 3:
        raise ValueError(f"need at least one function with at least 3 points, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinite values")
    if num_points is not None and X.shape[1] != num_points:
        raise ValueError(f"X has {X.shape[1]} grid points but the estimator was fitted with {num_points}")
    if num_channels is not None and X.shape[2] != num_channels:
        raise ValueError(f"X has {X.shape[2]} channels but the estimator was fitted with {num_channels}")
    return X


def _restore_shape(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    return out[:, :, 0] if np.ndim(like) == 2 else out


class DeepJAM(TransformerMixin, BaseEstimator):
    """Joint alignment of quasi-periodic (multivariate) functions.

    ``fit`` runs the alternating template/network loop on the training
    functions. ``transform`` aligns functions with the trained network and
    the stored centering warp, so unseen subjects need no further
    optimization. Inputs are arrays of shape (n, P) or (n, P, J) sampled on
    a uniform grid over [0, 1], with ``(P - 1)`` divisible by
    ``num_periods``.

    Fitted attributes: ``result_`` (the full alignment result), ``net_``,
    ``warps_`` (training warps), ``template_`` (one period, shape (m, J)),
    ``centering_warp_``, ``n_points_in_`` and ``n_channels_in_``.
    """

    def __init__(self, num_periods=3, outer_iterations=300, epochs_per_iteration=1, num_layers=6,
                 filters=16, kernel_size=32, learning_rate=1e-4, batch_size=4, beta1=0.9,
                 beta2=0.999, epsilon=1e-8, karcher_tol=1e-6, karcher_max_iter=200,
                 karcher_step_size=0.3, template_anchor="mean_initial_values",
                 subject_template_mode="amplitude", random_state=0):
        self.num_periods = num_periods
        self.outer_iterations = outer_iterations
        self.epochs_per_iteration = epochs_per_iteration
        self.num_layers = num_layers
        self.filters = filters
        self.kernel_size = kernel_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.karcher_tol = karcher_tol
        self.karcher_max_iter = karcher_max_iter
        self.karcher_step_size = karcher_step_size
        self.template_anchor = template_anchor
        self.subject_template_mode = subject_template_mode
        self.random_state = random_state

    @classmethod
    def from_config(cls, values: dict) -> "DeepJAM":
        params = {k: v for k, v in values.items() if k in TRAIN_DEFAULTS and k not in ("seed", "split")}
        return cls(random_state=values.get("seed", 0), **params)

    def to_config(self) -> dict:
        params = self.get_params()
        params["seed"] = params.pop("random_state")
        return params

    def _jam_config(self, num_points: int, num_channels: int):
        if not isinstance(self.random_state, (int, np.integer)):
            raise ValueError("random_state must be an integer seed")
        values = self.to_config()
        values["seed"] = int(values["seed"])
        return jam_config(values, num_points, num_channels)

    def fit(self, X, y=None, callback=None):
        """Learn the template and the warping network from ``X``."""
        X = check_functions(X)
        PeriodStructure(X.shape[1], self.num_periods)
        cfg = self._jam_config(X.shape[1], X.shape[2])
        self.result_, self.net_ = run_deepjam(X, cfg, callback=callback)
        self.n_points_in_, self.n_channels_in_ = X.shape[1], X.shape[2]
        self.warps_ = self.result_.total_warps
        self.centering_warp_ = self.result_.centering_warp
        self.template_ = self.result_.template.values
        return self

    def predict_warps(self, X) -> np.ndarray:
        """Aligning warps ``γ_i`` of shape (n, P) for the rows of ``X``."""
        check_is_fitted(self, "net_")
        X = check_functions(X, self.n_points_in_, self.n_channels_in_)
        return align_new(self.net_, X, self.centering_warp_)

    def transform(self, X) -> np.ndarray:
        """Aligned functions ``f_i ∘ γ_i`` with the same shape as ``X``."""
        warps = self.predict_warps(X)
        return _restore_shape(apply_warps(check_functions(X), warps), X)

    def score(self, X, y=None) -> float:
        """Negative Fisher-Rao training loss of the network on ``X`` (higher is better)."""
        from .grid import _extend_values, _srsf

        check_is_fitted(self, "net_")
        X = check_functions(X, self.n_points_in_, self.n_channels_in_)
        spacing = 1.0 / (X.shape[1] - 1)
        target = _extend_values(self.result_.template_srsf.values[None], self.num_periods)[0]
        return -float(self.net_.loss(_srsf(X, spacing), target))
