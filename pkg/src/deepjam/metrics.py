"""Cumulative cross-sectional variance and template distances."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .grid import trapezoid_weights


def _batch(fs) -> np.ndarray:
    arr = np.stack([f.values for f in fs]) if not isinstance(fs, np.ndarray) else np.asarray(fs, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def _integrate(values: np.ndarray) -> np.ndarray:
    """Trapezoidal integral over [0, 1] along axis 1."""
    w = trapezoid_weights(values.shape[1], 1.0 / (values.shape[1] - 1))
    return np.einsum("p,np...->n...", w, values)


def ccsv(fs, reference=None) -> np.ndarray:
    """Cumulative cross-sectional variance per channel.

    ``(1/(n-1)) ∫ Σ_i (f_i - μ)²`` with ``μ`` the ``reference`` template when
    given (shape (P,) or (P, J)) and the cross-sectional mean otherwise.
    """
    f = _batch(fs)
    n = f.shape[0]
    if n < 2:
        raise ValueError("the cross-sectional variance needs at least two functions")
    if reference is None:
        center = f.mean(axis=0)
    else:
        center = np.asarray(getattr(reference, "values", reference), dtype=float).reshape(f.shape[1], -1)
    return _integrate((f - center[None]) ** 2).sum(axis=0) / (n - 1)


def mean_template_distance(fs, template) -> np.ndarray:
    """Squared L2 distance between the cross-sectional mean and ``template``, per channel."""
    f = _batch(fs)
    template = np.asarray(getattr(template, "values", template), dtype=float).reshape(f.shape[1], -1)
    return _integrate((f.mean(axis=0) - template)[None] ** 2)[0]


def reduction(observed, aligned) -> np.ndarray:
    """Percent reduction ``100·(1 - aligned/observed)`` (NaN where observed is 0)."""
    observed = np.asarray(observed, dtype=float)
    aligned = np.asarray(aligned, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(observed > 0, 100.0 * (1.0 - aligned / observed), np.nan)


@dataclass
class VarianceReport:
    observed_ccsv: list[float]
    aligned_ccsv: list[float]
    ccsv_reduction: list[float]
    observed_mean_distance: list[float] | None = None
    aligned_mean_distance: list[float] | None = None
    mean_distance_reduction: list[float] | None = None
    reference: str = "mean"

    @classmethod
    def from_data(cls, observed, aligned, template=None, reference: str = "mean") -> "VarianceReport":
        """Build a report; ``reference="template"`` measures variance around ``template``."""
        if reference not in ("mean", "template"):
            raise ValueError("reference must be 'mean' or 'template'")
        if reference == "template" and template is None:
            raise ValueError("template-referenced variance needs a template")
        ref = template if reference == "template" else None
        obs, ali = ccsv(observed, ref), ccsv(aligned, ref)
        report = cls(obs.tolist(), ali.tolist(), reduction(obs, ali).tolist(), reference=reference)
        if template is not None:
            d_obs = mean_template_distance(observed, template)
            d_ali = mean_template_distance(aligned, template)
            report.observed_mean_distance = d_obs.tolist()
            report.aligned_mean_distance = d_ali.tolist()
            report.mean_distance_reduction = reduction(d_obs, d_ali).tolist()
        return report

    def rows(self) -> list[dict]:
        out = []
        for j in range(len(self.observed_ccsv)):
            row = {
                "channel": j + 1,
                "observed": _sig(self.observed_ccsv[j]),
                "aligned": _sig(self.aligned_ccsv[j]),
                "reduction_pct": _pct(self.ccsv_reduction[j]),
            }
            if self.observed_mean_distance is not None:
                row.update(
                    mean_observed=_sig(self.observed_mean_distance[j]),
                    mean_aligned=_sig(self.aligned_mean_distance[j]),
                    mean_reduction_pct=_pct(self.mean_distance_reduction[j]),
                )
            out.append(row)
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _sig(x: float) -> str:
    return f"{x:.3g}"


def _pct(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.2f}"
