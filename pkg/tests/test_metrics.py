import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepjam.grid import FunctionSample, Grid
from deepjam.metrics import VarianceReport, ccsv, mean_template_distance, reduction


def brute_ccsv(f, center):
    n, P, J = f.shape
    dt = 1 / (P - 1)
    out = np.zeros(J)
    for j in range(J):
        for i in range(n):
            r = (f[i, :, j] - center[:, j]) ** 2
            out[j] += sum((r[p] + r[p + 1]) * dt / 2 for p in range(P - 1))
    return out / (n - 1)


def test_identical_functions():
    f = np.tile(np.sin(np.linspace(0, 3, 21)), (5, 1))
    assert ccsv(f)[0] == pytest.approx(0.0, abs=1e-30)


def test_two_constants():
    assert ccsv(np.array([np.zeros(9), np.ones(9)]))[0] == pytest.approx(0.5, abs=1e-15)


def test_constants_against_brute_force():
    c = np.array([0.3, -1.2, 2.0, 0.7])
    f = np.repeat(c[:, None], 11, axis=1)[:, :, None]
    assert ccsv(f)[0] == pytest.approx(brute_ccsv(f, f.mean(axis=0))[0], rel=1e-12)
    assert ccsv(f)[0] == pytest.approx(np.var(c, ddof=1), rel=1e-12)


def test_random_against_brute_force():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(6, 17, 2))
    ref = rng.normal(size=(17, 2))
    np.testing.assert_allclose(ccsv(f), brute_ccsv(f, f.mean(axis=0)), rtol=1e-12)
    np.testing.assert_allclose(ccsv(f, ref), brute_ccsv(f, ref), rtol=1e-12)


def test_accepts_function_samples():
    g = Grid(9)
    fs = [FunctionSample(g, g.points), FunctionSample(g, 2 * g.points)]
    assert ccsv(fs)[0] == pytest.approx(ccsv(np.stack([g.points, 2 * g.points]))[0])


def test_needs_two_functions():
    with pytest.raises(ValueError):
        ccsv(np.zeros((1, 5)))


def test_mean_distance():
    t = np.linspace(0, 1, 33)
    f = np.stack([np.sin(t), np.sin(t)])
    assert mean_template_distance(f, np.sin(t))[0] == 0.0
    assert mean_template_distance(np.sin(t)[None] + 1, np.sin(t))[0] == pytest.approx(1.0, abs=1e-14)


def test_mean_distance_brute_force():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(5, 21, 1))
    mu = rng.normal(size=(21, 1))
    d = (f.mean(axis=0) - mu)[:, 0] ** 2
    assert mean_template_distance(f, mu)[0] == pytest.approx(np.trapezoid(d, dx=1 / 20), rel=1e-12)


def test_reduction():
    np.testing.assert_allclose(reduction([2.0, 1.0], [0.5, 1.0]), [75.0, 0.0])
    assert np.isnan(reduction([0.0], [0.0])[0])


@settings(max_examples=50, deadline=None)
@given(f=arrays(np.float64, (4, 9), elements=st.floats(-100, 100)), s=st.floats(-10, 10))
def test_scale_and_sign(f, s):
    base = ccsv(f)[0]
    assert base >= 0
    np.testing.assert_allclose(ccsv(s * f)[0], s * s * base, rtol=1e-9, atol=1e-9)


def test_report():
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(5, 11, 2))
    ali = 0.1 * obs
    tmpl = np.zeros((11, 2))
    rep = VarianceReport.from_data(obs, ali, tmpl, reference="template")
    np.testing.assert_allclose(rep.ccsv_reduction, [99.0, 99.0])
    np.testing.assert_allclose(rep.mean_distance_reduction, [99.0, 99.0])
    rows = rep.rows()
    assert rows[0]["reduction_pct"] == "99.00"
    assert rows[0]["observed"] == f"{rep.observed_ccsv[0]:.3g}"
    assert rep.to_csv().splitlines()[0] == "channel,observed,aligned,reduction_pct,mean_observed,mean_aligned,mean_reduction_pct"
    assert json.loads(rep.to_json())["reference"] == "template"


def test_report_needs_template_for_template_reference():
    with pytest.raises(ValueError):
        VarianceReport.from_data(np.zeros((2, 3)), np.zeros((2, 3)), reference="template")
