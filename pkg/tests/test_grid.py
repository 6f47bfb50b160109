import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepjam.grid import (
    FunctionSample,
    Grid,
    PeriodStructure,
    SrsfSample,
    Warp,
    WarpError,
    compose_warps,
    cumulative_trapezoid,
    extend_function,
    extend_warp,
    invert_warp,
    l2_norm_sq,
    scale_warp,
    split,
    srsf,
    srsf_inverse,
    warp_function,
    warp_srsf,
)
from deepjam.simgen import random_warp


def sample(fn, num_points=193, channels=1):
    g = Grid(num_points)
    t = g.points
    return FunctionSample(g, np.column_stack([fn(t) for _ in range(channels)]))


def smooth_warp(grid, a=0.3, b=0.1):
    t = (grid.points - grid.a) / grid.length
    v = t + a * t * (1 - t) + b * np.sin(2 * np.pi * t) / (2 * np.pi) * t * (1 - t) * 4
    return Warp(grid, grid.a + grid.length * np.concatenate([[0.0], v[1:-1], [1.0]]))


def l2(x, grid):
    return float(np.sqrt(l2_norm_sq(x, grid.spacing)).sum())


class TestTypes:
    def test_grid_needs_three_points(self):
        with pytest.raises(ValueError):
            Grid(2)

    def test_period_structure_rejects_nondivisible(self):
        with pytest.raises(ValueError):
            PeriodStructure(129, 3)
        assert PeriodStructure(127, 3).points_per_period == 43

    def test_warp_rejects_bad_endpoints(self):
        g = Grid(5)
        with pytest.raises(WarpError):
            Warp(g, [0.0, 0.2, 0.5, 0.7, 0.99])

    def test_warp_rejects_non_increasing(self):
        with pytest.raises(WarpError):
            Warp(Grid(5), [0.0, 0.5, 0.5, 0.7, 1.0])

    def test_function_rejects_nan(self):
        with pytest.raises(ValueError):
            FunctionSample(Grid(3), [0.0, np.nan, 1.0])


class TestSrsf:
    def test_identity_function_has_unit_srsf(self):
        q = srsf(sample(lambda t: t, 5))
        np.testing.assert_allclose(q.values, 1.0, atol=1e-12)

    def test_square_function(self):
        f = sample(lambda t: t ** 2, 193)
        q = srsf(f)
        t = f.grid.points
        np.testing.assert_allclose(q.values[1:-1, 0], np.sqrt(2 * t[1:-1]), atol=1e-12)

    def test_constant_has_zero_srsf(self):
        assert np.all(srsf(sample(lambda t: 0 * t + 4.0, 9)).values == 0)

    def test_anchor_is_initial_value(self):
        q = srsf(sample(lambda t: np.cos(t) + 2, 17))
        assert q.anchor[0] == pytest.approx(3.0)

    def test_inverse_of_unit_srsf(self):
        g = Grid(11)
        f = srsf_inverse(SrsfSample(g, np.ones(11), 0.0))
        np.testing.assert_allclose(f.values[:, 0], g.points, atol=1e-14)

    def test_inverse_of_zero_srsf(self):
        f = srsf_inverse(SrsfSample(Grid(11), np.zeros(11), 3.0))
        assert np.all(f.values == 3.0)

    def test_round_trip(self):
        f = sample(lambda t: np.sin(2 * np.pi * t), 193)
        back = srsf_inverse(srsf(f))
        assert np.max(np.abs(back.values - f.values)) < 1e-3

    @pytest.mark.parametrize("fn", [
        lambda t: np.cos(6 * np.pi * t) + 0.5 * np.sin(4 * np.pi * t),
        lambda t: np.exp(-((t - 0.5) ** 2) / 0.02),
    ])
    def test_round_trip_is_second_order(self, fn):
        errs = []
        for P in (97, 193, 385):
            f = sample(fn, P)
            errs.append(np.max(np.abs(srsf_inverse(srsf(f)).values - f.values)))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all(ratios > 3.5), ratios


class TestAction:
    def test_identity_action_is_exact(self):
        f = sample(lambda t: np.sin(5 * t), 65, channels=2)
        q = srsf(f)
        assert np.array_equal(warp_srsf(q, Warp.identity(f.grid)).values, q.values)
        assert np.array_equal(warp_function(f, Warp.identity(f.grid)).values, f.values)

    def test_unit_srsf_gives_root_slope(self):
        g = Grid(129)
        gamma = smooth_warp(g)
        out = warp_srsf(SrsfSample(g, np.ones(129), 0.0), gamma)
        slope = np.gradient(gamma.values, g.spacing, edge_order=2)
        np.testing.assert_allclose(out.values[:, 0], np.sqrt(slope), atol=1e-12)

    def test_constant_function_is_invariant(self):
        g = Grid(33)
        f = FunctionSample(g, np.full(33, 2.5))
        assert np.allclose(warp_function(f, smooth_warp(g)).values, 2.5)

    def test_identity_valued_function_returns_warp(self):
        g = Grid(33)
        gamma = smooth_warp(g)
        np.testing.assert_allclose(warp_function(FunctionSample(g, g.points), gamma).values[:, 0], gamma.values, atol=1e-15)

    def test_isometry_with_fixed_warp(self):
        g = Grid(1025)
        t = g.points
        q1 = SrsfSample(g, np.sin(2 * np.pi * t) + 0.3, 0.0)
        q2 = SrsfSample(g, np.cos(3 * np.pi * t), 0.0)
        gamma = smooth_warp(g)
        lhs = l2(warp_srsf(q1, gamma).values - warp_srsf(q2, gamma).values, g)
        rhs = l2(q1.values - q2.values, g)
        assert abs(lhs - rhs) / rhs < 1e-3

    def test_compatibility(self):
        g = Grid(513)
        q = SrsfSample(g, np.sin(2 * np.pi * g.points) + 1, 0.0)
        g1, g2 = smooth_warp(g, 0.4, 0.2), smooth_warp(g, -0.3, 0.1)
        left = warp_srsf(warp_srsf(q, g1), g2).values
        right = warp_srsf(q, compose_warps(g1, g2)).values
        assert l2(left - right, g) < 1e-2

    def test_mismatched_domain_is_rejected(self):
        f = sample(np.sin, 9)
        with pytest.raises(ValueError):
            warp_function(f, Warp.identity(Grid(9, 0.0, 2.0)))


class TestWarpAlgebra:
    def test_compose_with_inverse(self):
        g = Grid(101)
        gamma = smooth_warp(g, 0.5, 0.3)
        ident = compose_warps(gamma, invert_warp(gamma))
        assert np.max(np.abs(ident.values - g.points)) < 2 * g.spacing

    def test_identity_laws(self):
        g = Grid(101)
        gamma = smooth_warp(g)
        np.testing.assert_allclose(compose_warps(Warp.identity(g), gamma).values, gamma.values, atol=1e-15)
        np.testing.assert_allclose(invert_warp(Warp.identity(g)).values, g.points, atol=1e-15)

    def test_scale_round_trip(self):
        g = Grid(41)
        gamma = smooth_warp(g)
        assert np.array_equal(scale_warp(gamma, (0.0, 1.0)).values, gamma.values)
        back = scale_warp(scale_warp(gamma, (2.0, 5.0)), (0.0, 1.0))
        np.testing.assert_allclose(back.values, gamma.values, atol=1e-12)
        ident = scale_warp(Warp.identity(g), (0.0, 1 / 3))
        np.testing.assert_allclose(ident.values, np.linspace(0, 1 / 3, 41), atol=1e-15)


class TestPeriodic:
    def test_extend_single_period(self):
        f = sample(np.sin, 17)
        assert np.array_equal(extend_function(f, 1).values, f.values)

    def test_extended_sine(self):
        m = 65
        g = Grid(m, 0.0, 1 / 3)
        f = FunctionSample(g, np.sin(2 * np.pi * 3 * g.points))
        ext = extend_function(f, 3)
        t = ext.grid.points
        assert ext.grid.num_points == 3 * (m - 1) + 1
        np.testing.assert_allclose(ext.values[:, 0], np.sin(6 * np.pi * t), atol=1e-12)

    @pytest.mark.parametrize("K", [1, 2, 3, 5])
    def test_split_of_extension_is_exact(self, K):
        # neighbouring periods share their junction point, so f(0) = f(tau) is required
        f = sample(lambda t: np.exp(t) * np.sin(9 * t), 21, channels=2)
        f.values[-1] = f.values[0]
        for piece in split(extend_function(f, K), K):
            assert np.array_equal(piece.values, f.values)

    def test_extend_identity_warp(self):
        g = Grid(11)
        ext = extend_warp(Warp.identity(g), 4)
        np.testing.assert_allclose(ext.values, np.linspace(0, 1, 41), atol=1e-15)

    def test_extend_warp_single_period(self):
        gamma = smooth_warp(Grid(21))
        np.testing.assert_allclose(extend_warp(gamma, 1).values, gamma.values, atol=1e-15)

    @pytest.mark.parametrize("K", [2, 3])
    def test_warp_split_of_extension(self, K):
        gamma = smooth_warp(Grid(21))
        pieces = split(extend_warp(gamma, K), K)
        for piece in pieces:
            np.testing.assert_allclose(piece.values * K, gamma.values, atol=1e-14)

    def test_segment_boundaries_match_samples(self):
        f = sample(np.cos, 31)
        pieces = split(f, 3)
        assert [p.values[0, 0] for p in pieces] == [f.values[0, 0], f.values[10, 0], f.values[20, 0]]
        assert pieces[-1].values[-1, 0] == f.values[-1, 0]

    def test_split_rejects_nondivisible(self):
        with pytest.raises(ValueError):
            split(sample(np.cos, 30), 3)


warp_seeds = st.integers(min_value=0, max_value=2 ** 31 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=warp_seeds, K=st.integers(1, 4), rough=st.floats(0.0, 0.8))
def test_every_emitted_warp_is_valid(seed, K, rough):
    g = Grid(33)
    gamma = random_warp(g, rough, 4, np.random.default_rng(seed))
    for w in (gamma, invert_warp(gamma), compose_warps(gamma, invert_warp(gamma)), extend_warp(gamma, K),
              *split(extend_warp(gamma, K), K)):
        assert w.values[0] == w.grid.a and w.values[-1] == w.grid.b
        assert np.all(np.diff(w.values) > 0)


@settings(max_examples=40, deadline=None)
@given(values=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40))
def test_cumulative_trapezoid_matches_numpy(values):
    v = np.array(values)
    out = cumulative_trapezoid(v, 0.25)
    assert out[0] == 0
    np.testing.assert_allclose(out[-1], np.trapezoid(v, dx=0.25), rtol=1e-9, atol=1e-9)
