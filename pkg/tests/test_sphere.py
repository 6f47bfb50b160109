import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepjam.grid import Grid, Warp, inner, l2_norm_sq
from deepjam.simgen import random_warp
from deepjam.sphere import (
    KarcherConfig,
    OrthantError,
    PsiPoint,
    TangentVector,
    _inv_exp,
    _karcher_mean_psi,
    _warps_to_psi,
    exp_map,
    geodesic_distance,
    inv_exp_map,
    karcher_mean_warps,
    psi_to_warp,
    warp_to_psi,
)


def warps(n, num_points=65, roughness=0.4, seed=0):
    rng = np.random.default_rng(seed)
    g = Grid(num_points)
    return [random_warp(g, roughness, 4, rng) for _ in range(n)]


def norm(x, grid):
    return float(np.sqrt(l2_norm_sq(x, grid.spacing)))


class TestPsi:
    def test_identity_maps_to_constant_one(self):
        g = Grid(33)
        np.testing.assert_allclose(warp_to_psi(Warp.identity(g)).values, 1.0, atol=1e-14)

    def test_constant_one_maps_to_identity(self):
        g = Grid(33)
        np.testing.assert_allclose(psi_to_warp(PsiPoint(g, np.ones(33))).values, g.points, atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, seed):
        gamma = warps(1, 193, seed=seed)[0]
        back = psi_to_warp(warp_to_psi(gamma))
        assert np.max(np.abs(back.values - gamma.values)) < 1e-3

    def test_unit_norm(self):
        for gamma in warps(10, 65, roughness=0.8):
            psi = warp_to_psi(gamma)
            assert abs(norm(psi.values, gamma.grid) - 1) < 1e-9

    def test_rejects_non_unit_domain(self):
        with pytest.raises(ValueError):
            warp_to_psi(Warp.identity(Grid(9, 0.0, 2.0)))

    def test_point_invariants(self):
        g = Grid(9)
        with pytest.raises(ValueError):
            PsiPoint(g, 2 * np.ones(9))
        with pytest.raises(OrthantError):
            PsiPoint(g, -np.ones(9))
        with pytest.raises(ValueError):
            TangentVector(PsiPoint(g, np.ones(9)), np.ones(9))


class TestMaps:
    def setup_method(self):
        ws = warps(2, 129, roughness=0.3, seed=3)
        self.grid = ws[0].grid
        self.a, self.b = warp_to_psi(ws[0]), warp_to_psi(ws[1])

    def test_zero_vector_is_fixed(self):
        v = TangentVector(self.a, np.zeros(self.grid.num_points))
        assert np.array_equal(exp_map(self.a, v, 1.0).values, self.a.values)

    def test_log_of_self_is_zero(self):
        assert np.all(inv_exp_map(self.a, self.a).values == 0)

    def test_exp_inverts_log(self):
        v = inv_exp_map(self.a, self.b)
        back = exp_map(self.a, v, 1.0)
        assert np.max(np.abs(back.values - self.b.values)) < 1e-6

    def test_log_length_is_distance(self):
        v = inv_exp_map(self.a, self.b)
        theta = np.arccos(np.clip(inner(self.a.values, self.b.values, self.grid.spacing), -1, 1))
        assert abs(norm(v.values, self.grid) - theta) < 1e-8
        assert geodesic_distance(self.a, self.b) == pytest.approx(theta, abs=1e-15)

    def test_log_is_tangent(self):
        v = inv_exp_map(self.a, self.b)
        assert abs(inner(self.a.values, v.values, self.grid.spacing)) < 1e-8

    def test_exp_stays_on_sphere(self):
        v = inv_exp_map(self.a, self.b)
        for s in (0.1, 0.5, 1.0):
            assert abs(norm(exp_map(self.a, v, s).values, self.grid) - 1) < 1e-9

    def test_antipodal_is_an_error(self):
        g = Grid(5)
        psi = np.array([1.0, 0.5, 0.0, 0.5, 1.0])
        psi = psi / norm(psi, g)
        with pytest.raises(ArithmeticError):
            _inv_exp(psi, -psi, g.spacing)

    def test_leaving_orthant_is_an_error(self):
        g = Grid(65)
        base = PsiPoint(g, np.ones(65))
        bump = np.sin(2 * np.pi * g.points)
        v = TangentVector(base, bump / norm(bump, g))
        with pytest.raises(OrthantError):
            exp_map(base, v, 1.4)


class TestKarcher:
    def test_identities_are_a_fixed_point(self):
        g = Grid(65)
        res = karcher_mean_warps([Warp.identity(g)] * 7)
        assert res.converged
        assert np.max(np.abs(res.mean.values - g.points)) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_identical_inputs(self, seed):
        gamma = warps(1, 65, seed=seed)[0]
        psi = _warps_to_psi(np.repeat(gamma.values[None], 5, axis=0), gamma.grid.spacing)
        mu, converged, *_ = _karcher_mean_psi(psi, gamma.grid.spacing, KarcherConfig())
        assert converged and np.max(np.abs(mu - psi[0])) < 1e-6

    def test_single_input(self):
        gamma = warps(1, 65, seed=11)[0]
        assert np.max(np.abs(karcher_mean_warps([gamma]).mean.values - gamma.values)) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_first_order_optimality(self, seed):
        ws = warps(10, 65, seed=seed)
        cfg = KarcherConfig()
        res = karcher_mean_warps(ws, cfg)
        assert res.converged and res.tangent_norm < cfg.tol
        g = ws[0].grid
        psi = _warps_to_psi(np.stack([w.values for w in ws]), g.spacing)
        mu = _karcher_mean_psi(psi, g.spacing, cfg)[0]
        vs = np.stack([_inv_exp(mu, p, g.spacing)[0] for p in psi])
        assert norm(vs.mean(axis=0), g) < cfg.tol

    def test_permutation_invariance(self):
        ws = warps(8, 65, seed=4)
        a = karcher_mean_warps(ws).mean.values
        b = karcher_mean_warps(ws[::-1]).mean.values
        assert np.max(np.abs(a - b)) < 1e-10

    def test_functional_is_non_increasing_at_small_step(self):
        ws = warps(12, 65, roughness=0.6, seed=9)
        res = karcher_mean_warps(ws, KarcherConfig(step_size=0.1))
        f = np.array(res.functional)
        assert np.all(np.diff(f) <= 1e-12)

    def test_non_convergence_is_flagged(self):
        ws = warps(6, 65, roughness=0.6, seed=1)
        res = karcher_mean_warps(ws, KarcherConfig(tol=1e-14, max_iter=2))
        assert not res.converged and res.n_iter == 2

    def test_empty_input(self):
        with pytest.raises(ValueError):
            karcher_mean_warps([])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n=st.integers(2, 12), rough=st.floats(0.05, 0.7))
def test_karcher_terminates_below_threshold(seed, n, rough):
    ws = warps(n, 33, roughness=rough, seed=seed)
    cfg = KarcherConfig()
    g = ws[0].grid
    psi = _warps_to_psi(np.stack([w.values for w in ws]), g.spacing)
    mean, converged, _, tangent_norm, _ = _karcher_mean_psi(psi, g.spacing, cfg)
    assert converged and tangent_norm < cfg.tol
    assert abs(norm(mean, g) - 1) < 1e-9 and np.all(mean > 0)
