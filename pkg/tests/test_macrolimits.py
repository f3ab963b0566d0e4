import math

import numpy as np
import pytest

from vfplab.grid import Field, PhaseGrid, SpatialGrid, VelocityGrid, divergence, quadrature
from vfplab.macrolimits import (
    MacroRunConfig,
    PositivityError,
    corrector,
    corrector_divergence_check,
    default_macro_dt,
    free_energy_ad,
    gyro_average,
    gyro_generator,
    hilbert_corrector_check,
    macro_rhs,
    macro_step,
    read_trajectory,
    run_macro,
    write_trajectory,
)
from vfplab.riesz import RieszOperator
from vfplab.states import MacroState, ScalingRegime, maxwellian_array, smooth_density

CASES = [("diffusive", 1, 0.25), ("highfield", 1, 0.25), ("gsqg", 2, 0.5)]


class TestMacroSolvers:
    @pytest.mark.parametrize("name,dim,alpha", CASES)
    def test_constant_is_stationary(self, name, dim, alpha):
        s = SpatialGrid(dim, 16)
        reg = ScalingRegime.make(name, 0.1, alpha)
        traj = run_macro(s.constant(0.3), MacroRunConfig(reg, 0.01, 0.1))
        assert np.max(np.abs(traj.rhos[-1].values - 0.3)) < 1e-14

    @pytest.mark.parametrize("k0", [1, 3])
    def test_linearized_single_mode_decay(self, k0):
        # rho = m + a cos(k0 x) with tiny a decays at rate m k0^(2-2 alpha) + k0^2
        s = SpatialGrid(1, 64)
        m, a, alpha = 0.5, 1e-7, 0.25
        reg = ScalingRegime.make("diffusive", 0.1, alpha)
        x = s.mesh[0]
        traj = run_macro(Field(s, m + a * np.cos(k0 * x)), MacroRunConfig(reg, 1e-3, 0.2))
        rate = m * k0 ** (2 - 2 * alpha) + k0**2
        expected = m + a * math.exp(-rate * 0.2) * np.cos(k0 * x)
        assert np.max(np.abs(traj.rhos[-1].values - expected)) < 1e-6 * a

    def test_pure_aggregation_single_mode(self):
        s = SpatialGrid(1, 64)
        m, a, alpha, k0 = 0.5, 1e-7, 0.25, 2
        reg = ScalingRegime.make("highfield", 0.1, alpha)
        x = s.mesh[0]
        traj = run_macro(Field(s, m + a * np.cos(k0 * x)), MacroRunConfig(reg, 1e-3, 0.2))
        expected = m + a * math.exp(-m * k0 ** (2 - 2 * alpha) * 0.2) * np.cos(k0 * x)
        assert np.max(np.abs(traj.rhos[-1].values - expected)) < 1e-6 * a

    @pytest.mark.parametrize("name,dim,alpha", CASES)
    def test_mass_conservation(self, name, dim, alpha):
        s = SpatialGrid(dim, 32)
        reg = ScalingRegime.make(name, 0.1, alpha)
        rho0 = smooth_density(s)
        traj = run_macro(rho0, MacroRunConfig(reg, default_macro_dt(reg, rho0), 0.5))
        drift = max(abs(quadrature(r) - 1.0) for r in traj.rhos)
        assert drift <= 1e-10 * 0.5

    def test_aggregation_diffusion_free_energy_decays(self):
        s = SpatialGrid(1, 64)
        reg = ScalingRegime.make("diffusive", 0.1, 0.25)
        op = RieszOperator(0.25, s)
        traj = run_macro(smooth_density(s), MacroRunConfig(reg, 5e-3, 0.5))
        F = np.array([free_energy_ad(r, op) for r in traj.rhos])
        assert np.all(np.diff(F) <= 1e-8 * np.diff(traj.times))

    def test_aggregation_interaction_energy_decays(self):
        s = SpatialGrid(1, 64)
        reg = ScalingRegime.make("highfield", 0.1, 0.25)
        op = RieszOperator(0.25, s)
        traj = run_macro(smooth_density(s), MacroRunConfig(reg, 5e-3, 0.5))
        P = np.array([op.interaction_energy(r) for r in traj.rhos])
        assert np.all(np.diff(P) <= 1e-8 * np.diff(traj.times))

    def test_gsqg_conservation(self):
        s = SpatialGrid(2, 32)
        reg = ScalingRegime.make("gsqg", 0.1, 0.5)
        op = RieszOperator(0.5, s)
        x, y = s.mesh
        rho0 = Field(s, 1 + 0.4 * np.cos(x) * np.sin(2 * y) + 0.3 * np.sin(x + y))
        traj = run_macro(rho0, MacroRunConfig(reg, 5e-3, 0.5))
        P = np.array([op.interaction_energy(r) for r in traj.rhos])
        L2 = np.array([quadrature(r * r) for r in traj.rhos])
        assert np.max(np.abs(P - P[0])) <= 1e-8 * 0.5
        assert np.max(np.abs(L2 - L2[0])) <= 1e-8 * 0.5
        assert np.max(np.abs(traj.rhos[-1].values - rho0.values)) > 1e-3  # the flow is not trivial

    def test_rhs_of_gsqg_is_divergence_of_perp_flux(self):
        s = SpatialGrid(2, 16)
        reg = ScalingRegime.make("gsqg", 0.1, 0.5)
        rho = smooth_density(s)
        op = RieszOperator(0.5, s)
        flux = Field(s, rho.values * op.perp_force(rho).values)
        assert np.max(np.abs(macro_rhs(reg, rho, dealias=False).values - divergence(flux).values)) < 1e-10

    def test_positivity_abort(self):
        s = SpatialGrid(1, 16)
        reg = ScalingRegime.make("highfield", 0.1, 0.25)
        state = MacroState(Field(s, 1e-10 + 0.0 * s.mesh[0]), floor=1e-12)
        with pytest.raises(PositivityError):
            macro_step(state, MacroRunConfig(reg, 0.1, 0.1, floor=0.5))

    def test_dense_output_hits_stored_times(self):
        s = SpatialGrid(1, 32)
        reg = ScalingRegime.make("diffusive", 0.1, 0.25)
        traj = run_macro(smooth_density(s), MacroRunConfig(reg, 0.01, 0.1))
        assert traj.density(0.05) is traj.rhos[5]
        fine = run_macro(smooth_density(s), MacroRunConfig(reg, 0.001, 0.1))
        mid = traj.density(0.055).values
        assert np.max(np.abs(mid - fine.density(0.055).values)) < 1e-6
        with pytest.raises(ValueError):
            traj.density(0.2)

    def test_trajectory_io(self, tmp_path):
        s = SpatialGrid(1, 16)
        reg = ScalingRegime.make("highfield", 0.1, 0.25)
        traj = run_macro(smooth_density(s), MacroRunConfig(reg, 0.01, 0.1))
        write_trajectory(tmp_path, traj, every=3)
        back = read_trajectory(tmp_path)
        assert [t for t, _ in back] == pytest.approx([0.0, 0.03, 0.06, 0.09, 0.1])
        assert np.array_equal(back[-1][1].values, traj.rhos[-1].values)


class TestCorrectors:
    @pytest.mark.parametrize("name,dim,alpha", CASES)
    def test_constant_density(self, name, dim, alpha):
        s = SpatialGrid(dim, 16)
        c = corrector(ScalingRegime.make(name, 0.1, alpha), s.constant(2.0))
        assert c.u_eps.max_abs() < 1e-14 and c.e_eps.max_abs() < 1e-14

    def test_diffusive_formula(self):
        s = SpatialGrid(1, 64)
        x = s.mesh[0]
        a, alpha, eps = 0.3, 0.25, 0.05
        rho = Field(s, 1 + a * np.cos(x))
        u = corrector(ScalingRegime.make("diffusive", eps, alpha), rho).u_eps.values[0]
        expected = -eps * (-a * np.sin(x) - a * np.sin(x) / (1 + a * np.cos(x)))
        assert np.max(np.abs(u - expected)) < 1e-12

    @pytest.mark.parametrize("name,dim,alpha", [("diffusive", 1, 0.25), ("gsqg", 2, 0.5)])
    def test_linear_in_eps(self, name, dim, alpha):
        s = SpatialGrid(dim, 32)
        rho = smooth_density(s)
        us = [corrector(ScalingRegime.make(name, e, alpha), rho).u_eps for e in (0.2, 0.1, 0.05)]
        for big, small in zip(us, us[1:]):
            assert abs(big.max_abs() / small.max_abs() - 2.0) <= 1e-10

    def test_gsqg_corrector_divergence_free(self):
        s = SpatialGrid(2, 32)
        u = corrector(ScalingRegime.make("gsqg", 0.1, 0.5), smooth_density(s)).u_eps
        assert divergence(u).max_abs() < 1e-10

    def test_gsqg_remainder_scales_quadratically(self):
        s = SpatialGrid(2, 32)
        rho = smooth_density(s)
        e1 = corrector(ScalingRegime.make("gsqg", 0.2, 0.5), rho).e_eps.max_abs()
        e2 = corrector(ScalingRegime.make("gsqg", 0.1, 0.5), rho).e_eps.max_abs()
        assert e1 / e2 == pytest.approx(4.0, rel=1e-10)

    def test_rejects_nonpositive(self):
        s = SpatialGrid(1, 16)
        with pytest.raises(ValueError):
            corrector(ScalingRegime.make("diffusive", 0.1, 0.25), s.constant(0.0))


class TestGyroAverage:
    # rotations are exact on band-limited data; 48 points per velocity axis
    # resolve the Gaussians below to round-off
    G = PhaseGrid(SpatialGrid(2, 8), VelocityGrid(2, 48, 8.0))

    def test_radial_is_unchanged(self):
        g = self.G
        vals = np.broadcast_to(np.exp(-0.5 * g.xi_sq / 0.8) * (1 + 0.1 * g.xi_sq), g.shape).copy()
        out = gyro_average(Field(g, vals)).values
        assert np.max(np.abs(out - vals)) < 1e-10

    def test_odd_mode_vanishes(self):
        g = self.G
        m = maxwellian_array(np.ones((8, 8)), np.zeros((2, 8, 8)), g)
        vals = (0.7 * g.xi[0] - 0.2 * g.xi[1]) * m
        assert gyro_average(Field(g, vals)).max_abs() < 1e-10

    def test_second_angular_mode_against_quadrature(self):
        # (xi_1^2 - xi_2^2) M averages to zero; xi_1^2 M averages to |xi|^2 M / 2
        g = self.G
        m = maxwellian_array(np.ones((8, 8)), np.zeros((2, 8, 8)), g)
        out = gyro_average(Field(g, g.xi[0] ** 2 * m)).values
        assert np.max(np.abs(out - 0.5 * g.xi_sq * m)) < 1e-9

    def test_projection_and_annihilation(self):
        g = self.G
        x = g.space.mesh
        xi1, xi2 = g.xi
        ex = (Ellipsis, None, None)
        vals = (1 + 0.3 * np.cos(x[0])[ex] * xi1 + 0.2 * np.sin(x[1])[ex] * xi1 * xi2) * np.exp(
            -0.5 * ((xi1 - 0.4) ** 2 + xi2**2) / 0.7
        )
        f = Field(g, vals)
        avg = gyro_average(f)
        assert (gyro_average(avg) - avg).max_abs() <= 1e-9 * f.max_abs()
        assert gyro_average(gyro_generator(f)).max_abs() <= 1e-8 * f.max_abs()

    def test_rejects_1d(self):
        g = PhaseGrid(SpatialGrid(1, 8), VelocityGrid(1, 16, 8.0))
        with pytest.raises(ValueError):
            gyro_average(Field(g, np.zeros(g.shape)))


class TestHilbertCorrector:
    def test_constant_density(self):
        s = SpatialGrid(2, 16)
        chk = hilbert_corrector_check(s.constant(1.0), 0.5)
        assert chk.m1_formula.max_abs() < 1e-14 and chk.err < 1e-14

    def test_single_mode(self):
        s = SpatialGrid(2, 32)
        x, y = s.mesh
        rho0 = Field(s, 1 + 0.3 * np.cos(x + 2 * y))
        chk = hilbert_corrector_check(rho0, 0.5)
        assert chk.err <= 1e-8
        assert chk.m1_formula.max_abs() > 0.1

    def test_divergence_identities(self):
        s = SpatialGrid(2, 32)
        cancel, ident = corrector_divergence_check(smooth_density(s), 0.5)
        assert cancel <= 1e-10 and ident <= 1e-10
