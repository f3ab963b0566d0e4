import math

import numpy as np
import pytest

from vfplab.functionals import energy_balance_residual, fisher_dissipation
from vfplab.grid import PhaseGrid, SpatialGrid, VelocityGrid
from vfplab.kinetic import (
    KineticRunConfig,
    SolverError,
    Stepper,
    default_dt,
    mehler_matrix,
    read_checkpoint,
    rotate_velocity,
    run,
    step,
    write_checkpoint,
)
from vfplab.states import KineticState, ScalingRegime, maxwellian, prepared_data, smooth_density

G1 = PhaseGrid(SpatialGrid(1, 32), VelocityGrid(1, 64, 8.0))


def equilibrium(grid):
    s = grid.space
    return maxwellian(s.constant(1 / s.cell_volume / s.n**s.dim), np.zeros((s.dim,) + s.shape), grid.velocity)


def mol_rhs(f, grid, regime):
    """Independent method-of-lines right-hand side in one dimension.

    ``A f_t = -B xi f_x + Phi_x f_xi + (1/tau) (f_xi + xi f)_xi`` with all
    derivatives spectral and ``Phi = |k|^{-2 alpha} rho_hat``.
    """
    A, B, tau, alpha = regime.A, regime.B, regime.tau, regime.alpha
    n, nv = f.shape
    L = grid.space.length
    V = grid.velocity
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    eta = 2 * np.pi * np.fft.fftfreq(nv, d=V.spacing)
    xi = V.points[None, :]
    rho = f.sum(axis=1) * V.spacing
    mult = np.zeros(n)
    mult[1:] = np.abs(k[1:]) ** (-2 * alpha)
    phi_x = np.real(np.fft.ifft(1j * k * mult * np.fft.fft(rho)))

    def dxi(g):
        return np.real(np.fft.ifft(1j * eta[None, :] * np.fft.fft(g, axis=1), axis=1))

    f_x = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(f, axis=0), axis=0))
    f_xi = dxi(f)
    return (-B * xi * f_x + phi_x[:, None] * f_xi + dxi(f_xi + xi * f) / tau) / A


def rk4_reference(f, grid, regime, t, substeps):
    h = t / substeps
    for _ in range(substeps):
        k1 = mol_rhs(f, grid, regime)
        k2 = mol_rhs(f + 0.5 * h * k1, grid, regime)
        k3 = mol_rhs(f + 0.5 * h * k2, grid, regime)
        k4 = mol_rhs(f + h * k3, grid, regime)
        f = f + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return f


class TestSubsteps:
    def test_equilibrium_is_stationary(self):
        reg = ScalingRegime.make("diffusive", 0.1, 0.25)
        st = equilibrium(G1)
        out = step(st, KineticRunConfig(reg, G1, 1.0, dt=1e-4, zero_force=True))
        assert np.max(np.abs(out.f - st.f)) < 1e-10
        assert out.time == pytest.approx(1e-4)

    def test_ou_mean_decay(self):
        reg = ScalingRegime.make("diffusive", 0.5, 0.25)
        st = maxwellian(G1.space.constant(1 / G1.space.length), np.full((1, 32), 1.3), G1.velocity)
        dt = 0.05
        stepper = Stepper(reg, G1, dt)
        f = KineticState(G1, stepper.relax(st.f))
        s = dt / (reg.tau * reg.A)
        # the drifted tail outside the velocity box is about 2e-10
        assert np.max(np.abs(f.velocity.values - 1.3 * math.exp(-s))) < 1e-9
        second = float((f.f * G1.xi_sq).sum() * G1.cell_volume)
        assert second == pytest.approx(1 + (1.3 * math.exp(-s)) ** 2, abs=1e-9)

    def test_mehler_columns_sum_to_one(self):
        K = mehler_matrix(VelocityGrid(1, 32, 8.0).points, 0.3)
        assert np.max(np.abs(K.sum(axis=0) - 1.0)) < 1e-13

    def test_mehler_semigroup(self):
        xi = VelocityGrid(1, 64, 8.0).points
        m = np.exp(-0.5 * (xi - 1.0) ** 2)
        a = mehler_matrix(xi, 0.2) @ (mehler_matrix(xi, 0.3) @ m)
        b = mehler_matrix(xi, 0.5) @ m
        assert np.max(np.abs(a - b)) < 1e-10

    def test_relaxation_lowers_dissipation(self):
        reg = ScalingRegime.make("diffusive", 0.2, 0.25)
        rho = smooth_density(G1.space)
        f = 0.5 * (maxwellian(rho, np.full((1, 32), 1.2), G1.velocity).f + maxwellian(rho, np.full((1, 32), -0.8), G1.velocity).f)
        st = KineticState(G1, f)
        after = KineticState(G1, Stepper(reg, G1, 1e-3).relax(f))
        assert fisher_dissipation(after, after.velocity) < fisher_dissipation(st, st.velocity)

    def test_rotation_preserves_radial_moments(self):
        g = PhaseGrid(SpatialGrid(2, 8), VelocityGrid(2, 48, 8.0))
        rho = smooth_density(g.space)
        st = maxwellian(rho, np.stack([0.6 * np.ones((8, 8)), -0.3 * np.ones((8, 8))]), g.velocity)
        out = rotate_velocity(st.f, 0.37, g.velocity.k1d, g.velocity.points)
        rot = KineticState(g, out)
        assert np.max(np.abs(rot.rho.values - st.rho.values)) < 1e-10
        e0 = float((st.f * g.xi_sq).sum() * g.cell_volume)
        e1 = float((out * g.xi_sq).sum() * g.cell_volume)
        assert abs(e1 - e0) < 1e-10
        # the mean velocity turns counter-clockwise
        c, s = math.cos(0.37), math.sin(0.37)
        u = rot.velocity.values[:, 0, 0]
        assert u == pytest.approx([c * 0.6 + s * 0.3, s * 0.6 - c * 0.3], abs=1e-10)

    def test_quarter_turn_is_exact(self):
        g = PhaseGrid(SpatialGrid(2, 8), VelocityGrid(2, 16, 8.0))
        f = np.random.default_rng(0).random(g.shape)
        back = f
        for _ in range(4):
            back = rotate_velocity(back, 0.5 * math.pi, g.velocity.k1d, g.velocity.points)
        assert np.array_equal(back, f)


class TestStepAccuracy:
    def test_against_rk4_method_of_lines(self):
        reg = ScalingRegime.make("diffusive", 0.5, 0.25)
        grid = G1
        rho = smooth_density(grid.space)
        x = grid.space.mesh[0]
        st = maxwellian(rho, (0.4 * np.sin(x))[None], grid.velocity)
        errs = []
        for dt in (0.006, 0.003):
            out = step(st, KineticRunConfig(reg, grid, 1.0, dt=dt))
            ref = rk4_reference(st.f, grid, reg, dt, 100)
            errs.append(float(np.max(np.abs(out.f - ref))))
        assert errs[1] < 1e-7
        # local error of a second-order splitting scales like dt^3
        assert math.log2(errs[0] / errs[1]) > 2.6


class TestRuns:
    def test_cfl_violation(self):
        reg = ScalingRegime.make("diffusive", 0.1, 0.25)
        with pytest.raises(SolverError):
            run(equilibrium(G1), KineticRunConfig(reg, G1, 0.1, dt=0.05))

    def test_default_dt_respects_limits(self):
        reg = ScalingRegime.make("highfield", 0.1, 0.25)
        cfg = KineticRunConfig(reg, G1, 0.1)
        dt, _ = cfg.resolve_dt(1.0)
        assert dt == default_dt(reg, G1, 1.0)
        assert dt <= reg.epsilon * reg.tau * reg.A

    def test_equilibrium_run_without_force(self):
        reg = ScalingRegime.make("diffusive", 0.2, 0.25)
        kr = run(equilibrium(G1), KineticRunConfig(reg, G1, 0.05, zero_force=True, report_every=10))
        assert max(r.D for r in kr.trace) < 1e-10
        assert max(abs(r.F - kr.trace[0].F) for r in kr.trace) < 1e-10
        assert energy_balance_residual(kr.trace, reg) < 1e-10

    @pytest.mark.parametrize("name", ["diffusive", "highfield"])
    def test_mass_and_energy_inequality(self, name):
        reg = ScalingRegime.make(name, 0.2, 0.25)
        rho0 = smooth_density(G1.space)
        init = prepared_data("well", reg, rho0, None, 0.0, G1.velocity)
        kr = run(init, KineticRunConfig(reg, G1, 0.1))
        assert kr.mass_drift <= 1e-10
        assert energy_balance_residual(kr.trace, reg) <= 1e-3
        totals = [r.F + r.P / reg.B for r in kr.trace]
        assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))

    def test_gsqg_step_conserves_mass(self):
        g = PhaseGrid(SpatialGrid(2, 8), VelocityGrid(2, 24, 8.0))
        reg = ScalingRegime.make("gsqg", 0.4, 0.5)
        init = prepared_data("well", reg, smooth_density(g.space), None, 0.0, g.velocity)
        kr = run(init, KineticRunConfig(reg, g, 0.02))
        assert kr.mass_drift <= 1e-12 * kr.steps + 1e-14

    def test_checkpoint_roundtrip(self, tmp_path):
        reg = ScalingRegime.make("highfield", 0.2, 0.25)
        st = prepared_data("well", reg, smooth_density(G1.space), None, 0.0, G1.velocity).with_f(
            equilibrium(G1).f, 0.25
        )
        write_checkpoint(tmp_path / "c.bin", st, reg, 1e-3)
        back, meta = read_checkpoint(tmp_path / "c.bin")
        assert np.array_equal(back.f, st.f) and back.time == 0.25
        assert meta["regime"] == "highfield" and meta["dt"] == 1e-3
