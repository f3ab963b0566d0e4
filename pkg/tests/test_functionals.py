import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vfplab.functionals import (
    FunctionalReport,
    boltzmann_entropy,
    check_ckp,
    check_coercivity,
    check_log_sobolev,
    check_sharp_ckp,
    energy_balance_residual,
    entropy_decomposition,
    fisher_dissipation,
    free_energy,
    kinetic_energy,
    kinetic_energy_bound,
    relative_entropy,
    report,
)
from vfplab.grid import Field, PhaseGrid, SpatialGrid, VelocityGrid, quadrature
from vfplab.harness import random_kinetic_state
from vfplab.riesz import RieszOperator
from vfplab.states import KineticState, ScalingRegime, maxwellian

S = SpatialGrid(1, 32)
V = VelocityGrid(1, 64, 8.0)
G = PhaseGrid(S, V)
X = S.mesh[0]


def density(seed):
    r = np.random.default_rng(seed)
    vals = 1 + 0.3 * np.cos(X + r.uniform(0, 6)) + 0.2 * r.uniform(-1, 1) * np.sin(3 * X)
    return Field(S, vals / (vals.sum() * S.cell_volume))


def velocity(seed):
    r = np.random.default_rng(seed)
    return Field(S, (r.uniform(-1, 1) * np.cos(X) + r.uniform(-0.5, 0.5))[None])


seeds = st.integers(0, 1_000_000)


class TestBasicFunctionals:
    def test_kinetic_energy_of_unit_maxwellian(self):
        f = maxwellian(S.constant(1 / S.length), np.zeros((1, 32)), V)
        assert kinetic_energy(f) == pytest.approx(0.5, abs=1e-12)

    def test_free_energy_of_centered_maxwellian(self):
        # for f = M_{rho,0}: F = int rho log rho - (d/2) log(2 pi) mass
        rho = density(1)
        f = maxwellian(rho, np.zeros((1, 32)), V)
        expected = quadrature(Field(S, rho.values * np.log(rho.values))) - 0.5 * math.log(2 * math.pi)
        assert free_energy(f) == pytest.approx(expected, abs=1e-10)
        assert free_energy(f) == kinetic_energy(f) + boltzmann_entropy(f)

    def test_entropy_of_doubled_density(self):
        g = maxwellian(density(2) * 0.5, np.zeros((1, 32)), V)
        doubled = KineticState(G, 2 * g.f)
        direct = float(np.sum(2 * g.f * np.log(2 * g.f)) * G.cell_volume)
        assert boltzmann_entropy(doubled) == pytest.approx(direct, rel=1e-13)
        assert boltzmann_entropy(doubled) == pytest.approx(
            2 * boltzmann_entropy(g) + 2 * g.mass() * math.log(2), rel=1e-12
        )

    def test_zero_log_zero(self):
        f = np.zeros(G.shape)
        f[3, 30] = 1.0
        assert boltzmann_entropy(KineticState(G, f)) == 0.0


class TestRelativeEntropy:
    def test_self_is_zero(self):
        rho, u = density(3), velocity(3)
        assert abs(relative_entropy(maxwellian(rho, u, V), rho, u)) < 1e-10

    def test_unit_velocity_shift(self):
        rho = S.constant(1 / S.length)
        f = maxwellian(rho, np.ones((1, 32)), V)
        assert relative_entropy(f, rho, np.zeros((1, 32))) == pytest.approx(0.5, abs=1e-9)

    def test_requires_positive_rho(self):
        f = maxwellian(density(1), np.zeros((1, 32)), V)
        with pytest.raises(ValueError):
            relative_entropy(f, S.constant(0.0), np.zeros((1, 32)))

    @given(seeds)
    def test_nonnegative_and_matches_decomposition(self, seed):
        f = random_kinetic_state(G, np.random.default_rng(seed))
        rho, u = density(seed + 1), velocity(seed + 2)
        h = relative_entropy(f, rho, u)
        parts = entropy_decomposition(f, rho, u)
        assert h >= -1e-12
        assert min(parts) >= -1e-10
        assert abs(sum(parts) - h) <= 1e-9 * (1 + abs(h))


class TestDecomposition:
    def test_maxwellian_target(self):
        rho, u = density(5), velocity(5)
        assert np.allclose(entropy_decomposition(maxwellian(rho, u, V), rho, u), 0.0, atol=1e-10)

    def test_velocity_only(self):
        rho, u = density(6), velocity(6)
        f = maxwellian(rho, u.values + 1.0, V)
        micro, dens, vel = entropy_decomposition(f, rho, u)
        assert abs(micro) < 1e-10 and abs(dens) < 1e-10
        assert vel == pytest.approx(0.5, abs=1e-9)

    def test_rearranged_density(self):
        rho = density(7)
        shuffled = Field(S, np.roll(rho.values[::-1], 5))
        u = velocity(7)
        micro, dens, vel = entropy_decomposition(maxwellian(shuffled, u, V), rho, u)
        direct = float(np.sum(shuffled.values * np.log(shuffled.values / rho.values)) * S.cell_volume)
        assert abs(micro) < 1e-10 and abs(vel) < 1e-10
        assert dens == pytest.approx(direct, rel=1e-10)


class TestFisher:
    def test_centered_maxwellian(self):
        assert fisher_dissipation(maxwellian(density(1), np.zeros((1, 32)), V)) < 1e-10

    def test_drifted_maxwellian(self):
        rho, u = density(2), velocity(2)
        f = maxwellian(rho, u, V)
        expected = quadrature(rho * Field(S, u.values[0] ** 2))
        assert fisher_dissipation(f) == pytest.approx(expected, rel=1e-9)
        assert fisher_dissipation(f, u) < 1e-10

    @given(seeds)
    def test_shift_identity(self, seed):
        f = random_kinetic_state(G, np.random.default_rng(seed))
        # the states are strictly positive, so no point needs the vacuum guard
        shifted = fisher_dissipation(f, f.velocity, rel_floor=0.0)
        extra = quadrature(f.rho * Field(S, np.sum(f.velocity.values**2, axis=0)))
        D = fisher_dissipation(f, rel_floor=0.0)
        assert D >= 0
        assert abs(D - shifted - extra) <= 1e-9 * D


class TestInequalities:
    def test_ckp_equal(self):
        p = density(1)
        assert tuple(check_ckp(p, p)) == (0.0, 0.0, True)

    @given(seeds)
    def test_ckp_and_sharp_random(self, seed):
        p, q = density(seed), density(seed + 1)
        assert check_ckp(p, q).holds
        assert check_sharp_ckp(p, q).holds

    def test_sharp_ckp_is_tighter(self):
        p, q = density(10), density(11)
        assert check_sharp_ckp(p, q).lhs > check_ckp(p, q).lhs / 2

    def test_log_sobolev_maxwellian(self):
        rho, u = density(3), velocity(3)
        lhs, rhs, holds = check_log_sobolev(maxwellian(rho, u, V), u)
        assert abs(lhs) < 1e-10 and abs(rhs) < 1e-10 and holds

    def test_log_sobolev_bimodal(self):
        rho = density(4)
        f = 0.5 * (maxwellian(rho, np.full((1, 32), 1.5), V).f + maxwellian(rho, np.full((1, 32), -1.5), V).f)
        check = check_log_sobolev(KineticState(G, f), np.zeros((1, 32)))
        assert check.holds and check.slack > 0.1

    @given(seeds)
    def test_log_sobolev_random(self, seed):
        f = random_kinetic_state(G, np.random.default_rng(seed))
        assert check_log_sobolev(f, velocity(seed)).holds

    def test_coercivity_examples(self):
        # rho_f = 3, rho = 1: h = 3 log 3 - 2 > |3 - 1| / 4
        lhs, rhs, holds = check_coercivity(np.array([3.0]), np.array([1.0]))
        assert (lhs, rhs, holds) == (0.5, pytest.approx(3 * math.log(3) - 2), True)
        assert check_coercivity(np.array([1.0]), np.array([1.0])).holds
        assert check_coercivity(np.array([0.0]), np.array([2.0])).holds

    @given(st.lists(st.floats(1e-6, 50), min_size=4, max_size=4), st.lists(st.floats(1e-3, 50), min_size=4, max_size=4))
    def test_coercivity_random(self, a, b):
        assert check_coercivity(np.array(a), np.array(b)).holds

    def test_coercivity_rejects_bad_input(self):
        with pytest.raises(ValueError):
            check_coercivity(np.array([1.0]), np.array([0.0]))


class TestReports:
    def test_report_relative_terms(self):
        rho, u = density(8), velocity(8)
        op = RieszOperator(0.25, S)
        f = maxwellian(rho, u, V)
        r = report(f, op, rho, u)
        assert r.modE == r.relH + r.relP
        assert abs(r.relH) < 1e-10 and abs(r.relP) < 1e-14
        assert r.F == r.H + r.K
        plain = report(f, op)
        assert math.isnan(plain.relH)

    def test_energy_balance_of_constant_trace(self):
        reg = ScalingRegime.make("diffusive", 0.1, 0.25)
        rows = [FunctionalReport(t, H=-1.0, K=0.5, F=-0.5, P=0.1, D=0.0) for t in (0.0, 0.1, 0.2)]
        assert energy_balance_residual(rows, reg) == 0.0
        check = kinetic_energy_bound(rows, reg, 1)
        assert check.lhs == pytest.approx(0.1) and check.holds
