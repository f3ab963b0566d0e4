"""Macroscopic limit equations, corrector fields and velocity gyro-averaging.

The three limits, with ``Phi = (-Delta)^{-alpha} rho``:

* diffusive:  ``d_t rho = div(rho grad Phi) + Delta rho``  (aggregation-diffusion)
* high-field: ``d_t rho = div(rho grad Phi)``               (aggregation)
* gSQG:       ``d_t rho = div(rho grad^perp Phi)``          (generalized SQG, ``d = 2``)

All are solved pseudospectrally with classical RK4 on 2/3-dealiased products;
the Laplacian of the diffusive case is integrated exactly through the factor
``exp(-|k|^2 t)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .grid import (
    Field,
    PhaseGrid,
    SpatialGrid,
    VelocityGrid,
    divergence,
    perp_gradient,
    quadrature,
    read_field,
    spectral_gradient,
    write_field,
)
from .kinetic import rotate_velocity
from .riesz import RieszOperator
from .states import MacroState, Regime, ScalingRegime, maxwellian_array

__all__ = [
    "MacroRunConfig",
    "MacroTrajectory",
    "CorrectorFields",
    "HilbertCheck",
    "macro_rhs",
    "macro_step",
    "run_macro",
    "default_macro_dt",
    "corrector",
    "gyro_average",
    "gyro_generator",
    "hilbert_corrector_check",
    "corrector_divergence_check",
    "free_energy_ad",
    "write_trajectory",
    "read_trajectory",
]

log = logging.getLogger(__name__)


class PositivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class MacroRunConfig:
    regime: ScalingRegime
    dt: float
    t_end: float
    dealias: bool = True
    floor: float = 1e-12
    store_every: int = 1


def _fft(v: np.ndarray, dim: int) -> np.ndarray:
    return np.fft.fftn(v, axes=tuple(range(-dim, 0)))


def _ifft(v: np.ndarray, dim: int) -> np.ndarray:
    return np.real(np.fft.ifftn(v, axes=tuple(range(-dim, 0))))


class _Rhs:
    """Dealiased right-hand side, excluding the diffusive Laplacian."""

    def __init__(self, regime: ScalingRegime, space: SpatialGrid, dealias: bool):
        self.regime = regime
        self.space = space
        self.op = RieszOperator(regime.alpha, space)
        self.mask = space.dealias_mask if dealias else np.ones(space.shape, dtype=bool)
        self.ik = [1j * k for k in space.kmesh]
        nyq = [np.abs(k) == np.abs(space.k1d).max() for k in space.kmesh]
        for i, m in enumerate(nyq):
            self.ik[i] = np.where(m, 0.0, self.ik[i])

    def velocity_hat(self, rho_hat: np.ndarray) -> list[np.ndarray]:
        """Fourier coefficients of the advecting field ``v`` in ``d_t rho + div(rho v) = 0``."""
        phi_hat = self.op.multiplier * rho_hat
        grad = [ik * phi_hat for ik in self.ik]
        if self.regime.name is Regime.GSQG:
            return [grad[1], -grad[0]]  # v = -grad^perp Phi = (d2 Phi, -d1 Phi)
        return [-g for g in grad]

    def __call__(self, rho_hat: np.ndarray) -> np.ndarray:
        d = self.space.dim
        rho_hat = rho_hat * self.mask
        rho = _ifft(rho_hat, d)
        v = [_ifft(vh * self.mask, d) for vh in self.velocity_hat(rho_hat)]
        if self.regime.name is Regime.GSQG:
            # advective form: d_t rho = -v . grad rho  (v divergence free)
            grad_rho = [_ifft(ik * rho_hat, d) for ik in self.ik]
            adv = sum(vi * gi for vi, gi in zip(v, grad_rho))
            return -_fft(adv, d) * self.mask
        flux = [_fft(rho * vi, d) * self.mask for vi in v]
        return -sum(ik * fl for ik, fl in zip(self.ik, flux))


def macro_rhs(regime: ScalingRegime, rho: Field, dealias: bool = True) -> Field:
    """Full ``d_t rho`` of the limit equation at ``rho``."""
    space = rho.grid
    r = _Rhs(regime, space, dealias)
    rho_hat = _fft(rho.values, space.dim)
    out = r(rho_hat)
    if regime.name is Regime.DIFFUSIVE:
        out = out - space.ksq * rho_hat
    return Field(space, _ifft(out, space.dim))


def default_macro_dt(regime: ScalingRegime, rho: Field, cfl: float = 0.2) -> float:
    """Advective CFL step, also capped by the explicit stability of the nonlocal drift."""
    space = rho.grid
    r = _Rhs(regime, space, True)
    v = [_ifft(vh, space.dim) for vh in r.velocity_hat(_fft(rho.values, space.dim))]
    vmax = float(np.max(np.sqrt(sum(vi**2 for vi in v))))
    kmax = float(np.abs(space.k1d).max()) * 2.0 / 3.0
    drift = float(np.max(rho.values)) * kmax ** (2.0 - 2.0 * regime.alpha)
    cands = [cfl * space.spacing / vmax if vmax > 0 else math.inf, 1.0 / drift if drift > 0 else math.inf]
    return float(min(cands + [0.01]))


def macro_step(state: MacroState, cfg: MacroRunConfig) -> MacroState:
    """One RK4 step (integrating-factor RK4 for the diffusive limit)."""
    regime = cfg.regime
    space = state.rho.grid
    rhs = _Rhs(regime, space, cfg.dealias)
    new_hat = _rk4(rhs, _fft(state.rho.values, space.dim), cfg.dt, regime.name is Regime.DIFFUSIVE)
    rho = Field(space, _ifft(new_hat, space.dim))
    t = state.time + cfg.dt
    if np.min(rho.values) < cfg.floor:
        raise PositivityError(f"density fell below {cfg.floor:g} at t={t:.6g}")
    return MacroState(rho, t, regime, cfg.floor)


def _rk4(rhs: _Rhs, u: np.ndarray, h: float, diffusive: bool) -> np.ndarray:
    if not diffusive:
        a = rhs(u)
        b = rhs(u + 0.5 * h * a)
        c = rhs(u + 0.5 * h * b)
        d = rhs(u + h * c)
        return u + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
    ksq = rhs.space.ksq
    e1 = np.exp(-ksq * h)
    e2 = np.exp(-ksq * 0.5 * h)
    a = rhs(u)
    b = rhs(e2 * (u + 0.5 * h * a))
    c = rhs(e2 * u + 0.5 * h * b)
    d = rhs(e1 * u + h * e2 * c)
    return e1 * u + (h / 6.0) * (e1 * a + 2.0 * e2 * (b + c) + d)


@dataclass
class MacroTrajectory:
    """Stored limit densities with cubic Hermite dense output in time."""

    regime: ScalingRegime
    times: np.ndarray
    rhos: list[Field]
    drhos: list[Field] = field(repr=False)

    def density(self, t: float) -> Field:
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"t={t} outside the stored trajectory [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t))
        if i < times.size and abs(times[i] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.rhos[i]
        if i > 0 and abs(times[i - 1] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.rhos[i - 1]
        i = min(max(i, 1), times.size - 1)
        t0, t1 = times[i - 1], times[i]
        h = t1 - t0
        s = (t - t0) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        v = (
            h00 * self.rhos[i - 1].values
            + h10 * h * self.drhos[i - 1].values
            + h01 * self.rhos[i].values
            + h11 * h * self.drhos[i].values
        )
        return Field(self.rhos[0].grid, v)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


def run_macro(rho0: Field, cfg: MacroRunConfig, on_step=None) -> MacroTrajectory:
    """Integrate to ``cfg.t_end``; the last step is shortened to land on ``t_end``."""
    state = MacroState(rho0, 0.0, cfg.regime, cfg.floor)
    nsteps = max(1, math.ceil(cfg.t_end / cfg.dt - 1e-9))
    dt = cfg.t_end / nsteps
    step_cfg = MacroRunConfig(cfg.regime, dt, cfg.t_end, cfg.dealias, cfg.floor, cfg.store_every)
    times, rhos, drhos = [0.0], [state.rho], [macro_rhs(cfg.regime, state.rho, cfg.dealias)]
    for n in range(1, nsteps + 1):
        state = macro_step(state, step_cfg)
        state = MacroState(state.rho, n * dt, cfg.regime, cfg.floor)
        if on_step is not None:
            on_step(state)
        if n % cfg.store_every == 0 or n == nsteps:
            times.append(state.time)
            rhos.append(state.rho)
            drhos.append(macro_rhs(cfg.regime, state.rho, cfg.dealias))
    return MacroTrajectory(cfg.regime, np.array(times), rhos, drhos)


def free_energy_ad(rho: Field, op: RieszOperator) -> float:
    """``int rho log rho + P[rho]``, the Lyapunov functional of the aggregation-diffusion limit."""
    r = rho.values
    return quadrature(Field(rho.grid, r * np.log(r))) + op.interaction_energy(rho)


def write_trajectory(directory, traj: MacroTrajectory, every: int = 1) -> Path:
    """One field binary per stored time plus ``index.txt`` with ``t filename`` lines.

    Every ``every``-th stored state is written; the final state always is.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    picks = list(range(0, len(traj.rhos), every))
    if picks[-1] != len(traj.rhos) - 1:
        picks.append(len(traj.rhos) - 1)
    for i in picks:
        name = f"rho_{i:05d}.bin"
        write_field(directory / name, traj.rhos[i])
        lines.append(f"{float(traj.times[i])!r} {name}")
    index = directory / "index.txt"
    index.write_text(
        f"# regime={traj.regime.name.value} alpha={traj.regime.alpha!r}\n" + "\n".join(lines) + "\n"
    )
    return index


def read_trajectory(directory) -> list[tuple[float, Field]]:
    directory = Path(directory)
    out = []
    for line in (directory / "index.txt").read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        t, name = line.split()
        out.append((float(t), read_field(directory / name)))
    return out


# ---------------------------------------------------------------------------
# corrector fields


@dataclass(frozen=True)
class CorrectorFields:
    u_eps: Field
    e_eps: Field


def _advect(u: np.ndarray, space: SpatialGrid) -> np.ndarray:
    """``(u . grad) u`` for a vector field given as an array ``(d,) + shape``."""
    out = np.zeros_like(u)
    for j in range(space.dim):
        g = spectral_gradient(Field(space, u[j])).values
        out[j] = sum(u[i] * g[i] for i in range(space.dim))
    return out


def corrector(regime: ScalingRegime, rho: Field, eps: float | None = None) -> CorrectorFields:
    """Velocity ``u_eps`` and remainder ``e_eps`` of the moment form of each limit.

    ``d_t u_eps`` is evaluated through the chain rule with ``d_t rho`` from the
    limit equation, so the result is free of time-differencing noise.
    """
    eps = regime.epsilon if eps is None else float(eps)
    space = rho.grid
    r = rho.values
    if np.min(r) <= 0:
        raise ValueError("corrector needs rho > 0")
    op = RieszOperator(regime.alpha, space)
    rho_t = macro_rhs(regime, rho)
    log_rho = Field(space, np.log(r))
    name = regime.name
    if name is Regime.DIFFUSIVE:
        u = -eps * (op.force(rho).values + spectral_gradient(log_rho).values)
        u_t = -eps * (op.force(rho_t).values + spectral_gradient(Field(space, rho_t.values / r)).values)
        e = u_t + _advect(u, space) / eps
    elif name is Regime.HIGHFIELD:
        u = -op.force(rho).values
        u_t = -op.force(rho_t).values
        e = u_t + _advect(u, space) + spectral_gradient(rho).values / r
    else:
        u = -eps * (op.perp_force(rho).values + perp_gradient(log_rho).values)
        u_t = -eps * (op.perp_force(rho_t).values + perp_gradient(Field(space, rho_t.values / r)).values)
        e = eps * u_t + _advect(u, space)
    return CorrectorFields(Field(space, u), Field(space, e))


# ---------------------------------------------------------------------------
# gyro-averaging


def _check_2d_velocity(g: Field) -> PhaseGrid:
    if not isinstance(g.grid, PhaseGrid) or g.grid.dim != 2:
        raise ValueError("gyro-averaging needs a two-dimensional phase grid")
    return g.grid


def gyro_average(g: Field, n_theta: int | None = None) -> Field:
    """Angular average over rotations of the velocity plane.

    Each rotated copy is an exact Fourier-sheared rotation of the grid data; the
    trapezoid rule with ``n_theta`` angles (default four per velocity point) is
    exact for angular modes below ``n_theta``.
    """
    grid = _check_2d_velocity(g)
    n_theta = n_theta or 4 * grid.velocity.n
    eta = grid.velocity.k1d
    xi = grid.velocity.points
    acc = np.zeros_like(g.values)
    for m in range(n_theta):
        acc += rotate_velocity(g.values, 2.0 * np.pi * m / n_theta, eta, xi)
    return Field(grid, acc / n_theta)


def gyro_generator(g: Field) -> Field:
    """``L_{-1} g = xi^perp . grad_xi g`` with ``xi^perp = (-xi_2, xi_1)``."""
    grid = _check_2d_velocity(g)
    grad = spectral_gradient(g, wrt="xi").values
    x1, x2 = grid.xi
    return Field(grid, -x2 * grad[0] + x1 * grad[1])


class HilbertCheck(NamedTuple):
    m1_kinetic: Field
    m1_formula: Field
    err: float


def _first_corrector(rho0: Field, op: RieszOperator, velocity: VelocityGrid) -> tuple[PhaseGrid, np.ndarray]:
    space = rho0.grid
    grid = PhaseGrid(space, velocity)
    a = spectral_gradient(rho0).values + rho0.values * op.force(rho0).values
    a_perp = np.stack([-a[1], a[0]])
    ones = np.ones(space.shape)
    m = maxwellian_array(ones, np.zeros((2,) + space.shape), grid)
    proj = sum(a_perp[i][..., None, None] * grid.xi[i] for i in range(2))
    return grid, -proj * m


def hilbert_corrector_check(
    rho0: Field, alpha: float, velocity: VelocityGrid | None = None
) -> HilbertCheck:
    """Compare the velocity moment of the first-order corrector with its closed form.

    ``f1 = -((grad rho0 + rho0 grad Phi0)^perp . xi) M_{1,0}`` must carry the flux
    ``m1 = -grad^perp rho0 - rho0 grad^perp Phi0``.
    """
    space = rho0.grid
    if not isinstance(space, SpatialGrid) or space.dim != 2:
        raise ValueError("hilbert_corrector_check needs a 2D spatial density")
    velocity = velocity or VelocityGrid(2, 64, 8.0)
    op = RieszOperator(alpha, space)
    grid, f1 = _first_corrector(rho0, op, velocity)
    dv = velocity.cell_volume
    m1_kin = np.stack([(f1 * c).sum(axis=grid.v_axes) * dv for c in grid.xi])
    m1_formula = -perp_gradient(rho0).values - rho0.values * op.perp_force(rho0).values
    err = float(np.max(np.abs(m1_kin - m1_formula)))
    return HilbertCheck(Field(space, m1_kin), Field(space, m1_formula), err)


def corrector_divergence_check(rho0: Field, alpha: float) -> tuple[float, float]:
    """``(max|div grad^perp rho0|, max|div m1 + div(rho0 grad^perp Phi0)|)``."""
    op = RieszOperator(alpha, rho0.grid)
    perp_rho = perp_gradient(rho0)
    m1 = -perp_rho.values - rho0.values * op.perp_force(rho0).values
    flux = Field(rho0.grid, rho0.values * op.perp_force(rho0).values)
    cancel = divergence(perp_rho).max_abs()
    identity = (divergence(Field(rho0.grid, m1)) + divergence(flux)).max_abs()
    return cancel, identity
