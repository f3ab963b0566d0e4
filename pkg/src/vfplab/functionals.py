"""Entropies, energies, relative entropy and the inequality checkers built on them.

Every integral is a grid quadrature; ``0 log 0 := 0`` and values at or below
``ENTROPY_FLOOR`` contribute nothing to logarithmic integrands.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .grid import Field, SpatialGrid, _spectral_derivative
from .riesz import RieszOperator
from .states import KineticState, ScalingRegime, maxwellian_array

__all__ = [
    "FunctionalReport",
    "boltzmann_entropy",
    "kinetic_energy",
    "free_energy",
    "relative_entropy",
    "entropy_decomposition",
    "fisher_dissipation",
    "check_ckp",
    "check_sharp_ckp",
    "check_log_sobolev",
    "check_coercivity",
    "energy_balance_residual",
    "kinetic_energy_bound",
    "report",
    "ENTROPY_FLOOR",
]

ENTROPY_FLOOR = 1e-300
FISHER_REL_FLOOR = 1e-13


def _xlogx(f: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f)
    pos = f > ENTROPY_FLOOR
    out[pos] = f[pos] * np.log(f[pos])
    return out


def _vec(u, space: SpatialGrid) -> np.ndarray:
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    if vals.shape == space.shape:
        vals = vals[None]
    return vals


def _log_maxwellian(rho: np.ndarray, u: np.ndarray, state: KineticState) -> np.ndarray:
    d = state.dim
    expand = (Ellipsis,) + (None,) * d
    dist2 = sum((c - u[i][expand]) ** 2 for i, c in enumerate(state.grid.xi))
    with np.errstate(divide="ignore"):
        logrho = np.log(rho)
    return logrho[expand] - 0.5 * d * math.log(2 * math.pi) - 0.5 * dist2


def boltzmann_entropy(state: KineticState) -> float:
    return float(_xlogx(state.f).sum() * state.grid.cell_volume)


def kinetic_energy(state: KineticState) -> float:
    return float((0.5 * state.grid.xi_sq * state.f).sum() * state.grid.cell_volume)


def free_energy(state: KineticState) -> float:
    return kinetic_energy(state) + boltzmann_entropy(state)


def _f_log_f_over_m(state: KineticState, rho: np.ndarray, u: np.ndarray) -> float:
    f = state.f
    pos = f > ENTROPY_FLOOR
    logm = _log_maxwellian(rho, u, state)
    integrand = np.zeros_like(f)
    integrand[pos] = f[pos] * (np.log(f[pos]) - logm[pos])
    return float(integrand.sum() * state.grid.cell_volume)


def relative_entropy(state: KineticState, rho, u) -> float:
    """``int f log(f/M) - int (f - M)`` for the local Maxwellian ``M = M_{rho,u}``."""
    rho_v = rho.values if isinstance(rho, Field) else np.asarray(rho, dtype=float)
    if np.min(rho_v) <= 0:
        raise ValueError("relative_entropy needs rho > 0")
    u_v = _vec(u, state.space)
    mass_m = maxwellian_array(rho_v, u_v, state.grid).sum() * state.grid.cell_volume
    return _f_log_f_over_m(state, rho_v, u_v) - (state.mass() - float(mass_m))


def entropy_decomposition(state: KineticState, rho, u) -> tuple[float, float, float]:
    """Split ``int f log(f/M_{rho,u})`` into micro, density and velocity parts."""
    rho_v = rho.values if isinstance(rho, Field) else np.asarray(rho, dtype=float)
    u_v = _vec(u, state.space)
    rho_f, _, u_f = (fld.values for fld in (state.rho, state.momentum, state.velocity))
    dx = state.space.cell_volume
    micro = _f_log_f_over_m(state, np.maximum(rho_f, ENTROPY_FLOOR), u_f)
    dens = np.zeros_like(rho_f)
    pos = rho_f > ENTROPY_FLOOR
    dens[pos] = rho_f[pos] * np.log(rho_f[pos] / rho_v[pos])
    density = float(dens.sum() * dx)
    velocity = float((0.5 * rho_f * np.sum((u_f - u_v) ** 2, axis=0)).sum() * dx)
    return micro, density, velocity


def _xi_gradient(state: KineticState) -> list[np.ndarray]:
    k = state.grid.velocity.k1d
    return [_spectral_derivative(state.f, ax, k) for ax in state.grid.v_axes]


def fisher_dissipation(state: KineticState, shift=None, rel_floor: float = FISHER_REL_FLOOR) -> float:
    """``int |grad_xi f + (xi - shift) f|^2 / f``; ``shift=None`` means zero shift.

    Points with ``f <= rel_floor * max f`` are excluded from the integrand.
    """
    f = state.f
    grad = _xi_gradient(state)
    d = state.dim
    expand = (Ellipsis,) + (None,) * d
    if shift is None:
        s = np.zeros((d,) + state.space.shape)
    else:
        s = _vec(shift, state.space)
    flux2 = sum((g + (c - s[i][expand]) * f) ** 2 for i, (g, c) in enumerate(zip(grad, state.grid.xi)))
    keep = f > max(rel_floor * float(np.max(f)), ENTROPY_FLOOR)
    out = np.zeros_like(f)
    out[keep] = flux2[keep] / f[keep]
    return float(out.sum() * state.grid.cell_volume)


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    holds: bool

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.holds))

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _kl(p: np.ndarray, q: np.ndarray, w: float) -> float:
    out = np.zeros_like(p)
    pos = p > ENTROPY_FLOOR
    out[pos] = p[pos] * np.log(p[pos] / q[pos])
    return float(out.sum() * w)


def _cell(f) -> tuple[np.ndarray, float]:
    if isinstance(f, Field):
        return f.values, f.grid.cell_volume
    return np.asarray(f, dtype=float), 1.0


def check_ckp(p, q, tol: float = 1e-12) -> InequalityCheck:
    """``||p - q||_1^2 <= 2 KL(p || q)`` for probability densities."""
    pv, w = _cell(p)
    qv, _ = _cell(q)
    lhs = float(np.abs(pv - qv).sum() * w) ** 2
    rhs = 2.0 * _kl(pv, qv, w)
    return InequalityCheck(lhs, rhs, lhs <= rhs + tol)


def check_sharp_ckp(p, q, tol: float = 1e-12) -> InequalityCheck:
    """``0.5 ||p-q||_1^2 + ||sqrt p - sqrt q||_2^2 <= 2 KL(p || q)``."""
    pv, w = _cell(p)
    qv, _ = _cell(q)
    l1 = float(np.abs(pv - qv).sum() * w)
    hell = float(((np.sqrt(pv) - np.sqrt(qv)) ** 2).sum() * w)
    lhs = 0.5 * l1**2 + hell
    rhs = 2.0 * _kl(pv, qv, w)
    return InequalityCheck(lhs, rhs, lhs <= rhs + tol)


def check_log_sobolev(state: KineticState, u, tol: float = 1e-12) -> InequalityCheck:
    """``int f log(f / M_{rho_f, u}) <= 0.5 int |grad f + (xi - u) f|^2 / f`` with ``u = u(x)``."""
    u_v = _vec(u, state.space)
    lhs = _f_log_f_over_m(state, np.maximum(state.rho.values, ENTROPY_FLOOR), u_v)
    rhs = 0.5 * fisher_dissipation(state, u_v)
    return InequalityCheck(lhs, rhs, lhs <= rhs + tol)


def check_coercivity(rho_f, rho, tol: float = 1e-12) -> InequalityCheck:
    """Pointwise quadratic-linear lower bound on the equal-mass entropy integrand.

    With ``h = rho_f log(rho_f/rho) - rho_f + rho`` (whose integral equals
    ``int rho_f log(rho_f/rho)`` when the masses agree) the bound is
    ``h >= (rho_f - rho)^2 / (4 rho)`` where ``rho_f <= 2 rho`` and
    ``h >= |rho_f - rho| / 4`` where ``rho_f > 2 rho``.  The bare integrand
    ``rho_f log(rho_f/rho)`` is negative wherever ``rho_f < rho``, so it admits no
    pointwise bound of this kind.

    Returned ``lhs``/``rhs`` are the bound and ``h`` at the tightest point;
    ``holds`` is true when every point satisfies the inequality.
    """
    a = np.asarray(rho_f.values if isinstance(rho_f, Field) else rho_f, dtype=float)
    b = np.asarray(rho.values if isinstance(rho, Field) else rho, dtype=float)
    if np.any(b <= 0) or np.any(a < 0):
        raise ValueError("check_coercivity needs rho > 0 and rho_f >= 0")
    ent = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0) / b), 0.0) - a + b
    bound = np.where(a <= 2.0 * b, (a - b) ** 2 / (4.0 * b), 0.25 * np.abs(a - b))
    gap = ent - bound
    worst = int(np.argmin(gap))
    return InequalityCheck(float(bound.flat[worst]), float(ent.flat[worst]), bool(np.all(gap >= -tol)))


@dataclass(frozen=True)
class FunctionalReport:
    time: float
    H: float
    K: float
    F: float
    P: float
    D: float
    relH: float = float("nan")
    relP: float = float("nan")
    modE: float = float("nan")
    dec_micro: float = float("nan")
    dec_density: float = float("nan")
    dec_velocity: float = float("nan")

    @property
    def decomp(self) -> tuple[float, float, float]:
        return self.dec_micro, self.dec_density, self.dec_velocity

    def as_dict(self) -> dict:
        return asdict(self)


def report(
    state: KineticState,
    op: RieszOperator,
    rho_ref: Field | None = None,
    u_ref=None,
) -> FunctionalReport:
    """All scalar functionals at one time; relative terms only when a reference is given."""
    H = boltzmann_entropy(state)
    K = kinetic_energy(state)
    P = op.interaction_energy(state.rho)
    D = fisher_dissipation(state)
    base = dict(time=state.time, H=H, K=K, F=H + K, P=P, D=D)
    if rho_ref is None:
        return FunctionalReport(**base)
    if u_ref is None:
        u_ref = np.zeros((state.dim,) + state.space.shape)
    relH = relative_entropy(state, rho_ref, u_ref)
    relP = op.relative_potential_energy(state.rho, rho_ref)
    micro, dens, vel = entropy_decomposition(state, rho_ref, u_ref)
    return FunctionalReport(
        **base,
        relH=relH,
        relP=relP,
        modE=relH + relP,
        dec_micro=micro,
        dec_density=dens,
        dec_velocity=vel,
    )


def _energy_curves(trace: Sequence[FunctionalReport], regime: ScalingRegime):
    t = np.array([r.time for r in trace])
    F = np.array([r.F for r in trace])
    P = np.array([r.P for r in trace])
    D = np.array([r.D for r in trace])
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (D[1:] + D[:-1]) * np.diff(t))])
    lhs = F + P / regime.B + integral / (regime.tau * regime.A)
    rhs = F[0] + P[0] / regime.B
    return t, lhs, rhs


def energy_balance_residual(trace: Sequence[FunctionalReport], regime: ScalingRegime) -> float:
    """``max_t |LHS(t) - RHS| / |RHS|`` for the total energy balance.

    LHS is ``F + P/B + (1/(tau A)) int_0^t D`` with the time integral by the
    trapezoid rule over the trace times.
    """
    _, lhs, rhs = _energy_curves(trace, regime)
    return float(np.max(np.abs(lhs - rhs)) / abs(rhs))


def energy_inequality_violation(trace: Sequence[FunctionalReport], regime: ScalingRegime) -> float:
    """Largest positive excess ``LHS(t) - RHS`` (zero when the inequality holds)."""
    _, lhs, rhs = _energy_curves(trace, regime)
    return float(max(0.0, np.max(lhs - rhs)))


def kinetic_energy_bound(trace: Sequence[FunctionalReport], regime: ScalingRegime, dim: int) -> InequalityCheck:
    """``int_0^T K dt <= d T + tau A K_0 + (tau A / B) P_0``."""
    t = np.array([r.time for r in trace])
    K = np.array([r.K for r in trace])
    lhs = float(np.sum(0.5 * (K[1:] + K[:-1]) * np.diff(t)))
    T = t[-1] - t[0]
    ta = regime.tau * regime.A
    rhs = dim * T + ta * trace[0].K + ta / regime.B * trace[0].P
    return InequalityCheck(lhs, rhs, lhs <= rhs)
