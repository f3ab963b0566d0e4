"""Scaling regimes, kinetic/macroscopic states, Maxwellians and initial-data families."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Field, PhaseGrid, SpatialGrid, VelocityGrid, quadrature
from .riesz import RieszOperator

__all__ = [
    "Regime",
    "ScalingRegime",
    "KineticState",
    "MacroState",
    "DataKind",
    "maxwellian",
    "moments",
    "prepared_data",
    "limiting_velocity",
    "smooth_density",
    "single_mode_velocity",
    "RHO_FLOOR",
]

RHO_FLOOR = 1e-12


class Regime(str, enum.Enum):
    DIFFUSIVE = "diffusive"
    HIGHFIELD = "highfield"
    GSQG = "gsqg"


class DataKind(str, enum.Enum):
    WELL_PREPARED = "well"
    MILDLY_PREPARED = "mild"


_COEFFS = {
    # name -> (A, B, tau, magnetic) as functions of eps
    Regime.DIFFUSIVE: lambda e: (e, 1.0, e, False),
    Regime.HIGHFIELD: lambda e: (e, e, 1.0, False),
    Regime.GSQG: lambda e: (e, 1.0, 1.0, True),
}


@dataclass(frozen=True)
class ScalingRegime:
    """Parameter bundle ``(A, B, tau, eps, alpha, magnetic)`` of the scaled kinetic equation.

    Build with :meth:`make`; the coefficients are validated against the regime name.
    """

    name: Regime
    epsilon: float
    alpha: float
    A: float
    B: float
    tau: float
    magnetic: bool

    def __post_init__(self):
        object.__setattr__(self, "name", Regime(self.name))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        A, B, tau, magnetic = _COEFFS[self.name](self.epsilon)
        if not np.allclose((self.A, self.B, self.tau), (A, B, tau)) or self.magnetic != magnetic:
            raise ValueError(
                f"{self.name.value} requires (A, B, tau, magnetic) = {(A, B, tau, magnetic)}, "
                f"got {(self.A, self.B, self.tau, self.magnetic)}"
            )

    @classmethod
    def make(cls, name, epsilon: float, alpha: float) -> "ScalingRegime":
        name = Regime(name)
        A, B, tau, magnetic = _COEFFS[name](epsilon)
        return cls(name, float(epsilon), float(alpha), A, B, tau, magnetic)

    def check_dim(self, dim: int) -> None:
        if self.name is Regime.GSQG and dim != 2:
            raise ValueError("the gSQG regime needs d = 2")


@dataclass(frozen=True)
class KineticState:
    """Phase-space density with lazily computed velocity moments."""

    grid: PhaseGrid
    f: np.ndarray
    time: float = 0.0
    rho_floor: float = RHO_FLOOR

    def __post_init__(self):
        if self.f.shape != self.grid.shape:
            raise ValueError(f"f has shape {self.f.shape}, grid expects {self.grid.shape}")

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def space(self) -> SpatialGrid:
        return self.grid.space

    def mass(self) -> float:
        return float(self.f.sum() * self.grid.cell_volume)

    def clipped(self) -> np.ndarray:
        return np.clip(self.f, 0.0, None)

    @cached_property
    def _moments(self):
        dv = self.grid.velocity.cell_volume
        vaxes = self.grid.v_axes
        rho = self.f.sum(axis=vaxes) * dv
        m = np.stack([(self.f * c).sum(axis=vaxes) * dv for c in self.grid.xi])
        u = np.zeros_like(m)
        ok = rho > self.rho_floor
        u[:, ok] = m[:, ok] / rho[ok]
        return rho, m, u

    @property
    def rho(self) -> Field:
        return Field(self.space, self._moments[0])

    @property
    def momentum(self) -> Field:
        return Field(self.space, self._moments[1])

    @property
    def velocity(self) -> Field:
        return Field(self.space, self._moments[2])

    def with_f(self, f: np.ndarray, time: float) -> "KineticState":
        return KineticState(self.grid, f, time, self.rho_floor)


@dataclass(frozen=True)
class MacroState:
    rho: Field
    time: float = 0.0
    regime: ScalingRegime | None = None
    floor: float = RHO_FLOOR

    def __post_init__(self):
        if self.rho.is_vector:
            raise ValueError("density must be scalar")
        if np.min(self.rho.values) < self.floor:
            raise ValueError(f"density below positivity floor {self.floor:g}")

    def mass(self) -> float:
        return quadrature(self.rho)


def moments(state: KineticState) -> tuple[Field, Field, Field]:
    """``(rho_f, m_f, u_f)`` with ``u_f = 0`` wherever ``rho_f`` is below the floor."""
    return state.rho, state.momentum, state.velocity


def _as_vector(u, space: SpatialGrid) -> np.ndarray:
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    if vals.shape == space.shape and space.dim == 1:
        vals = vals[None]
    if vals.shape != (space.dim,) + space.shape:
        raise ValueError(f"velocity field has shape {vals.shape}, expected {(space.dim,) + space.shape}")
    return vals


def maxwellian_array(rho: np.ndarray, u: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    d = grid.dim
    expand = (Ellipsis,) + (None,) * d
    dist2 = sum((c - u[i][expand]) ** 2 for i, c in enumerate(grid.xi))
    return rho[expand] * np.exp(-0.5 * dist2) / (2.0 * math.pi) ** (d / 2)


def maxwellian(rho: Field, u, velocity: VelocityGrid, time: float = 0.0) -> KineticState:
    """Local Maxwellian ``rho(x) (2 pi)^{-d/2} exp(-|xi - u(x)|^2 / 2)``."""
    space = rho.grid
    if not isinstance(space, SpatialGrid) or space.dim != velocity.dim:
        raise ValueError("rho must live on a spatial grid matching the velocity dimension")
    if np.min(rho.values) < 0:
        raise ValueError("maxwellian needs rho >= 0")
    grid = PhaseGrid(space, velocity)
    uu = _as_vector(u, space)
    return KineticState(grid, maxwellian_array(rho.values, uu, grid), time)


def limiting_velocity(regime: ScalingRegime, rho: Field, op: RieszOperator | None = None) -> Field:
    """Velocity of the Maxwellian the kinetic solution relaxes to at leading order."""
    space = rho.grid
    if regime.name is Regime.HIGHFIELD:
        op = op or RieszOperator(regime.alpha, space)
        return -op.force(rho)
    return Field(space, np.zeros((space.dim,) + space.shape))


def prepared_data(
    kind,
    regime: ScalingRegime,
    rho0: Field,
    v,
    delta: float,
    velocity: VelocityGrid,
    op: RieszOperator | None = None,
) -> KineticState:
    """Well-prepared or mildly-prepared initial states.

    Mildly prepared data are Maxwellians centred at ``v / eps^p`` with
    ``p = 1 - delta/2`` (diffusive, ``delta in (0, 2)``) or ``p = (1 - delta)/2``
    (high-field and gSQG, ``delta in (0, 1)``).
    """
    kind = DataKind(kind)
    name = regime.name
    regime.check_dim(rho0.grid.dim)
    if kind is DataKind.WELL_PREPARED:
        return maxwellian(rho0, limiting_velocity(regime, rho0, op), velocity)
    if name is Regime.DIFFUSIVE:
        if not 0.0 < delta < 2.0:
            raise ValueError("diffusive mildly-prepared data need delta in (0, 2)")
        power = 1.0 - delta / 2.0
    else:
        if not 0.0 < delta < 1.0:
            raise ValueError(f"{name.value} mildly-prepared data need delta in (0, 1)")
        power = (1.0 - delta) / 2.0
    vv = _as_vector(v, rho0.grid)
    return maxwellian(rho0, vv / regime.epsilon**power, velocity)


def smooth_density(space: SpatialGrid, amplitude: float = 1.0) -> Field:
    """Strictly positive unit-mass density ``c + bump`` built from low Fourier modes."""
    if space.dim == 1:
        (x,) = space.mesh
        shape = 0.5 * np.cos(x) + 0.25 * np.sin(2 * x)
        lo = 0.75
    else:
        x, y = space.mesh
        shape = 0.4 * np.cos(x) + 0.3 * np.sin(y) + 0.2 * np.cos(x + y)
        lo = 0.9
    if not 0 <= amplitude * lo < 1:
        raise ValueError("amplitude too large for a positive density")
    raw = 1.0 + amplitude * shape
    return Field(space, raw / (raw.sum() * space.cell_volume))


def single_mode_velocity(space: SpatialGrid, amplitude: float = 0.25) -> Field:
    """Default ``v`` for mildly-prepared families: one Fourier mode per component."""
    if space.dim == 1:
        (x,) = space.mesh
        return Field(space, (amplitude * np.sin(x))[None])
    x, y = space.mesh
    return Field(space, np.stack([amplitude * np.sin(y), amplitude * np.cos(x)]))
