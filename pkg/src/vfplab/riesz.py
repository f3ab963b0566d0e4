"""Fractional inverse Laplacian on the torus and the interaction energies built on it."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Field, SpatialGrid, perp_gradient, quadrature, spectral_gradient

__all__ = ["RieszOperator"]

log = logging.getLogger(__name__)


def _check_alpha(alpha: float, dim: int) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    coulomb_2d = dim == 2 and alpha == 1.0
    if not (alpha < dim / 2.0 or coulomb_2d):
        raise ValueError(f"alpha={alpha} not admissible in dimension {dim} (need alpha < d/2)")


@dataclass(frozen=True)
class RieszOperator:
    """Fourier multiplier ``|k|^{-2 alpha}`` with the zero mode removed.

    All operations act on ``rho - mean(rho)``, the periodic normalization of the
    interaction potential; wavenumbers are physical (``2 pi / L`` units).
    """

    alpha: float
    grid: SpatialGrid

    def __post_init__(self):
        _check_alpha(self.alpha, self.grid.dim)

    @cached_property
    def multiplier(self) -> np.ndarray:
        ksq = self.grid.ksq
        m = np.zeros_like(ksq)
        nz = ksq > 0
        m[nz] = ksq[nz] ** (-self.alpha)
        return m

    def _apply(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.grid.dim, 0))
        return np.real(np.fft.ifftn(self.multiplier * np.fft.fftn(values, axes=axes), axes=axes))

    def potential(self, rho: Field) -> Field:
        return Field(self.grid, self._apply(rho.values))

    def force(self, rho: Field) -> Field:
        """``+grad (-Delta)^{-alpha} rho``; callers choose the sign."""
        return spectral_gradient(self.potential(rho))

    def perp_force(self, rho: Field) -> Field:
        return perp_gradient(self.potential(rho))

    def interaction_energy(self, rho: Field) -> float:
        centered = rho.values - rho.values.mean()
        return 0.5 * quadrature(Field(self.grid, centered * self._apply(rho.values)))

    def hneg_norm_sq(self, g: Field) -> float:
        """Squared homogeneous ``H^{-alpha}`` seminorm; the zero mode is ignored."""
        return 2.0 * self.interaction_energy(g)

    def relative_potential_energy(self, rho1: Field, rho2: Field, mass_rtol: float = 1e-9) -> float:
        m1, m2 = quadrature(rho1), quadrature(rho2)
        if abs(m1 - m2) > mass_rtol * max(1.0, abs(m1), abs(m2)):
            log.warning(
                "relative_potential_energy: masses differ (%.12g vs %.12g, %.1e relative); zero mode dropped",
                m1, m2, abs(m1 - m2) / max(abs(m1), abs(m2)),
            )
        return self.interaction_energy(rho1 - rho2)
