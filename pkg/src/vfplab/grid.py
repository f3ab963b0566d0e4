"""Uniform periodic tensor grids, spectral calculus and field containers.

Phase-space arrays use x-major, xi-minor layout: an array on a ``PhaseGrid``
of dimension ``d`` has shape ``(nx,)*d + (nv,)*d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

__all__ = [
    "SpatialGrid",
    "VelocityGrid",
    "PhaseGrid",
    "Field",
    "quadrature",
    "spectral_gradient",
    "perp_gradient",
    "divergence",
    "write_field",
    "read_field",
]


def _is_fft_size(n: int) -> bool:
    """Even and 3-smooth (``2^a 3^b`` with ``a >= 1``), so FFTs stay fast and Nyquist exists."""
    if n <= 0 or n % 2:
        return False
    for p in (2, 3):
        while n % p == 0:
            n //= p
    return n == 1


def _wavenumbers(n: int, length: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


@dataclass(frozen=True)
class SpatialGrid:
    """The torus ``[0, L)^dim`` sampled at ``points_per_dim`` points per axis."""

    dim: int
    points_per_dim: int
    length: float = 2.0 * math.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.points_per_dim < 8 or not _is_fft_size(self.points_per_dim):
            raise ValueError("points_per_dim must be >= 8 and of the form 2^a 3^b (a >= 1)")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def n(self) -> int:
        return self.points_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @cached_property
    def points(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.points] * self.dim), indexing="ij"))

    @cached_property
    def k1d(self) -> np.ndarray:
        return _wavenumbers(self.n, self.length)

    @cached_property
    def kmesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.k1d] * self.dim), indexing="ij"))

    @cached_property
    def ksq(self) -> np.ndarray:
        return sum(k**2 for k in self.kmesh)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask on the full FFT layout."""
        kmax = np.abs(self.k1d).max()
        keep = np.abs(self.k1d) < (2.0 / 3.0) * kmax
        mask = keep
        for _ in range(self.dim - 1):
            mask = np.multiply.outer(mask, keep)
        return mask

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float))

    def constant(self, c: float) -> "Field":
        return Field(self, np.full(self.shape, float(c)))


@dataclass(frozen=True)
class VelocityGrid:
    """Truncated velocity box ``[-V, V)^dim`` treated as periodic."""

    dim: int
    points_per_dim: int
    half_width: float = 8.0
    truncation_tol: float = 1e-12

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.points_per_dim < 8 or self.points_per_dim % 2:
            raise ValueError("velocity points_per_dim must be even and >= 8")
        edge = math.exp(-0.5 * self.half_width**2) / (2 * math.pi) ** (self.dim / 2)
        if edge >= self.truncation_tol:
            raise ValueError(
                f"half_width={self.half_width} too small: Maxwellian at the edge is "
                f"{edge:.2e} >= {self.truncation_tol:.0e}"
            )

    @property
    def n(self) -> int:
        return self.points_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    @cached_property
    def points(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n) * self.spacing

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.points] * self.dim), indexing="ij"))

    @cached_property
    def k1d(self) -> np.ndarray:
        return _wavenumbers(self.n, self.length)


@dataclass(frozen=True)
class PhaseGrid:
    space: SpatialGrid
    velocity: VelocityGrid

    def __post_init__(self):
        if self.space.dim != self.velocity.dim:
            raise ValueError("space and velocity grids must have equal dimension")

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.space.shape + self.velocity.shape

    @property
    def cell_volume(self) -> float:
        return self.space.cell_volume * self.velocity.cell_volume

    @property
    def x_axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    @property
    def v_axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim, 2 * self.dim))

    @cached_property
    def xi(self) -> tuple[np.ndarray, ...]:
        """Velocity coordinates broadcastable against phase arrays."""
        d = self.dim
        out = []
        for m in self.velocity.mesh:
            out.append(m.reshape((1,) * d + m.shape))
        return tuple(out)

    @cached_property
    def xi_sq(self) -> np.ndarray:
        return sum(c**2 for c in self.xi)

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float))


Grid = Union[SpatialGrid, PhaseGrid]


@dataclass(frozen=True)
class Field:
    """Grid values, optionally with a leading component axis for vector fields."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(self.grid.shape)
        vshape = self.values.shape
        if vshape != shape and not (len(vshape) == len(shape) + 1 and vshape[1:] == shape):
            raise ValueError(f"values shape {vshape} does not match grid shape {shape}")

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == len(self.grid.shape) + 1

    @property
    def ncomp(self) -> int:
        return self.values.shape[0] if self.is_vector else 1

    def component(self, i: int) -> "Field":
        if not self.is_vector:
            raise ValueError("scalar field has no components")
        return Field(self.grid, self.values[i])

    def _coerce(self, other):
        return other.values if isinstance(other, Field) else other

    def __add__(self, other):
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def quadrature(f: Field):
    """Cell-volume weighted sum; one number per component for vector fields."""
    nd = len(f.grid.shape)
    axes = tuple(range(f.values.ndim - nd, f.values.ndim))
    total = np.sum(f.values, axis=axes) * f.grid.cell_volume
    return float(total) if not f.is_vector else total


def _spectral_derivative(values: np.ndarray, axis: int, k: np.ndarray) -> np.ndarray:
    n = values.shape[axis]
    kk = k.copy()
    kk[n // 2] = 0.0  # Nyquist derivative of a real signal is dropped
    shape = [1] * values.ndim
    shape[axis] = n
    fhat = np.fft.fft(values, axis=axis)
    return np.real(np.fft.ifft(1j * kk.reshape(shape) * fhat, axis=axis))


def spectral_gradient(f: Field, wrt: str = "x") -> Field:
    """Fourier gradient of a scalar field.

    On a ``PhaseGrid`` ``wrt`` selects the spatial (``"x"``) or velocity (``"xi"``)
    variables.
    """
    if f.is_vector:
        raise ValueError("spectral_gradient expects a scalar field")
    g = f.grid
    if isinstance(g, SpatialGrid):
        axes, k = tuple(range(g.dim)), g.k1d
    elif wrt == "x":
        axes, k = g.x_axes, g.space.k1d
    elif wrt == "xi":
        axes, k = g.v_axes, g.velocity.k1d
    else:
        raise ValueError(f"unknown variable {wrt!r}")
    comps = [_spectral_derivative(f.values, ax, k) for ax in axes]
    return Field(g, np.stack(comps))


def perp_gradient(f: Field) -> Field:
    """``(-d2 f, d1 f)`` on a two-dimensional spatial grid."""
    if not isinstance(f.grid, SpatialGrid) or f.grid.dim != 2:
        raise ValueError("perp_gradient is only defined on 2D spatial grids")
    g = spectral_gradient(f).values
    return Field(f.grid, np.stack([-g[1], g[0]]))


def divergence(v: Field) -> Field:
    if not v.is_vector or not isinstance(v.grid, SpatialGrid):
        raise ValueError("divergence expects a spatial vector field")
    g = v.grid
    out = sum(_spectral_derivative(v.values[i], i, g.k1d) for i in range(g.dim))
    return Field(g, out)


def write_field(path, f: Field) -> None:
    """Header line then little-endian float64 values in row-major order."""
    g = f.grid
    if isinstance(g, SpatialGrid):
        header = f"dims={g.dim} n={g.n} L={g.length!r} kind=spatial"
    else:
        header = (
            f"dims={g.dim} n={g.space.n} L={g.space.length!r} kind=phase "
            f"nv={g.velocity.n} V={g.velocity.half_width!r}"
        )
    if f.is_vector:
        header += f" ncomp={f.ncomp}"
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    meta = dict(item.split("=", 1) for item in header)
    space = SpatialGrid(int(meta["dims"]), int(meta["n"]), float(meta["L"]))
    if meta["kind"] == "spatial":
        grid: Grid = space
    elif meta["kind"] == "phase":
        grid = PhaseGrid(space, VelocityGrid(space.dim, int(meta["nv"]), float(meta["V"])))
    else:
        raise ValueError(f"unknown field kind {meta['kind']!r}")
    shape = tuple(grid.shape)
    if "ncomp" in meta:
        shape = (int(meta["ncomp"]),) + shape
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return Field(grid, values)
