"""Uniform periodic grids on the unit torus and the discrete calculus on them.

Fields are plain numpy arrays. A spatial slice has shape ``(n,) * d``; a
space-time field carries a leading time axis, ``(nt + 1,) + (n,) * d``.
Vector fields stack their components on an extra leading axis of length ``d``.
Spatial axes are always the trailing ``d`` axes, so every operator here works
unchanged on a single slice or on a whole space-time field.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the torus R^d / Z^d with ``n`` nodes per axis."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"only d in {{1, 2}} is supported, got d={self.d}")
        if self.n < 4:
            raise ValueError(f"need at least 4 nodes per axis, got n={self.n}")

    @property
    def dx(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(d,) + shape``."""
        x = np.arange(self.n) * self.dx
        return np.stack(np.meshgrid(*([x] * self.d), indexing="ij"))

    def spatial_axes(self, ndim: int) -> tuple[int, ...]:
        return tuple(range(ndim - self.d, ndim))

    def torus_distance(self) -> np.ndarray:
        """Distance from node 0 to every node, measured on the torus."""
        x = np.arange(self.n) * self.dx
        x = np.minimum(x, 1.0 - x)
        sq = sum(c**2 for c in np.meshgrid(*([x] * self.d), indexing="ij"))
        return np.sqrt(sq)

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(*coords)`` on the nodes."""
        return np.asarray(fn(*self.nodes), dtype=float) * np.ones(self.shape)

    def coarsen(self, factor: int) -> TorusGrid:
        if self.n % factor:
            raise ValueError(f"n={self.n} is not a multiple of {factor}")
        return TorusGrid(self.d, self.n // factor)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform mesh of [0, T] with ``nt`` steps."""

    T: float
    nt: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if self.nt < 1:
            raise ValueError(f"need at least one time step, got nt={self.nt}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights over the ``nt + 1`` slices."""
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    @classmethod
    def for_cfl(cls, T: float, dt_max: float, multiple_of: int = 1) -> TimeGrid:
        """Smallest uniform mesh with ``dt <= dt_max`` and ``nt`` a multiple of ``multiple_of``."""
        nt = int(np.ceil(T / dt_max - 1e-12))
        nt = max(nt, 1)
        nt = multiple_of * int(np.ceil(nt / multiple_of))
        return cls(T, nt)


def _axis(grid: TorusGrid, field: np.ndarray, axis: int) -> int:
    if not 0 <= axis < grid.d:
        raise ValueError(f"axis {axis} out of range for d={grid.d}")
    return field.ndim - grid.d + axis


def diff_forward(field: np.ndarray, grid: TorusGrid, axis: int = 0) -> np.ndarray:
    """(u[i+1] - u[i]) / dx with periodic wraparound."""
    ax = _axis(grid, field, axis)
    return (np.roll(field, -1, axis=ax) - field) / grid.dx


def diff_backward(field: np.ndarray, grid: TorusGrid, axis: int = 0) -> np.ndarray:
    """(u[i] - u[i-1]) / dx with periodic wraparound."""
    ax = _axis(grid, field, axis)
    return (field - np.roll(field, 1, axis=ax)) / grid.dx


def diff_central(field: np.ndarray, grid: TorusGrid, axis: int = 0) -> np.ndarray:
    ax = _axis(grid, field, axis)
    return (np.roll(field, -1, axis=ax) - np.roll(field, 1, axis=ax)) / (2 * grid.dx)


def gradient_central(field: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.stack([diff_central(field, grid, k) for k in range(grid.d)])


def laplacian(field: np.ndarray, grid: TorusGrid) -> np.ndarray:
    out = np.zeros_like(field, dtype=float)
    for k in range(grid.d):
        ax = _axis(grid, field, k)
        out += np.roll(field, -1, axis=ax) - 2 * field + np.roll(field, 1, axis=ax)
    return out / grid.dx**2


def integrate_space(field: np.ndarray, grid: TorusGrid) -> np.ndarray | float:
    """Midpoint rule over the torus; batched over any leading axes."""
    return field.sum(axis=grid.spatial_axes(field.ndim)) * grid.cell_volume


def integrate_spacetime(field: np.ndarray, grid: TorusGrid, tgrid: TimeGrid) -> float:
    per_slice = integrate_space(field, grid)
    if per_slice.shape != (tgrid.nt + 1,):
        raise ValueError(
            f"field has {per_slice.shape[0] if per_slice.ndim else 1} slices, "
            f"time grid expects {tgrid.nt + 1}"
        )
    return float(per_slice @ tgrid.weights)


def periodic_convolve(field: np.ndarray, kernel: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Circular convolution ``dx^d * sum_j kernel[j] field[i - j]`` over the trailing axes.

    A kernel with unit discrete mass (``sum(kernel) * dx^d == 1``) acts as a
    mollifier; the discrete delta ``1/dx^d`` at node 0 is the identity.
    """
    if kernel.shape != grid.shape:
        raise ValueError(f"kernel shape {kernel.shape} does not match grid {grid.shape}")
    axes = grid.spatial_axes(field.ndim)
    khat = np.fft.rfftn(kernel)
    fhat = np.fft.rfftn(field, axes=axes)
    out = np.fft.irfftn(fhat * khat, s=grid.shape, axes=axes)
    return out * grid.cell_volume


def gaussian_kernel(grid: TorusGrid, sigma: float, radius: float | None = None) -> np.ndarray:
    """Periodized Gaussian with unit discrete mass, optionally truncated to ``radius``."""
    if sigma <= 0:
        raise ValueError("kernel bandwidth must be positive")
    # sum over nearby periodic images; 3 images per side is far beyond float precision for sigma < 0.5
    x = np.arange(grid.n) * grid.dx
    per_axis = sum(np.exp(-((x + k) ** 2) / (2 * sigma**2)) for k in range(-3, 4))
    kernel = per_axis
    for _ in range(grid.d - 1):
        kernel = np.multiply.outer(kernel, per_axis)
    if radius is not None:
        kernel = np.where(grid.torus_distance() <= radius + 1e-12, kernel, 0.0)
    mass = kernel.sum() * grid.cell_volume
    return kernel / mass


def delta_kernel(grid: TorusGrid) -> np.ndarray:
    k = np.zeros(grid.shape)
    k[(0,) * grid.d] = 1.0 / grid.cell_volume
    return k


def reflect(field: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Apply x -> -x on the spatial axes (index i -> -i mod n)."""
    out = field
    for ax in grid.spatial_axes(field.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def subsample(field: np.ndarray, fine: TorusGrid, coarse: TorusGrid, time_factor: int = 1) -> np.ndarray:
    """Restrict a fine-grid field to a nested coarse grid by taking every k-th node."""
    if fine.d != coarse.d or fine.n % coarse.n:
        raise ValueError(f"grid n={coarse.n} is not nested in n={fine.n}")
    k = fine.n // coarse.n
    lead = field.ndim - fine.d
    idx: list[slice] = [slice(None)] * lead + [slice(None, None, k)] * fine.d
    if lead and time_factor > 1:
        idx[0] = slice(None, None, time_factor)
    return field[tuple(idx)]


def laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    """Eigenvalues of the periodic 2d+1 point Laplacian, in rfftn layout."""
    k_full = np.arange(grid.n)
    k_half = np.arange(grid.n // 2 + 1)
    lam_full = -4.0 / grid.dx**2 * np.sin(np.pi * k_full / grid.n) ** 2
    lam_half = -4.0 / grid.dx**2 * np.sin(np.pi * k_half / grid.n) ** 2
    if grid.d == 1:
        return lam_half
    return lam_full[:, None] + lam_half[None, :]


class ImplicitDiffusion:
    """Solves ``(I - c * laplacian) x = rhs`` exactly for a fixed ``c >= 0``.

    The periodic stencil matrix is circulant, so the solve is a pointwise
    division in Fourier space. Its inverse is nonnegative (an M-matrix
    inverse) and preserves the discrete mean.
    """

    def __init__(self, grid: TorusGrid, c: float):
        if c < 0:
            raise ValueError("diffusion coefficient must be nonnegative")
        self.grid = grid
        self.c = c
        self._denom = 1.0 - c * laplacian_symbol(grid)

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        if self.c == 0.0:
            return rhs.copy()
        axes = self.grid.spatial_axes(rhs.ndim)
        xhat = np.fft.rfftn(rhs, axes=axes) / self._denom
        return np.fft.irfftn(xhat, s=self.grid.shape, axes=axes)
