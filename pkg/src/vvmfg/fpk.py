"""Forward conservative solver for m_t - nu Lap m - div(m b) = 0,  m(0) = m0.

The density moves with velocity -b. Advection is a flux-form upwind update on
cell faces; diffusion is implicit. Each step telescopes, so the discrete mass
is preserved to rounding, and under ``dt * d * max|b| / dx <= 1/2`` the
explicit part keeps every nodal coefficient nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CflError, DivergenceError
from .grid import ImplicitDiffusion, TimeGrid, TorusGrid, diff_central, diff_forward, integrate_space
from .model import HamiltonianSpec

NEGATIVE_MASS_TOL = 1e-12


@dataclass(frozen=True)
class FpkOptions:
    cfl_safety: float = 0.5
    positivity_floor: float | None = None

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")


def mass(m: np.ndarray, grid: TorusGrid):
    return integrate_space(m, grid)


def face_drift(H: HamiltonianSpec, u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """D_p H evaluated on cell faces.

    Component ``k`` at index ``i`` is the drift through the face between node
    ``i`` and node ``i + e_k``: the normal gradient is the forward difference,
    tangential components are face averages of central differences. Works on
    a slice or a stack of slices; the component axis is inserted right before
    the spatial axes.
    """
    ax0 = u.ndim - grid.d
    comps = []
    for k in range(grid.d):
        p = []
        for j in range(grid.d):
            if j == k:
                p.append(diff_forward(u, grid, k))
            else:
                c = diff_central(u, grid, j)
                p.append(0.5 * (c + np.roll(c, -1, axis=ax0 + k)))
        comps.append(H.grad(np.stack(p))[k])
    return np.stack(comps, axis=ax0)


def divergence_upwind(m: np.ndarray, b_face: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """div(m v) with v = -b and upwind face fluxes.

    ``m`` is a slice or a stack of slices; ``b_face`` carries the extra
    component axis right before the spatial axes, as returned by ``face_drift``.
    """
    ax0 = m.ndim - grid.d
    out = np.zeros_like(m)
    for k in range(grid.d):
        v = -np.take(b_face, k, axis=ax0)
        ax = ax0 + k
        flux = np.maximum(v, 0.0) * m + np.minimum(v, 0.0) * np.roll(m, -1, axis=ax)
        out += (flux - np.roll(flux, 1, axis=ax)) / grid.dx
    return out


def solve_fpk(
    nu: float,
    drift: np.ndarray,
    m0: np.ndarray,
    grid: TorusGrid,
    tgrid: TimeGrid,
    opts: FpkOptions | None = None,
) -> np.ndarray:
    """March forward from ``m0``.

    ``drift`` is face-staggered with shape ``(nt + 1, d) + grid.shape``; slice
    ``k`` drives the step from ``t_k`` to ``t_{k+1}``. A single
    ``(d,) + grid.shape`` array is taken as constant in time.
    """
    opts = opts or FpkOptions()
    if nu < 0:
        raise ValueError("viscosity must be nonnegative")
    m0 = np.asarray(m0, dtype=float)
    if m0.shape != grid.shape:
        raise ValueError(f"initial density shape {m0.shape} does not match grid {grid.shape}")
    if np.any(m0 < 0):
        raise ValueError("initial density must be nonnegative")
    drift = np.asarray(drift, dtype=float)
    if drift.shape == (grid.d,) + grid.shape:
        drift = np.broadcast_to(drift, (tgrid.nt + 1,) + drift.shape)
    elif drift.shape != (tgrid.nt + 1, grid.d) + grid.shape:
        raise ValueError(f"drift shape {drift.shape} does not match the grids")
    dt = tgrid.dt
    vmax = float(np.max(np.abs(drift[:-1]))) if tgrid.nt else 0.0
    if dt * grid.d * vmax / grid.dx > opts.cfl_safety * (1 + 1e-12):
        raise CflError("FPK time step may lose positivity", opts.cfl_safety * grid.dx / (grid.d * vmax))
    solve = ImplicitDiffusion(grid, nu * dt)
    m = np.empty((tgrid.nt + 1,) + grid.shape)
    m[0] = m0
    for k in range(tgrid.nt):
        nxt = solve(m[k] - dt * divergence_upwind(m[k], drift[k], grid))
        if opts.positivity_floor is not None:
            nxt = np.maximum(nxt, opts.positivity_floor)
        lo = float(np.min(nxt))
        if not np.isfinite(lo):
            raise DivergenceError(f"non-finite density at t={tgrid.times[k + 1]:.4g}")
        if lo < -NEGATIVE_MASS_TOL:
            raise DivergenceError(f"negative density {lo:.3e} at t={tgrid.times[k + 1]:.4g}")
        m[k + 1] = nxt
    return m
