"""Backward solver for -u_t - nu Lap u + H(x, Du) = g,  u(T) = u_T.

Each step is IMEX Euler in reversed time: the Hamiltonian is explicit with the
Godunov flux, the diffusion implicit. For convex, isotropic H the Godunov flux
reduces per axis to the upwind magnitude max(D^- u, -D^+ u, 0), which makes
the explicit part monotone under ``dt * d * max|D_p H| / dx <= 1``; the
implicit diffusion solve has a nonnegative inverse, so the composite step is
monotone for every nu >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CflError, DivergenceError
from .grid import ImplicitDiffusion, TimeGrid, TorusGrid, diff_backward, diff_forward
from .model import HamiltonianSpec


@dataclass(frozen=True)
class HjbOptions:
    cfl_safety: float = 1.0
    max_grad_clip: float | None = None

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")


def godunov_gradient_norm(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Upwind |Du| used by the Godunov flux of an isotropic convex Hamiltonian."""
    sq = np.zeros_like(u, dtype=float)
    for k in range(grid.d):
        a = diff_backward(u, grid, k)
        b = diff_forward(u, grid, k)
        pk = np.maximum(np.maximum(a, -b), 0.0)
        sq += pk * pk
    return np.sqrt(sq)


def godunov_hamiltonian(H: HamiltonianSpec, u: np.ndarray, grid: TorusGrid) -> tuple[np.ndarray, np.ndarray]:
    """Numerical Hamiltonian and the nodal |D_p H| it implies (for the CFL check)."""
    pnorm = godunov_gradient_norm(u, grid)
    return H.of_norm(pnorm), H.grad_norm(pnorm)


def godunov_policy(H: HamiltonianSpec, u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Feedback b = D_p H at the upwind gradient selected by the Godunov flux.

    With this b the frozen-policy transport b^+ D^- u + b^- D^+ u minus H*(b)
    reproduces the Godunov Hamiltonian exactly.
    """
    comps = []
    for k in range(grid.d):
        a = np.maximum(diff_backward(u, grid, k), 0.0)
        c = np.maximum(-diff_forward(u, grid, k), 0.0)
        comps.append(np.where(a >= c, a, -c))
    # components lead; move them next to the spatial axes for batched input
    b = H.grad(np.stack(comps))
    return np.moveaxis(b, 0, u.ndim - grid.d)


def admissible_dt(speed: float, grid: TorusGrid, safety: float) -> float:
    if speed <= 0:
        return np.inf
    return safety * grid.dx / (grid.d * speed)


def _broadcast_source(g, grid: TorusGrid, tgrid: TimeGrid) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    full = (tgrid.nt + 1,) + grid.shape
    if g.shape == full:
        return g
    if g.ndim == 0 or g.shape == grid.shape:
        return np.broadcast_to(g, full)
    raise ValueError(f"source shape {g.shape} matches neither {full} nor {grid.shape}")


def solve_hjb(
    nu: float,
    H: HamiltonianSpec,
    source,
    terminal: np.ndarray,
    grid: TorusGrid,
    tgrid: TimeGrid,
    opts: HjbOptions | None = None,
) -> np.ndarray:
    """March backward from ``u(T) = terminal``; returns all ``nt + 1`` slices."""
    opts = opts or HjbOptions()
    if nu < 0:
        raise ValueError("viscosity must be nonnegative")
    g = _broadcast_source(source, grid, tgrid)
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != grid.shape or not np.all(np.isfinite(terminal)):
        raise ValueError("terminal data must be a finite slice on the grid")
    dt = tgrid.dt
    solve = ImplicitDiffusion(grid, nu * dt)
    u = np.empty((tgrid.nt + 1,) + grid.shape)
    u[-1] = terminal
    for k in range(tgrid.nt - 1, -1, -1):
        ham, speed = godunov_hamiltonian(H, u[k + 1], grid)
        vmax = float(np.max(speed))
        if opts.max_grad_clip is not None:
            vmax = min(vmax, H.cfl_drift(opts.max_grad_clip))
        if dt * grid.d * vmax / grid.dx > opts.cfl_safety:
            raise CflError(f"HJB step at t={tgrid.times[k]:.4g} is not monotone", admissible_dt(vmax, grid, opts.cfl_safety))
        u[k] = solve(u[k + 1] - dt * (ham - g[k + 1]))
        if not np.all(np.isfinite(u[k])):
            raise DivergenceError(f"non-finite value function at t={tgrid.times[k]:.4g}")
    return u


def solve_linear_hjb(
    nu: float,
    H: HamiltonianSpec,
    drift: np.ndarray,
    source,
    terminal: np.ndarray,
    grid: TorusGrid,
    tgrid: TimeGrid,
    opts: HjbOptions | None = None,
) -> np.ndarray:
    """Frozen-policy equation -u_t - nu Lap u + b.Du - H*(x, b) = g.

    ``drift`` holds b on every slice, shape ``(nt + 1, d) + grid.shape``. The
    transport term is upwinded: b^+ D^- u + b^- D^+ u per axis.
    """
    opts = opts or HjbOptions()
    g = _broadcast_source(source, grid, tgrid)
    dt = tgrid.dt
    solve = ImplicitDiffusion(grid, nu * dt)
    u = np.empty((tgrid.nt + 1,) + grid.shape)
    u[-1] = terminal
    for k in range(tgrid.nt - 1, -1, -1):
        b = drift[k + 1]
        speed = np.sqrt(np.sum(b * b, axis=0))
        vmax = float(np.max(speed))
        if dt * grid.d * vmax / grid.dx > opts.cfl_safety:
            raise CflError("frozen-policy step is not monotone", admissible_dt(vmax, grid, opts.cfl_safety))
        prev = u[k + 1]
        transport = np.zeros(grid.shape)
        for ax in range(grid.d):
            bk = b[ax]
            transport += np.maximum(bk, 0) * diff_backward(prev, grid, ax) + np.minimum(bk, 0) * diff_forward(prev, grid, ax)
        cost = H.conjugate(b)
        u[k] = solve(prev - dt * (transport - cost - g[k + 1]))
        if not np.all(np.isfinite(u[k])):
            raise DivergenceError(f"non-finite value function at t={tgrid.times[k]:.4g}")
    return u
