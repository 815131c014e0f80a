"""Discrete dual functionals, the duality gap, coercivity bounds and the mollified dual point.

Primal functional on (m, w), with w the momentum:

    B(m, w) = int int [ m H*(x, -w/m) + F(x, m) ] dx dt + int u_T m(T) dx

Dual functional on (u, alpha):

    A(u, alpha) = int int F*(x, alpha) dx dt - int u(0) m0 dx

Both use the grid quadratures (midpoint in space, trapezoid in time). Only
local couplings have a pointwise potential F, so these functionals are
defined for local couplings only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixpoint import MfgProblem, MfgSolution
from .grid import (
    TimeGrid,
    TorusGrid,
    diff_forward,
    gaussian_kernel,
    gradient_central,
    integrate_space,
    integrate_spacetime,
    laplacian,
    periodic_convolve,
)
from .model import HamiltonianSpec, LocalCoupling

# tolerance for densities that are zero up to rounding
_DENSITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PrimalPoint:
    """A density ``m`` of shape (nt+1, *grid) and momentum ``w`` of shape (nt+1, d, *grid)."""

    m: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if w.ndim != m.ndim + 1 or w.shape[0] != m.shape[0] or w.shape[2:] != m.shape[1:]:
            raise ValueError(f"momentum shape {w.shape} does not match density shape {m.shape}")
        if np.any(m < -_DENSITY_TOL):
            raise ValueError("density must be nonnegative")
        object.__setattr__(self, "m", np.maximum(m, 0.0))
        object.__setattr__(self, "w", w)

    def velocity(self) -> np.ndarray:
        """-w/m where m > 0 and 0 elsewhere, with the component axis first."""
        wt = np.moveaxis(self.w, 1, 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.m > 0, -wt / self.m, 0.0)

    @property
    def feasible(self) -> bool:
        """False when momentum sits on zero density."""
        wt = np.moveaxis(self.w, 1, 0)
        return not bool(np.any((self.m == 0) & np.any(wt != 0, axis=0)))


@dataclass(frozen=True, eq=False)
class DualPoint:
    """A value function ``u`` and source ``alpha``, both of shape (nt+1, *grid).

    ``alpha`` is stored as max(alpha, 0), which never increases A.
    """

    u: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if u.shape != alpha.shape:
            raise ValueError(f"alpha shape {alpha.shape} does not match u shape {u.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(alpha))):
            raise ValueError("dual point must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "alpha", np.maximum(alpha, 0.0))


def _require_local(coupling) -> LocalCoupling:
    if getattr(coupling, "kind", None) != "local":
        raise ValueError("the dual functionals need a local coupling with a pointwise potential")
    return coupling


def eval_B(
    point: PrimalPoint,
    coupling: LocalCoupling,
    H: HamiltonianSpec,
    u_T: np.ndarray,
    grid: TorusGrid,
    tgrid: TimeGrid,
) -> float:
    """Primal functional; +inf when momentum sits on zero density."""
    coupling = _require_local(coupling)
    if not point.feasible:
        return np.inf
    m = point.m
    kinetic = np.where(m > 0, m * H.conjugate(point.velocity()), 0.0)
    running = integrate_spacetime(kinetic + coupling.F(m), grid, tgrid)
    return float(running + integrate_space(u_T * m[-1], grid))


def eval_A(point: DualPoint, coupling: LocalCoupling, m0: np.ndarray, grid: TorusGrid, tgrid: TimeGrid) -> float:
    coupling = _require_local(coupling)
    return float(integrate_spacetime(coupling.F_star(point.alpha), grid, tgrid) - integrate_space(point.u[0] * m0, grid))


def optimal_pair(u: np.ndarray, m: np.ndarray, problem: MfgProblem) -> tuple[DualPoint, PrimalPoint]:
    """alpha = f(m) and w = -m D_pH(Du), with Du by central differences."""
    coupling = _require_local(problem.coupling)
    m = np.maximum(m, 0.0)
    drift = problem.H.grad(gradient_central(u, problem.grid))
    w = np.moveaxis(-m * drift, 0, 1)
    return DualPoint(u, coupling.f(m)), PrimalPoint(m, w)


def duality_gap(solution: MfgSolution, problem: MfgProblem) -> float:
    """A(u, f(m)) + B(m, -m D_pH(Du)), which vanishes at the continuous solution."""
    dual, primal = optimal_pair(solution.u, solution.m, problem)
    B = eval_B(primal, problem.coupling, problem.H, problem.u_T, problem.grid, problem.tgrid)
    return eval_A(dual, problem.coupling, problem.m0, problem.grid, problem.tgrid) + B


@dataclass(frozen=True)
class CoercivityBounds:
    """A + B against its two coercivity lower bounds.

    ``defect`` is the part of A + B that is not a sum of pointwise
    Fenchel-Young gaps: the discrete integration-by-parts remainder, which
    vanishes in the continuum when both points satisfy their equations.
    """

    lhs: float
    rhs_J1: float
    rhs_J2: float
    defect: float

    @property
    def pointwise(self) -> float:
        """The integrated pointwise Fenchel-Young gaps, lhs - defect."""
        return self.lhs - self.defect

    def holds(self, tol: float = 1e-8) -> bool:
        """Pointwise gaps dominate both forms, and lhs does up to the defect."""
        rhs = max(self.rhs_J1, self.rhs_J2)
        return self.pointwise >= rhs - tol and self.lhs >= rhs - tol - abs(self.defect)


def coercivity_gap_bounds(
    dual: DualPoint,
    primal: PrimalPoint,
    problem: MfgProblem,
    c0_H: float | None = None,
    c0_F: float | None = None,
) -> CoercivityBounds:
    coupling = _require_local(problem.coupling)
    H, grid, tgrid = problem.H, problem.grid, problem.tgrid
    c0_H = H.c0 if c0_H is None else c0_H
    c0_F = coupling.c0 if c0_F is None else c0_F
    lhs = eval_A(dual, coupling, problem.m0, grid, tgrid) + eval_B(primal, coupling, H, problem.u_T, grid, tgrid)
    m, alpha = primal.m, dual.alpha
    p = gradient_central(dual.u, grid)
    xi = primal.velocity()
    gap_J1 = np.sum((H.J(p) - H.J_star(xi)) ** 2, axis=0)
    rhs_J1 = c0_H * integrate_spacetime(m * gap_J1, grid, tgrid)
    rhs_J2 = c0_F * integrate_spacetime((coupling.J(m) - coupling.J_star(alpha)) ** 2, grid, tgrid)
    if not np.isfinite(lhs):
        return CoercivityBounds(float(lhs), float(rhs_J1), float(rhs_J2), 0.0)
    young_F = coupling.F(m) + coupling.F_star(alpha) - m * alpha
    young_H = np.where(m > 0, m * (H.value(p) + H.conjugate(xi) - np.sum(p * xi, axis=0)), 0.0)
    pointwise = integrate_spacetime(young_F + young_H, grid, tgrid)
    return CoercivityBounds(float(lhs), float(rhs_J1), float(rhs_J2), float(lhs - pointwise))


def c1_norm(u_T: np.ndarray, grid: TorusGrid) -> float:
    """max |u_T| + max |D+ u_T|, a grid surrogate for the C^1 norm."""
    grad = np.sqrt(sum(diff_forward(u_T, grid, k) ** 2 for k in range(grid.d)))
    return float(np.max(np.abs(u_T)) + np.max(grad))


def regularity_constants(H: HamiltonianSpec, grid: TorusGrid) -> tuple[float, float]:
    """(C1, C2) for H = tau^r |p|^r / r + h, i.e. weight h1 = tau^r / r and shift h2 = h.

    Zero for an x-independent Hamiltonian; otherwise C1 = max|D h1| / (r - 1)
    and C2 = max|D h2| with forward differences.
    """
    if H.x_independent:
        return 0.0, 0.0

    def lip(v):
        v = np.broadcast_to(np.asarray(v, dtype=float), grid.shape)
        return float(np.max(np.sqrt(sum(diff_forward(v, grid, k) ** 2 for k in range(grid.d)))))

    return lip(H.tau**H.r / H.r) / (H.r - 1.0), lip(H.h)


def mollifier_width(nu: float, beta: float) -> float:
    return nu ** (1.0 / (1.0 + beta))


def mollify_dual(
    dual: DualPoint,
    nu: float,
    beta: float,
    problem: MfgProblem,
) -> DualPoint:
    """Spatially mollified dual point at width eps = nu^(1/(1+beta)).

    u_eps = phi*u / (1 + C1 eps) - (1 + C1) eps |u_T|_C1 + C2 eps (t - T)
    alpha_eps = (phi*alpha - nu Lap(phi*u)) / (1 + C1 eps)

    The mollifier is a Gaussian with standard deviation eps/3, truncated to
    the ball of radius eps and renormalized to unit mass.
    """
    if not 0 < nu <= 1:
        raise ValueError("viscosity must lie in (0, 1]")
    if beta < 1:
        raise ValueError("beta must be at least 1")
    grid, tgrid = problem.grid, problem.tgrid
    eps = mollifier_width(nu, beta)
    if eps < grid.dx:
        raise ValueError(f"mollifier width {eps:.3g} is below the grid spacing {grid.dx:.3g}")
    kernel = gaussian_kernel(grid, eps / 3.0, radius=eps)
    c1, c2 = regularity_constants(problem.H, grid)
    u_s = periodic_convolve(dual.u, kernel, grid)
    a_s = periodic_convolve(dual.alpha, kernel, grid)
    t = tgrid.times.reshape((-1,) + (1,) * grid.d)
    u_eps = u_s / (1 + c1 * eps) - (1 + c1) * eps * c1_norm(problem.u_T, grid) + c2 * eps * (t - tgrid.T)
    alpha_eps = (a_s - nu * laplacian(u_s, grid)) / (1 + c1 * eps)
    return DualPoint(u_eps, alpha_eps)


@dataclass(frozen=True)
class MollifiedDualRow:
    nu: float
    eps: float
    lhs: float
    base: float
    constant: float


def mollified_dual_check(dual_by_nu: dict[float, DualPoint], beta: float, problem: MfgProblem) -> list[MollifiedDualRow]:
    """For each nu, the smallest C with A(u_eps, alpha_eps) <= A(u, alpha) + C (nu eps^-beta + eps).

    Requires nu eps^-beta <= 1. A negative constant means the mollified point
    already lowers A.
    """
    rows = []
    coupling = _require_local(problem.coupling)
    for nu in sorted(dual_by_nu, reverse=True):
        dual = dual_by_nu[nu]
        eps = mollifier_width(nu, beta)
        scale = nu * eps ** (-beta)
        if scale > 1 + 1e-12:
            raise ValueError(f"hypothesis nu eps^-beta <= 1 fails at nu={nu}")
        smooth = mollify_dual(dual, nu, beta, problem)
        base = eval_A(dual, coupling, problem.m0, problem.grid, problem.tgrid)
        lhs = eval_A(smooth, coupling, problem.m0, problem.grid, problem.tgrid)
        rows.append(MollifiedDualRow(nu, eps, lhs, base, (lhs - base) / (scale + eps)))
    return rows
