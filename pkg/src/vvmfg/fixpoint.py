"""Coupled HJB / FPK solves: damped Picard, policy iteration, or Newton."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CflError, DivergenceError
from .fpk import FpkOptions, face_drift, solve_fpk
from .grid import TimeGrid, TorusGrid, diff_forward, integrate_space, integrate_spacetime
from .hjb import HjbOptions, godunov_policy, solve_hjb, solve_linear_hjb
from .model import HamiltonianSpec, LocalCoupling, NonlocalCoupling

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MfgProblem:
    H: HamiltonianSpec
    coupling: LocalCoupling | NonlocalCoupling
    m0: np.ndarray
    u_T: np.ndarray
    nu: float
    grid: TorusGrid
    tgrid: TimeGrid

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity must be nonnegative")
        m0 = np.asarray(self.m0, dtype=float)
        u_T = np.asarray(self.u_T, dtype=float)
        if m0.shape != self.grid.shape or u_T.shape != self.grid.shape:
            raise ValueError("initial density and terminal cost must be slices on the grid")
        if np.any(m0 < 0):
            raise ValueError("initial density must be nonnegative")
        total = float(integrate_space(m0, self.grid))
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"initial density must have unit mass, got {total}")
        if not np.all(np.isfinite(u_T)):
            raise ValueError("terminal cost must be finite")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "u_T", u_T)

    def with_nu(self, nu: float) -> MfgProblem:
        return MfgProblem(self.H, self.coupling, self.m0, self.u_T, nu, self.grid, self.tgrid)

    def source(self, m: np.ndarray) -> np.ndarray:
        return self.coupling.f(np.maximum(m, 0.0))

    def terminal(self, m_T: np.ndarray) -> np.ndarray:
        if isinstance(self.coupling, NonlocalCoupling):
            return self.coupling.terminal(self.u_T, m_T)
        return self.u_T


@dataclass(frozen=True)
class FixpointOptions:
    theta: float = 0.5
    tol: float = 1e-8
    max_iters: int = 500
    variant: str = "picard"
    averaging: str = "plain"
    hjb: HjbOptions = field(default_factory=HjbOptions)
    fpk: FpkOptions = field(default_factory=FpkOptions)

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("damping theta must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.variant not in ("picard", "policy", "newton"):
            raise ValueError(f"unknown iteration variant {self.variant!r}")
        if self.averaging not in ("plain", "fictitious-play"):
            raise ValueError(f"unknown averaging {self.averaging!r}")


@dataclass
class MfgSolution:
    u: np.ndarray
    m: np.ndarray
    iterations: int
    residual_history: list[tuple[int, float]]
    converged: bool
    runtime_s: float = 0.0

    @property
    def residual(self) -> float:
        return self.residual_history[-1][1] if self.residual_history else np.inf

    def residual_nonincreasing_after(self, start: int = 3) -> bool:
        vals = [r for k, r in self.residual_history if k > start]
        return all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def _lipschitz(v: np.ndarray, grid: TorusGrid) -> float:
    sq = sum(diff_forward(v, grid, k) ** 2 for k in range(grid.d))
    return float(np.max(np.sqrt(sq)))


def a_priori_gradient_bound(problem: MfgProblem) -> float:
    """2 * (Lip(u_T) + T * Lip(source at the initial density))."""
    src = problem.source(problem.m0)
    return 2.0 * (_lipschitz(problem.u_T, problem.grid) + problem.tgrid.T * _lipschitz(src, problem.grid))


def admissible_dt(problem: MfgProblem, hjb_safety: float = 1.0, fpk_safety: float = 0.5) -> float:
    """Largest dt meeting both solvers' CFL conditions for the a-priori drift bound."""
    speed = problem.H.cfl_drift(a_priori_gradient_bound(problem))
    if speed <= 0:
        return np.inf
    grid = problem.grid
    return min(hjb_safety, fpk_safety) * grid.dx / (grid.d * speed)


def l1_spacetime(a: np.ndarray, grid: TorusGrid, tgrid: TimeGrid) -> float:
    return integrate_spacetime(np.abs(a), grid, tgrid)


def _solve_newton(problem, opts, m_init, u_init, start) -> MfgSolution:
    from .newton import ReducedSystem, newton_solve

    grid, tgrid = problem.grid, problem.tgrid
    if u_init is None:
        m = problem.m0 if m_init is None else np.maximum(m_init, 0.0)
        src = problem.source(np.broadcast_to(m, (tgrid.nt + 1,) + grid.shape))
        u_init = solve_hjb(problem.nu, problem.H, src, problem.u_T, grid, tgrid, opts.hjb)
    system = ReducedSystem(problem)
    history: list[tuple[int, float]] = []
    state = {}

    def monitor(it, u):
        try:
            m_new = transport(problem, u, opts)
        except (CflError, DivergenceError):
            history.append((it, np.inf))
            return False
        res = l1_spacetime(m_new - system.density(u), grid, tgrid)
        history.append((it, res))
        state["m"] = m_new
        log.debug("newton iteration %d residual %.3e", it, res)
        return res <= opts.tol

    u, it, _ = newton_solve(problem, u_init, max_iters=opts.max_iters, callback=monitor)
    converged = bool(history) and history[-1][1] <= opts.tol
    if "m" not in state or history[-1][0] != it:
        monitor(it, u)
    if not converged:
        log.warning("Newton iteration stopped at residual %.3e", history[-1][1])
    return MfgSolution(
        u=u,
        m=state["m"] if "m" in state else transport(problem, u, opts),
        iterations=it,
        residual_history=history,
        converged=converged,
        runtime_s=time.perf_counter() - start,
    )


def policy_step(problem: MfgProblem, u: np.ndarray, opts: FixpointOptions | None = None):
    """Freeze b = D_p H(Du), advance the density, and solve the frozen-policy HJB.

    Returns ``(drift, u_new, m_new)`` where ``drift`` is the nodal feedback.
    """
    opts = opts or FixpointOptions(variant="policy")
    grid, tgrid = problem.grid, problem.tgrid
    b = godunov_policy(problem.H, u, grid)
    m_new = solve_fpk(problem.nu, face_drift(problem.H, u, grid), problem.m0, grid, tgrid, opts.fpk)
    u_new = solve_linear_hjb(
        problem.nu, problem.H, b, problem.source(m_new), problem.terminal(m_new[-1]), grid, tgrid, opts.hjb
    )
    return b, u_new, m_new


def transport(problem: MfgProblem, u: np.ndarray, opts: FixpointOptions | None = None) -> np.ndarray:
    """The density carried by the optimal feedback of ``u``."""
    opts = opts or FixpointOptions()
    return solve_fpk(problem.nu, face_drift(problem.H, u, problem.grid), problem.m0, problem.grid, problem.tgrid, opts.fpk)


def solve_mfg(
    problem: MfgProblem,
    opts: FixpointOptions | None = None,
    m_init: np.ndarray | None = None,
    check_cfl: bool = True,
    u_init: np.ndarray | None = None,
) -> MfgSolution:
    """Find a fixed point in m of best response (HJB) followed by density transport (FPK).

    The returned ``u`` is the value function for the last density iterate and
    ``m`` is the density it transports, so the FPK equation holds exactly and
    the HJB source is off by at most the final residual. ``u_init`` warm-starts
    the Newton variant; ``m_init`` warm-starts every variant.
    """
    opts = opts or FixpointOptions()
    grid, tgrid = problem.grid, problem.tgrid
    if check_cfl:
        dt_max = admissible_dt(problem, opts.hjb.cfl_safety, opts.fpk.cfl_safety)
        if tgrid.dt > dt_max * (1 + 1e-12):
            raise CflError("time step too large for the a-priori drift bound", dt_max)
    start = time.perf_counter()
    if opts.variant == "newton":
        return _solve_newton(problem, opts, m_init, u_init, start)
    if m_init is None:
        m = np.broadcast_to(problem.m0, (tgrid.nt + 1,) + grid.shape).copy()
    else:
        m = np.array(m_init, dtype=float)
    history: list[tuple[int, float]] = []
    converged = False
    u = solve_hjb(problem.nu, problem.H, problem.source(m), problem.terminal(m[-1]), grid, tgrid, opts.hjb)
    it = 0
    for it in range(1, opts.max_iters + 1):
        if it > 1:
            src, term = problem.source(m), problem.terminal(m[-1])
            if opts.variant == "policy":
                b = godunov_policy(problem.H, u, grid)
                u = solve_linear_hjb(problem.nu, problem.H, b, src, term, grid, tgrid, opts.hjb)
            else:
                u = solve_hjb(problem.nu, problem.H, src, term, grid, tgrid, opts.hjb)
        m_new = solve_fpk(problem.nu, face_drift(problem.H, u, grid), problem.m0, grid, tgrid, opts.fpk)
        res = l1_spacetime(m_new - m, grid, tgrid)
        history.append((it, res))
        log.debug("iteration %d residual %.3e", it, res)
        if res <= opts.tol:
            converged = True
            break
        theta = 1.0 / (it + 1) if opts.averaging == "fictitious-play" else opts.theta
        if problem.coupling.decoupled:
            # no feedback from m to u: the map is constant, damping would only slow it down
            theta = 1.0
        m = (1 - theta) * m + theta * m_new
    if not converged:
        log.warning("fixed point not reached after %d iterations (residual %.3e)", it, history[-1][1])
    return MfgSolution(
        u=u,
        m=m_new,
        iterations=it,
        residual_history=history,
        converged=converged,
        runtime_s=time.perf_counter() - start,
    )
