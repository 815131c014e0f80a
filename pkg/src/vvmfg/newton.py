"""Newton's method for the discrete MFG system with a local coupling.

For a local coupling f(x, .) is invertible, so the discrete HJB step can be
solved for the density: with S = I - nu dt Lap,

    m^{k+1} = f^{-1}( (S u^k - u^{k+1}) / dt + H_G(u^{k+1}) ).

Substituting into the FPK step leaves one nonlinear equation per space-time
node in the unknowns u^0 .. u^{nt-1}:

    R^k(u) = S m^{k+1} - m^k + dt div_upwind(m^k, b(u^k)) = 0.

Its roots are exactly the fixed points of the HJB/FPK composition used by the
Picard coupler; only the way of finding them differs. The Jacobian is sparse
(three time levels, a few nodes per axis) and is assembled by finite
differences on a coloring of the space-time grid. The linear systems behave
like a variable-coefficient elliptic operator in (t, x) and are solved with
classical algebraic multigrid as a GMRES preconditioner.
"""

from __future__ import annotations

import logging
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fpk import divergence_upwind, face_drift
from .grid import ImplicitDiffusion, TorusGrid, laplacian
from .hjb import godunov_hamiltonian

log = logging.getLogger(__name__)

# below this many unknowns a sparse direct solve is cheaper than multigrid setup;
# fill-in grows much faster in 2D, where the limit is correspondingly lower
DIRECT_SOLVE_LIMIT = {1: 400_000, 2: 12_000}
# dependence of R at a node reaches at most 3 nodes along each axis
_SPATIAL_REACH = 3
_TIME_COLORS = 3


def _spatial_period(n: int) -> int:
    """Smallest divisor of n that keeps columns of one color from sharing a row."""
    for p in range(2 * _SPATIAL_REACH + 1, n):
        if n % p == 0:
            return p
    return n


class ReducedSystem:
    """The FPK residual of a local-coupling problem as a function of u alone."""

    def __init__(self, problem):
        if problem.coupling.kind != "local":
            raise ValueError("Newton's method needs an invertible local coupling")
        if problem.coupling.decoupled:
            raise ValueError("Newton's method needs a nonzero coupling weight")
        self.problem = problem
        self.grid: TorusGrid = problem.grid
        self.nt = problem.tgrid.nt
        self.dt = problem.tgrid.dt
        self.shape = (self.nt,) + self.grid.shape
        self.size = int(np.prod(self.shape))
        self._solve = ImplicitDiffusion(self.grid, problem.nu * self.dt)

    def _S(self, v):
        nu = self.problem.nu
        return v - nu * self.dt * laplacian(v, self.grid) if nu > 0 else v

    def defect(self, R: np.ndarray) -> float:
        """max |S^-1 R|: the gap between m^{k+1} and one FPK step from m^k."""
        return float(np.max(np.abs(self._solve(R.reshape(self.shape)))))

    def full(self, U: np.ndarray) -> np.ndarray:
        u = np.empty((self.nt + 1,) + self.grid.shape)
        u[:-1] = U.reshape(self.shape)
        u[-1] = self.problem.u_T
        return u

    def density(self, u: np.ndarray) -> np.ndarray:
        """The density implied by the HJB steps, with m^0 the initial density."""
        ham, _ = godunov_hamiltonian(self.problem.H, u[1:], self.grid)
        alpha = (self._S(u[:-1]) - u[1:]) / self.dt + ham
        m = np.empty_like(u)
        m[0] = self.problem.m0
        m[1:] = self.problem.coupling.f_inverse(alpha)
        return m

    def residual(self, U: np.ndarray) -> np.ndarray:
        u = self.full(U)
        m = self.density(u)
        b = face_drift(self.problem.H, u[:-1], self.grid)
        R = self._S(m[1:]) - m[:-1] + self.dt * divergence_upwind(m[:-1], b, self.grid)
        return R.ravel()

    def jacobian(self, U: np.ndarray, h: float = 1e-7) -> sp.csr_matrix:
        """Central-difference Jacobian, one pair of residual evaluations per color.

        Viscous rows combine terms of size dt^-1 dx^-4 that nearly cancel, so
        one-sided differences are not accurate enough there.
        """
        d, n = self.grid.d, self.grid.n
        period = _spatial_period(n)
        idx = np.indices(self.shape)
        rows, cols, vals = [], [], []
        for ct in range(_TIME_COLORS):
            for cx in np.ndindex(*([period] * d)):
                mask = idx[0] % _TIME_COLORS == ct
                for a in range(d):
                    mask &= idx[1 + a] % period == cx[a]
                dU = np.where(mask, h, 0.0).ravel()
                dR = ((self.residual(U + dU) - self.residual(U - dU)) / (2 * h)).reshape(self.shape)
                hit = np.nonzero(dR)
                k = hit[0]
                off = (ct - k) % _TIME_COLORS
                j = np.where(off == 2, k - 1, k + off)
                ok = (j >= 0) & (j < self.nt)
                col_idx = [j]
                for a in range(d):
                    i = hit[1 + a]
                    off = (cx[a] - i) % period
                    c = np.where(off > period // 2, i + off - period, i + off) % n
                    col_idx.append(c)
                rows.append(np.ravel_multi_index(tuple(x[ok] for x in hit), self.shape))
                cols.append(np.ravel_multi_index(tuple(x[ok] for x in col_idx), self.shape))
                vals.append(dR[hit][ok])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, self.size)
        )


def _linear_solve(J: sp.csr_matrix, rhs: np.ndarray, rtol: float, d: int = 1) -> np.ndarray:
    if J.shape[0] <= DIRECT_SOLVE_LIMIT[d]:
        return spla.spsolve(J.tocsc(), rhs)
    import pyamg

    ml = pyamg.ruge_stuben_solver(J)
    x = np.asarray(ml.solve(rhs, tol=rtol, accel="gmres", maxiter=400))
    rel = np.linalg.norm(J @ x - rhs) / np.linalg.norm(rhs)
    if rel > 1e3 * rtol:
        log.warning("multigrid solve reached relative residual %.2e only", rel)
    return x


def newton_solve(problem, u0: np.ndarray, tol_inf: float = 1e-11, max_iters: int = 50, callback=None):
    """Drive the reduced residual to zero from the initial value function ``u0``.

    ``callback(iteration, u)`` is called before every Newton step and may
    return True to stop early. Returns ``(u, iterations, converged)``.
    """
    system = ReducedSystem(problem)
    U = np.array(u0[:-1], dtype=float).ravel()
    R = system.residual(U)
    rnorm = system.defect(R)
    for it in range(1, max_iters + 1):
        if callback is not None and callback(it, system.full(U)):
            return system.full(U), it, True
        if rnorm <= tol_inf:
            return system.full(U), it, True
        start = time.perf_counter()
        J = system.jacobian(U)
        step = _linear_solve(J, -R, rtol=1e-8, d=problem.grid.d)
        lam = 1.0
        while True:
            trial = U + lam * step
            R_trial = system.residual(trial)
            r_trial = system.defect(R_trial)
            if np.isfinite(r_trial) and r_trial < (1 - 1e-4 * lam) * rnorm:
                break
            lam *= 0.5
            if lam < 1e-4:
                log.warning("Newton line search stalled at residual %.3e", rnorm)
                return system.full(U), it, False
        U, R, rnorm = trial, R_trial, r_trial
        log.debug("newton %d: defect %.3e step %.3g (%.1fs)", it, rnorm, lam, time.perf_counter() - start)
    return system.full(U), max_iters, rnorm <= tol_inf
