"""Separable power-law Hamiltonians and couplings, their conjugates and coercivity maps.

Hamiltonian family:  H(x, p) = |tau(x) p|^r / r + h(x)
Local coupling:      F(x, m) = (tau(x) m)^q / q,   f = dF/dm = tau^q m^(q-1)
Nonlocal coupling:   f(x, m) = phi * g(phi * m),   g(z) = c1 z + c2 z^3

All evaluators are vectorized. Spatial weights (``tau``, ``h``) are arrays of
the grid shape or scalars and broadcast against the trailing axes of the
arguments. Momentum-like arguments carry their ``d`` components on axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import TorusGrid, periodic_convolve


def conjugate_exponent(s: float) -> float:
    return s / (s - 1.0)


def _as_weight(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """H(x, p) = |tau p|^r / r + h, or H == 0 for the ``zero`` variant.

    The zero variant violates strict convexity and exists only to drive the
    solvers with pure diffusion in tests.
    """

    r: float = 2.0
    tau: np.ndarray | float = 1.0
    h: np.ndarray | float = 0.0
    variant: str = "power"

    def __post_init__(self):
        if self.variant not in ("power", "zero"):
            raise ValueError(f"unknown Hamiltonian variant {self.variant!r}")
        if not self.r > 1:
            raise ValueError(f"growth exponent must satisfy r > 1, got {self.r}")
        object.__setattr__(self, "tau", _as_weight(self.tau, "tau"))
        object.__setattr__(self, "h", _as_weight(self.h, "h"))
        if np.any(self.tau <= 0):
            raise ValueError("tau must be strictly positive")

    @property
    def r_conj(self) -> float:
        return conjugate_exponent(self.r)

    @property
    def c0(self) -> float:
        return 1.0 / max(self.r, self.r_conj)

    @property
    def is_zero(self) -> bool:
        return self.variant == "zero"

    @property
    def x_independent(self) -> bool:
        return self.tau.ndim == 0 and self.h.ndim == 0

    @property
    def satisfies_h2(self) -> bool:
        return not self.is_zero

    def of_norm(self, pnorm: np.ndarray) -> np.ndarray:
        """H as a function of |p| (the family is isotropic in p)."""
        if self.is_zero:
            return np.zeros(np.shape(pnorm))
        return (self.tau * pnorm) ** self.r / self.r + self.h

    def grad_norm(self, pnorm: np.ndarray) -> np.ndarray:
        """|D_p H| as a function of |p|: tau^r |p|^(r-1)."""
        if self.is_zero:
            return np.zeros(np.shape(pnorm))
        return self.tau**self.r * pnorm ** (self.r - 1.0)

    def value(self, p: np.ndarray) -> np.ndarray:
        return self.of_norm(np.sqrt(np.sum(np.square(p), axis=0)))

    def grad(self, p: np.ndarray) -> np.ndarray:
        """tau^r |p|^(r-2) p, taken as 0 at p = 0."""
        p = np.asarray(p, dtype=float)
        if self.is_zero:
            return np.zeros_like(p)
        pnorm = np.sqrt(np.sum(np.square(p), axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(pnorm > 0, self.tau**self.r * pnorm ** (self.r - 2.0), 0.0)
        return scale * p

    def conjugate(self, xi: np.ndarray) -> np.ndarray:
        """H*(x, xi) = |xi / tau|^r' / r' - h."""
        if self.is_zero:
            raise ValueError("the zero Hamiltonian has no finite conjugate")
        xinorm = np.sqrt(np.sum(np.square(xi), axis=0))
        rc = self.r_conj
        return (xinorm / self.tau) ** rc / rc - self.h

    def J(self, p: np.ndarray) -> np.ndarray:
        """tau^(r/2) |p|^(r/2 - 1) p."""
        return self._signed_power(p, self.tau ** (self.r / 2), self.r / 2)

    def J_star(self, xi: np.ndarray) -> np.ndarray:
        """tau^(-r'/2) |xi|^(r'/2 - 1) xi."""
        rc = self.r_conj
        return self._signed_power(xi, self.tau ** (-rc / 2), rc / 2)

    @staticmethod
    def _signed_power(v, coef, s):
        v = np.asarray(v, dtype=float)
        vnorm = np.sqrt(np.sum(np.square(v), axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(vnorm > 0, coef * vnorm ** (s - 1.0), 0.0)
        return scale * v

    def coercivity_residual(self, p, xi, c0: float | None = None) -> np.ndarray:
        """H + H* - p.xi - c0 |J(p) - J*(xi)|^2, nonnegative for the family's c0.

        Evaluated in the scaled form of ``_scaled_coercivity``, so the result
        carries no cancellation error from the large individual terms.
        """
        p = np.asarray(p, dtype=float)
        xi = np.asarray(xi, dtype=float)
        pn = np.sqrt(np.sum(p**2, axis=0))
        xn = np.sqrt(np.sum(xi**2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            cos = np.where((pn > 0) & (xn > 0), np.sum(p * xi, axis=0) / (pn * xn), 0.0)
            log_x = 0.5 * self.r * np.log(self.tau * pn)
            log_y = 0.5 * self.r_conj * np.log(xn / self.tau)
        return _scaled_coercivity(1.0 / self.r, log_x, log_y, c0, np.clip(cos, -1.0, 1.0))

    def cfl_drift(self, pnorm_max: float) -> float:
        """Largest nodal |D_p H| given a bound on |p|."""
        return float(np.max(self.grad_norm(np.asarray(pnorm_max))))


@dataclass(frozen=True, eq=False)
class LocalCoupling:
    """F(x, m) = (tau m)^q / q."""

    q: float = 2.0
    tau: np.ndarray | float = 1.0

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError(f"growth exponent must satisfy q > 1, got {self.q}")
        object.__setattr__(self, "tau", _as_weight(self.tau, "tau"))
        if np.any(self.tau < 0):
            raise ValueError("tau must be nonnegative")

    kind = "local"

    @property
    def q_conj(self) -> float:
        return conjugate_exponent(self.q)

    @property
    def c0(self) -> float:
        return 1.0 / max(self.q, self.q_conj)

    @property
    def decoupled(self) -> bool:
        return bool(np.all(self.tau == 0))

    @staticmethod
    def _check_density(m):
        m = np.asarray(m, dtype=float)
        if np.any(m < 0):
            raise ValueError("F(x, m) = +inf for m < 0; negative density passed to the coupling")
        return m

    def F(self, m) -> np.ndarray:
        m = self._check_density(m)
        return (self.tau * m) ** self.q / self.q

    def f(self, m) -> np.ndarray:
        m = self._check_density(m)
        return self.tau**self.q * m ** (self.q - 1.0)

    def f_inverse(self, alpha) -> np.ndarray:
        """Inverse of m -> f(x, m), extended as an odd function to alpha < 0."""
        alpha = np.asarray(alpha, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = alpha / self.tau**self.q
        return np.sign(ratio) * np.abs(ratio) ** (1.0 / (self.q - 1.0))

    def F_star(self, alpha) -> np.ndarray:
        """(alpha / tau)^q' / q' for alpha >= 0, zero for alpha < 0."""
        alpha = np.asarray(alpha, dtype=float)
        qc = self.q_conj
        pos = np.maximum(alpha, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (pos / self.tau) ** qc / qc
        return np.where(pos > 0, val, 0.0)

    def J(self, m) -> np.ndarray:
        m = self._check_density(m)
        return self.tau ** (self.q / 2) * m ** (self.q / 2)

    def J_star(self, alpha) -> np.ndarray:
        alpha = np.maximum(np.asarray(alpha, dtype=float), 0.0)
        qc = self.q_conj
        with np.errstate(divide="ignore", invalid="ignore"):
            val = self.tau ** (-qc / 2) * alpha ** (qc / 2)
        return np.where(alpha > 0, val, 0.0)

    def coercivity_residual(self, m, alpha, c0: float | None = None) -> np.ndarray:
        """F(m) + F*(alpha) - m alpha - c0 (J(m) - J*(alpha))^2 for m, alpha >= 0."""
        m = self._check_density(m)
        alpha = np.asarray(alpha, dtype=float)
        if np.any(alpha < 0):
            raise ValueError("the coercivity inequality is stated for alpha >= 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            log_x = 0.5 * self.q * np.log(self.tau * m)
            log_y = 0.5 * self.q_conj * np.log(alpha / self.tau)
        return _scaled_coercivity(1.0 / self.q, log_x, log_y, c0)

    def growth_constant(self, m_max: float = 100.0, samples: int = 2001) -> float:
        """A constant C0 >= 1 witnessing C0^-1 m^(q-1) - C0 <= f <= C0 m^(q-1) + C0 on [0, m_max]."""
        tau_q = self.tau**self.q
        c0 = max(1.0, float(np.max(tau_q)), float(np.max(1.0 / np.maximum(tau_q, 1e-300))))
        m = np.linspace(0.0, m_max, samples)[:, None] if tau_q.ndim else np.linspace(0.0, m_max, samples)
        f = tau_q * m ** (self.q - 1)
        base = m ** (self.q - 1)
        if np.any(f > c0 * base + c0) or np.any(f < base / c0 - c0):
            raise AssertionError("growth sandwich violated; coupling weight is degenerate")
        return c0


@dataclass(frozen=True, eq=False)
class NonlocalCoupling:
    """f(x, m) = phi * g(phi * m) with g(z) = c1 z + c2 z^3 and an even, unit-mass kernel phi.

    ``terminal_weight`` scales the measure-dependent terminal cost
    u_T(x, m) = u_bar(x) + terminal_weight * phi * (phi * m)(x).
    """

    kernel: np.ndarray
    grid: TorusGrid
    c1: float = 1.0
    c2: float = 0.0
    terminal_weight: float = 0.0
    _khat: np.ndarray = field(init=False, repr=False)

    kind = "nonlocal"

    def __post_init__(self):
        if self.kernel.shape != self.grid.shape:
            raise ValueError(f"kernel shape {self.kernel.shape} does not match grid {self.grid.shape}")
        if not self.c1 > 0 or self.c2 < 0:
            raise ValueError("need c1 > 0 and c2 >= 0 for a strictly increasing g")
        from .grid import reflect

        if not np.allclose(reflect(self.kernel, self.grid), self.kernel, rtol=0, atol=1e-12 * np.max(self.kernel)):
            raise ValueError("coupling kernel must be even")
        mass = self.kernel.sum() * self.grid.cell_volume
        if abs(mass - 1.0) > 1e-10:
            raise ValueError(f"coupling kernel must have unit discrete mass, got {mass}")
        if self.terminal_weight < 0:
            raise ValueError("terminal weight must be nonnegative for monotonicity")

    @property
    def decoupled(self) -> bool:
        return False

    def g(self, z):
        return self.c1 * z + self.c2 * z**3

    def smooth(self, m):
        return periodic_convolve(m, self.kernel, self.grid)

    def f(self, m) -> np.ndarray:
        return self.smooth(self.g(self.smooth(m)))

    def terminal(self, u_bar: np.ndarray, m_T: np.ndarray) -> np.ndarray:
        if self.terminal_weight == 0:
            return u_bar
        return u_bar + self.terminal_weight * self.smooth(self.smooth(m_T))

    def lipschitz_w1(self) -> float:
        """A W1-Lipschitz constant for x -> f(x, mu) on densities: |f(mu1) - f(mu2)| <= L W1."""
        # |phi*m1 - phi*m2| <= Lip(phi) W1, and g is Lipschitz on [0, max phi]
        from .grid import diff_forward

        lip_phi = max(np.max(np.abs(diff_forward(self.kernel, self.grid, k))) for k in range(self.grid.d))
        zmax = float(np.max(self.kernel))
        lip_g = self.c1 + 3 * self.c2 * zmax**2
        return float(lip_g * lip_phi)


def _scaled_coercivity(a, log_x, log_y, c0=None, cos=1.0) -> np.ndarray:
    """a |X|^2 + b |Y|^2 - |X|^(2a) |Y|^(2b) cos - c0 |X - Y|^2 with b = 1 - a.

    |X|, |Y| are passed as logarithms and cos is the cosine of the angle
    between X and Y. With X = J(p), Y = J*(xi) (after absorbing tau) this is
    the coercivity residual of either power family. The common factor
    max(|X|, |Y|)^2 is pulled out and the rest is evaluated in extended
    precision, so the sign is reliable even where the residual is tiny next
    to the individual terms. Infinite magnitudes give +-inf, never nan.
    ``c0=None`` means min(a, b) = 1/max(s, s') in the same precision, so one
    quadratic term cancels exactly.
    """
    ld = np.longdouble
    a = ld(a)
    b = 1 - a
    c0 = min(a, b) if c0 is None else ld(c0)
    lx, ly = np.broadcast_arrays(np.asarray(log_x, dtype=ld), np.asarray(log_y, dtype=ld))
    cos = np.broadcast_to(np.asarray(cos, dtype=ld), lx.shape)
    ls = np.maximum(lx, ly)
    finite = np.isfinite(ls)
    shift = np.where(finite, ls, 0)
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.exp(lx - shift)
        u = np.exp(ly - shift)
        cross = np.exp(2 * a * (lx - shift) + 2 * b * (ly - shift))
        bracket = (a - c0) * t * t + (b - c0) * u * u + cos * (2 * c0 * t * u - cross)
        scale = np.exp(2 * shift)
        out = np.where(bracket == 0, ld(0), bracket * scale)
    out = np.where(finite, out, ld(0))
    with np.errstate(over="ignore"):
        return out.astype(float)


def fenchel_young_gap(H: HamiltonianSpec, p, xi) -> np.ndarray:
    """H(p) + H*(xi) - p.xi >= 0, with equality iff xi = D_p H(p)."""
    return H.value(p) + H.conjugate(xi) - np.sum(np.asarray(p) * np.asarray(xi), axis=0)
