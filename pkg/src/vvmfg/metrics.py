"""Error norms, predicted exponents, the circle W1 distance and log-log rate fits.

Space-time fields have shape (nt+1, *grid) and share the quadratures of the
grid module. Gradients use central differences on both arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid, TorusGrid, gradient_central, integrate_space, integrate_spacetime
from .model import HamiltonianSpec, LocalCoupling, conjugate_exponent

# the one-sided acceptance margin below a predicted exponent
DEFAULT_MARGIN = 0.1


def _check_exponents(q: float, r: float, d: int) -> None:
    if not q > 1 or not r > 1:
        raise ValueError(f"need q > 1 and r > 1, got q={q}, r={r}")
    if d < 1:
        raise ValueError("dimension must be at least 1")


def beta(q: float, r: float, d: int) -> float:
    """max{q'r'/(q'+r'), 1}(d+1) - d, which is at least 1."""
    _check_exponents(q, r, d)
    qc, rc = conjugate_exponent(q), conjugate_exponent(r)
    return max(qc * rc / (qc + rc), 1.0) * (d + 1) - d


def beta_regime(q: float, r: float) -> str:
    """``unit`` when 1/q + 1/r <= 1 (beta = 1 in every dimension), else ``dimensional``."""
    _check_exponents(q, r, 1)
    return "unit" if 1.0 / q + 1.0 / r <= 1.0 else "dimensional"


def _integrability(s: float, r: float, d: int) -> float:
    """r s (d+1) / (d - r (s-1)) below the threshold s = 1 + d/r, infinite at or above it."""
    if s >= 1.0 + d / r:
        return math.inf
    return r * s * (d + 1) / (d - r * (s - 1.0))


@dataclass(frozen=True)
class PredictedExponents:
    """Exponent formulas for one (q, r, d) triple.

    ``gamma``, ``eta`` and ``delta`` are integrability exponents reported as
    diagnostics; infinity stands for "any finite exponent". At the threshold
    itself the exponent is finite but arbitrary, also reported as infinity.
    """

    q: float
    r: float
    d: int

    def __post_init__(self):
        _check_exponents(self.q, self.r, self.d)

    @property
    def q_conj(self) -> float:
        return conjugate_exponent(self.q)

    @property
    def r_conj(self) -> float:
        return conjugate_exponent(self.r)

    @property
    def beta(self) -> float:
        return beta(self.q, self.r, self.d)

    @property
    def regime(self) -> str:
        return beta_regime(self.q, self.r)

    @property
    def gamma(self) -> float:
        return _integrability(self.q_conj, self.r, self.d)

    @property
    def eta(self) -> float:
        return 2.0 * (self.d + 1) / self.d

    @property
    def delta(self) -> float:
        return _integrability(self.eta, self.r, self.d)

    @property
    def rates(self) -> dict[str, float]:
        b = self.beta
        return {
            "m_J2_sq": 1.0 / (1.0 + b),
            "u_J1_weighted_sq": 1.0 / (1.0 + b),
            "m_L2_sq": 2.0 / (self.q * (1.0 + b)),
            "u_weighted_sq": 1.0 / (2.0 * (1.0 + b)),
            "u_weighted_sup": 1.0 / (2.0 * (1.0 + b)),
            "nonlocal_pairing": 0.5,
            "nonlocal_pairing_terminal": 0.5,
            "u_L1_sup": 0.25,
        }

    def as_dict(self) -> dict:
        def finite(v):
            return v if math.isfinite(v) else None

        return {
            "q": self.q,
            "r": self.r,
            "d": self.d,
            "q_conj": self.q_conj,
            "r_conj": self.r_conj,
            "beta": self.beta,
            "regime": self.regime,
            "gamma": finite(self.gamma),
            "eta": self.eta,
            "delta": finite(self.delta),
            "rates": self.rates,
        }


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"field shapes differ: {np.shape(a)} vs {np.shape(b)}")


def err_J2_sq(m1, m2, coupling: LocalCoupling, grid: TorusGrid, tgrid: TimeGrid) -> float:
    """int int |J2(m1) - J2(m2)|^2."""
    _same_shape(m1, m2)
    diff = coupling.J(np.maximum(m1, 0.0)) - coupling.J(np.maximum(m2, 0.0))
    return integrate_spacetime(diff**2, grid, tgrid)


def err_J1_weighted_sq(u1, u2, weight, H: HamiltonianSpec, grid: TorusGrid, tgrid: TimeGrid) -> float:
    """int int |J1(Du1) - J1(Du2)|^2 weight."""
    _same_shape(u1, u2)
    _same_shape(u1, weight)
    diff = H.J(gradient_central(u1, grid)) - H.J(gradient_central(u2, grid))
    return integrate_spacetime(np.sum(diff**2, axis=0) * weight, grid, tgrid)


def err_L2_sq(a, b, grid: TorusGrid, tgrid: TimeGrid) -> float:
    _same_shape(a, b)
    return integrate_spacetime((a - b) ** 2, grid, tgrid)


def err_u_weighted_sq(u1, u2, weight, grid: TorusGrid, tgrid: TimeGrid) -> float:
    """int int |u1 - u2|^2 weight."""
    _same_shape(u1, u2)
    _same_shape(u1, weight)
    return integrate_spacetime((u1 - u2) ** 2 * weight, grid, tgrid)


def err_u_weighted_sup(u1, u2, weight, grid: TorusGrid) -> float:
    """max over slices of int |u1 - u2|^2 weight."""
    _same_shape(u1, u2)
    _same_shape(u1, weight)
    return float(np.max(integrate_space((u1 - u2) ** 2 * weight, grid)))


def pairing(f, m1, m2, grid: TorusGrid, tgrid: TimeGrid) -> float:
    """int int (f(m1) - f(m2)) (m1 - m2) for a coupling evaluator ``f``."""
    _same_shape(m1, m2)
    m1, m2 = np.maximum(m1, 0.0), np.maximum(m2, 0.0)
    return integrate_spacetime((f(m1) - f(m2)) * (m1 - m2), grid, tgrid)


def pairing_terminal(terminal, m1_T, m2_T, grid: TorusGrid) -> float:
    """int (terminal(m1_T) - terminal(m2_T)) (m1_T - m2_T) for a slice evaluator ``terminal``."""
    _same_shape(m1_T, m2_T)
    return float(integrate_space((terminal(m1_T) - terminal(m2_T)) * (m1_T - m2_T), grid))


def err_L1_sup_t(u1, u2, grid: TorusGrid) -> float:
    """max over slices of int |u1 - u2|."""
    _same_shape(u1, u2)
    return float(np.max(integrate_space(np.abs(u1 - u2), grid)))


def err_sup(u1, u2) -> float:
    _same_shape(u1, u2)
    return float(np.max(np.abs(u1 - u2)))


def w1_torus_1d(mu1, mu2, grid: TorusGrid) -> float:
    """W1 on the circle between two nodal densities.

    With the cumulative distributions F1, F2 (piecewise constant between
    nodes), W1 = min_c int |F1 - F2 - c| dx, attained at the median of
    F1 - F2.
    """
    if grid.d != 1:
        raise ValueError("the circle Wasserstein distance is only available for d = 1")
    mu1, mu2 = np.asarray(mu1, dtype=float), np.asarray(mu2, dtype=float)
    _same_shape(mu1, mu2)
    if mu1.shape != grid.shape:
        raise ValueError("expected single slices on the grid")
    diff = np.cumsum(mu1 - mu2) * grid.dx
    return float(np.sum(np.abs(diff - np.median(diff))) * grid.dx)


@dataclass
class SweepRow:
    nu: float
    norms: dict[str, float]
    iterations: int
    runtime_s: float
    converged: bool = True


@dataclass
class SweepResult:
    """Rows ordered by strictly decreasing viscosity plus a reference descriptor."""

    rows: list[SweepRow]
    reference: dict = field(default_factory=dict)
    reference_limited: bool = False
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        nus = [row.nu for row in self.rows]
        if any(a <= b for a, b in zip(nus, nus[1:])):
            raise ValueError("sweep rows must have strictly decreasing viscosity")

    def series(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(nu, value) over converged rows that report ``name``."""
        pts = [(r.nu, r.norms[name]) for r in self.rows if r.converged and name in r.norms]
        if not pts:
            return np.empty(0), np.empty(0)
        nu, val = zip(*pts)
        return np.asarray(nu, dtype=float), np.asarray(val, dtype=float)


@dataclass(frozen=True)
class RateFit:
    name: str
    slope: float
    intercept: float
    r_squared: float
    predicted: float
    margin: float
    points: int
    excluded: int

    @property
    def passed(self) -> bool:
        return self.slope >= self.predicted - self.margin

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "predicted": self.predicted,
            "margin": self.margin,
            "points": self.points,
            "excluded": self.excluded,
            "pass": self.passed,
        }


def fit_power_law(nu, values) -> tuple[float, float, float]:
    """Least-squares (slope, intercept, R^2) of log(value) against log(nu)."""
    x, y = np.log(np.asarray(nu, dtype=float)), np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_rate(
    result: SweepResult | tuple,
    name: str,
    predicted: float,
    margin: float = DEFAULT_MARGIN,
) -> RateFit:
    """Fit value ~ C nu^slope; passes when the slope is at least ``predicted - margin``.

    ``result`` is a SweepResult or a pair (nu values, norm values).
    Nonpositive or non-finite values are excluded and counted.
    """
    nu, val = result.series(name) if isinstance(result, SweepResult) else map(np.asarray, result)
    usable = np.isfinite(val) & (val > 0)
    if int(usable.sum()) < 3:
        raise ValueError(f"rate fit for {name} needs at least 3 positive values, got {int(usable.sum())}")
    slope, intercept, r2 = fit_power_law(nu[usable], val[usable])
    return RateFit(name, slope, intercept, r2, predicted, margin, int(usable.sum()), int((~usable).sum()))
