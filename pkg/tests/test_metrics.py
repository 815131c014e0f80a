from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vvmfg import metrics
from vvmfg.grid import TimeGrid, TorusGrid
from vvmfg.metrics import (
    PredictedExponents,
    SweepResult,
    SweepRow,
    beta,
    beta_regime,
    err_J1_weighted_sq,
    err_J2_sq,
    err_L1_sup_t,
    err_L2_sq,
    err_u_weighted_sq,
    err_u_weighted_sup,
    fit_rate,
    pairing,
    w1_torus_1d,
)
from vvmfg.model import HamiltonianSpec, LocalCoupling

G, TG = TorusGrid(1, 32), TimeGrid(1.0, 8)
SHAPE = (TG.nt + 1,) + G.shape


# ---- exponents


def test_beta_examples():
    assert beta(2, 2, 1) == 1.0
    assert PredictedExponents(2, 2, 1).rates["m_J2_sq"] == 0.5
    for d in (1, 2, 3):
        assert beta(3, 3, d) == 1.0
    assert beta(1.5, 1.5, 2) == pytest.approx(2.5, abs=1e-12)


@settings(max_examples=1000, deadline=None)
@given(st.floats(1.01, 20), st.floats(1.01, 20), st.integers(1, 4))
def test_beta_dichotomy(q, r, d):
    b = beta(q, r, d)
    assert b >= 1.0 - 1e-12
    if 1 / q + 1 / r <= 1:
        assert b == pytest.approx(1.0, abs=1e-12)
        assert beta_regime(q, r) == "unit"


def test_beta_rejects_bad_exponents():
    with pytest.raises(ValueError):
        beta(1.0, 2.0, 1)
    with pytest.raises(ValueError):
        beta(2.0, 2.0, 0)


def test_predicted_exponents_diagnostics():
    e = PredictedExponents(2, 2, 1)
    assert e.eta == 4.0
    d = e.as_dict()
    assert d["beta"] == 1.0 and d["rates"]["u_weighted_sup"] == 0.25
    assert PredictedExponents(2, 4, 1).as_dict()["gamma"] is None  # q' = 2 >= 1 + 1/4


# ---- norms


def test_J2_examples():
    F = LocalCoupling(2.0)
    m = np.ones(SHAPE)
    assert err_J2_sq(m, m, F, G, TG) == 0.0
    assert err_J2_sq(m, m + 0.1, F, G, TG) == pytest.approx(0.01 * TG.T, rel=1e-12)


def test_J1_zero_weight():
    H = HamiltonianSpec(2.0)
    rng = np.random.default_rng(0)
    assert err_J1_weighted_sq(rng.normal(size=SHAPE), rng.normal(size=SHAPE), np.zeros(SHAPE), H, G, TG) == 0.0


def test_u_weighted_examples():
    u = np.random.default_rng(1).normal(size=SHAPE)
    w = np.ones(SHAPE)
    assert err_u_weighted_sq(u, u, w, G, TG) == 0.0
    assert err_u_weighted_sq(u, u + 0.3, w, G, TG) == pytest.approx(0.09 * TG.T, rel=1e-12)
    assert err_u_weighted_sup(u, u + 0.3, w, G) == pytest.approx(0.09, rel=1e-12)
    assert err_u_weighted_sup(u, u + 0.3, np.zeros(SHAPE), G) == 0.0


def test_pairing_examples():
    rng = np.random.default_rng(2)
    m1, m2 = rng.exponential(size=SHAPE), rng.exponential(size=SHAPE)
    assert pairing(lambda m: m, m1, m1, G, TG) == 0.0
    assert pairing(lambda m: m, m1, m2, G, TG) == pytest.approx(err_L2_sq(m1, m2, G, TG), rel=1e-12)
    F = LocalCoupling(3.0)
    from vvmfg.grid import integrate_spacetime

    direct = integrate_spacetime((m1**2 - m2**2) * (m1 - m2), G, TG)
    assert pairing(F.f, m1, m2, G, TG) == pytest.approx(direct, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(1.1, 4.0))
def test_pairing_monotone(seed, q):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.exponential(size=SHAPE), rng.exponential(size=SHAPE)
    assert pairing(LocalCoupling(q).f, m1, m2, G, TG) >= -1e-12


def test_L1_sup_examples():
    u = np.zeros(SHAPE)
    assert err_L1_sup_t(u, u, G) == 0.0
    assert err_L1_sup_t(u, u - 0.2, G) == pytest.approx(0.2)
    n = 1024
    g = TorusGrid(1, n)
    a = np.zeros((3, n))
    a[1] = 0.1 * np.sin(2 * np.pi * g.nodes[0])
    assert err_L1_sup_t(a, np.zeros_like(a), g) == pytest.approx(0.2 / math.pi, rel=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_norms_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.exponential(size=SHAPE), rng.exponential(size=SHAPE)
    w = rng.exponential(size=SHAPE)
    H, F = HamiltonianSpec(3.0), LocalCoupling(1.5)
    cases = [
        lambda x, y: err_J2_sq(x, y, F, G, TG),
        lambda x, y: err_J1_weighted_sq(x, y, w, H, G, TG),
        lambda x, y: err_L2_sq(x, y, G, TG),
        lambda x, y: err_u_weighted_sq(x, y, w, G, TG),
        lambda x, y: err_u_weighted_sup(x, y, w, G),
        lambda x, y: err_L1_sup_t(x, y, G),
    ]
    for norm in cases:
        assert norm(a, b) == norm(b, a) >= 0
        assert norm(a, a) == 0.0


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        err_L2_sq(np.zeros(SHAPE), np.zeros((2, 32)), G, TG)


# ---- W1 on the circle


def test_w1_examples():
    n = 64
    g = TorusGrid(1, n)
    x = g.nodes[0]
    mu = 1 + 0.5 * np.cos(2 * np.pi * x)
    assert w1_torus_1d(mu, mu, g) == 0.0
    d1, d2 = np.zeros(n), np.zeros(n)
    d1[0], d2[n // 2] = 1 / g.dx, 1 / g.dx
    assert w1_torus_1d(d1, d2, g) == pytest.approx(0.5)
    g = TorusGrid(1, 256)
    x = g.nodes[0]
    bump = np.exp(-1000 * (x - 0.5) ** 2)
    bump /= bump.sum() * g.dx
    for k in (1, 16, 40, 64):
        assert w1_torus_1d(bump, np.roll(bump, k), g) == pytest.approx(k * g.dx, rel=1e-9)
    with pytest.raises(ValueError):
        w1_torus_1d(np.ones((8, 8)), np.ones((8, 8)), TorusGrid(2, 8))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_w1_triangle(seed):
    rng = np.random.default_rng(seed)
    g = TorusGrid(1, 48)
    mus = [v / (v.sum() * g.dx) for v in rng.exponential(size=(3, 48))]
    a, b, c = mus
    assert w1_torus_1d(a, c, g) <= w1_torus_1d(a, b, g) + w1_torus_1d(b, c, g) + 1e-10


# ---- rate fits


NUS = 2.0 ** -np.arange(3, 9)


def test_fit_exact_power_law():
    fit = fit_rate((NUS, 3 * NUS**0.5), "x", 0.5)
    assert fit.slope == pytest.approx(0.5, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.passed and fit.as_dict()["pass"]


def test_fit_perturbed_power_law():
    fit = fit_rate((NUS, NUS**0.5 * (1 + 0.01 * np.sin(np.log(NUS)))), "x", 0.5)
    assert abs(fit.slope - 0.5) <= 0.02


def test_fit_needs_three_points():
    with pytest.raises(ValueError):
        fit_rate((NUS[:2], NUS[:2]), "x", 0.5)


def test_fit_excludes_nonpositive_and_is_one_sided():
    vals = NUS.copy()
    vals[0] = 0.0
    fit = fit_rate((NUS, vals), "x", 0.5)
    assert fit.excluded == 1 and fit.points == 5
    assert fit.passed  # measured 1.0 is above the prediction
    assert not fit_rate((NUS, NUS**0.2), "x", 0.5).passed


def test_sweep_result_order_and_series():
    rows = [SweepRow(nu, {"a": nu}, 1, 0.0) for nu in NUS]
    rows[2].converged = False
    res = SweepResult(rows)
    nu, val = res.series("a")
    assert len(nu) == 5 and np.all(nu == val)
    assert fit_rate(res, "a", 1.0).slope == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SweepResult(rows[::-1])
    assert metrics.DEFAULT_MARGIN == 0.1
