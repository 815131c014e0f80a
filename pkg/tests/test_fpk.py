from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vvmfg.errors import CflError
from vvmfg.grid import TimeGrid, TorusGrid, integrate_space
from vvmfg.fpk import FpkOptions, divergence_upwind, face_drift, mass, solve_fpk
from vvmfg.model import HamiltonianSpec


def heat_error(n, nt, nu=0.05, T=1.0):
    g = TorusGrid(1, n)
    x = g.nodes[0]
    tg = TimeGrid(T, nt)
    m = solve_fpk(nu, np.zeros((1, n)), 1 + np.cos(2 * np.pi * x), g, tg)
    exact = 1 + np.exp(-4 * np.pi**2 * nu * tg.times)[:, None] * np.cos(2 * np.pi * x)
    return float(np.max(np.abs(m - exact)))


def test_heat_closed_form_and_first_order():
    e1, e2 = heat_error(256, 512), heat_error(512, 1024)
    assert e1 <= 1e-2
    assert 1.7 <= e1 / e2 <= 2.6


def test_uniform_state_is_stationary():
    g, tg = TorusGrid(2, 8), TimeGrid(1.0, 10)
    m = solve_fpk(0.1, np.zeros((2, 8, 8)), np.ones(g.shape), g, tg)
    np.testing.assert_allclose(m, 1.0, atol=1e-14)


def test_constant_drift_moves_center_of_mass():
    # the upwind flux moves the first moment by exactly the velocity -b per unit time
    n = 128
    g = TorusGrid(1, n)
    x = g.nodes[0]
    T, b = 0.5, -0.25
    tg = TimeGrid(T, 64)
    m0 = np.exp(-200 * (x - 0.3) ** 2)
    m = solve_fpk(0.001, np.full((1, n), b), m0, g, tg)
    center = integrate_space(x * m, g) / integrate_space(m, g)
    np.testing.assert_allclose(center - center[0], -b * tg.times, atol=1e-6)


def test_mass_examples():
    g = TorusGrid(1, 32)
    assert mass(np.ones(32), g) == pytest.approx(1.0)
    assert mass(np.zeros(32), g) == 0.0


def test_mass_conserved_over_1000_steps():
    g, tg = TorusGrid(1, 128), TimeGrid(1.0, 1000)
    x = g.nodes[0]
    drift = 0.2 * np.cos(2 * np.pi * x)[None]
    m = solve_fpk(0.01, drift, 1 + 0.5 * np.sin(2 * np.pi * x), g, tg)
    assert np.max(np.abs(mass(m, g) - 1.0)) <= 1e-12
    assert m.min() >= -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.01]))
def test_conservation_and_positivity_2d(seed, nu):
    rng = np.random.default_rng(seed)
    g, tg = TorusGrid(2, 16), TimeGrid(0.2, 40)
    m0 = rng.exponential(size=g.shape)
    m0 /= integrate_space(m0, g)
    drift = rng.uniform(-0.6, 0.6, size=(2, 16, 16))
    m = solve_fpk(nu, drift, m0, g, tg)
    assert np.max(np.abs(mass(m, g) - 1.0)) <= 1e-12
    assert m.min() >= -1e-12


def test_cfl_and_input_validation():
    g = TorusGrid(1, 32)
    with pytest.raises(CflError):
        solve_fpk(0.0, np.full((1, 32), 10.0), np.ones(32), g, TimeGrid(1.0, 10))
    with pytest.raises(ValueError):
        solve_fpk(0.0, np.zeros((1, 32)), -np.ones(32), g, TimeGrid(1.0, 10))
    with pytest.raises(ValueError):
        FpkOptions(cfl_safety=0.0)


def test_divergence_telescopes():
    g = TorusGrid(2, 8)
    rng = np.random.default_rng(0)
    div = divergence_upwind(rng.uniform(size=g.shape), rng.normal(size=(2, 8, 8)), g)
    assert abs(integrate_space(div, g)) <= 1e-13


def test_face_drift_matches_nodal_gradient_on_linear_profile():
    g = TorusGrid(1, 64)
    H = HamiltonianSpec(3.0)
    u = 0.1 * np.sin(2 * np.pi * g.nodes[0])
    b = face_drift(H, u, g)
    xf = g.nodes[0] + g.dx / 2
    exact = H.grad((0.2 * np.pi * np.cos(2 * np.pi * xf))[None])[0]
    assert np.max(np.abs(b[0] - exact)) <= 1e-3


def test_linear_in_initial_density_for_frozen_drift():
    g, tg = TorusGrid(1, 64), TimeGrid(0.5, 100)
    x = g.nodes[0]
    b = 0.3 * np.sin(2 * np.pi * x)[None]
    m1 = solve_fpk(0.02, b, 1 + 0.3 * np.cos(2 * np.pi * x), g, tg)
    m2 = solve_fpk(0.02, b, np.exp(np.sin(2 * np.pi * x)), g, tg)
    m12 = solve_fpk(0.02, b, 1 + 0.3 * np.cos(2 * np.pi * x) + 3 * np.exp(np.sin(2 * np.pi * x)), g, tg)
    np.testing.assert_allclose(m12, m1 + 3 * m2, atol=1e-12)
