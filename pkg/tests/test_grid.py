from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vvmfg.grid import (
    ImplicitDiffusion,
    TimeGrid,
    TorusGrid,
    delta_kernel,
    diff_backward,
    diff_central,
    diff_forward,
    gaussian_kernel,
    integrate_space,
    integrate_spacetime,
    laplacian,
    periodic_convolve,
    reflect,
    subsample,
)

fields_1d = st.lists(st.floats(-10, 10), min_size=4, max_size=40).map(np.array)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(3, 8)
    with pytest.raises(ValueError):
        TorusGrid(1, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_spacing_and_nodes():
    g = TorusGrid(2, 8)
    assert g.dx * g.n == 1.0
    assert g.nodes.shape == (2, 8, 8)
    assert g.nodes[0][3, 5] == 3 * g.dx and g.nodes[1][3, 5] == 5 * g.dx


def test_for_cfl_rounds_up_to_multiple():
    tg = TimeGrid.for_cfl(1.0, 0.03, multiple_of=4)
    assert tg.dt <= 0.03 and tg.nt % 4 == 0 and tg.nt == 36


def test_forward_difference_of_constant_is_zero():
    g = TorusGrid(2, 8)
    assert np.all(diff_forward(np.full(g.shape, 3.0), g, 1) == 0)


def test_sawtooth_forward_difference():
    g = TorusGrid(1, 4)
    u = np.arange(4) * g.dx
    np.testing.assert_allclose(diff_forward(u, g), [1, 1, 1, 1 - 4])


def test_forward_difference_taylor_bound():
    g = TorusGrid(1, 256)
    x = g.nodes[0]
    err = np.max(np.abs(diff_forward(np.sin(2 * np.pi * x), g) - 2 * np.pi * np.cos(2 * np.pi * (x + g.dx / 2))))
    assert err <= 10 * g.dx**2 * (2 * np.pi) ** 3


def test_laplacian_examples():
    g = TorusGrid(1, 256)
    x = g.nodes[0]
    assert np.all(laplacian(np.full(g.shape, 2.0), g) == 0)
    err = np.max(np.abs(laplacian(np.cos(2 * np.pi * x), g) + 4 * np.pi**2 * np.cos(2 * np.pi * x)))
    assert err <= (2 * np.pi) ** 4 * g.dx**2
    saw = laplacian(np.arange(256.0), g)
    assert np.all(saw[1:-1] == 0)


def test_integrals():
    g = TorusGrid(1, 7)
    x = g.nodes[0]
    assert integrate_space(np.ones(g.shape), g) == pytest.approx(1.0, abs=1e-15)
    assert abs(integrate_space(np.sin(2 * np.pi * x), g)) <= 1e-15
    for n in (3 + 1, 5, 16):
        gn = TorusGrid(1, n)
        assert integrate_space(np.sin(2 * np.pi * gn.nodes[0]) ** 2, gn) == pytest.approx(0.5, abs=1e-15)
    tg = TimeGrid(2.0, 5)
    assert integrate_spacetime(np.ones((6, 7)), g, tg) == pytest.approx(2.0, abs=1e-14)
    with pytest.raises(ValueError):
        integrate_spacetime(np.ones((5, 7)), g, tg)


@given(fields_1d, st.integers(0, 1000))
def test_summation_by_parts(u, seed):
    g = TorusGrid(1, len(u))
    v = np.random.default_rng(seed).normal(size=g.n)
    lhs = np.sum(diff_forward(u, g) * v)
    rhs = -np.sum(u * diff_backward(v, g))
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + np.abs(u).sum() * np.abs(v).sum() * g.n))


@given(fields_1d)
def test_laplacian_is_composition_and_integrates_to_zero(u):
    g = TorusGrid(1, len(u))
    np.testing.assert_allclose(laplacian(u, g), diff_backward(diff_forward(u, g), g), atol=1e-9 * g.n**2 * 20)
    assert abs(integrate_space(laplacian(u, g), g)) <= 1e-9 * g.n * 20


def test_laplacian_2d_composition():
    g = TorusGrid(2, 8)
    u = np.random.default_rng(0).normal(size=g.shape)
    comp = sum(diff_backward(diff_forward(u, g, k), g, k) for k in range(2))
    np.testing.assert_allclose(laplacian(u, g), comp, atol=1e-10)


def test_convolution_examples():
    g = TorusGrid(1, 16)
    u = np.random.default_rng(1).normal(size=g.shape)
    np.testing.assert_allclose(periodic_convolve(u, delta_kernel(g), g), u, atol=1e-13)
    k = gaussian_kernel(g, 0.1)
    assert integrate_space(periodic_convolve(u, k, g), g) == pytest.approx(integrate_space(u, g), abs=1e-13)
    # shifted deltas compose their shifts
    d2, d3 = np.roll(delta_kernel(g), 2), np.roll(delta_kernel(g), 3)
    np.testing.assert_allclose(periodic_convolve(d2, d3, g), np.roll(delta_kernel(g), 5), atol=1e-10)


@given(st.integers(0, 15), st.integers(0, 100))
def test_convolution_commutes_with_shift(s, seed):
    g = TorusGrid(1, 16)
    rng = np.random.default_rng(seed)
    u, k = rng.normal(size=16), rng.uniform(size=16)
    np.testing.assert_allclose(periodic_convolve(np.roll(u, s), k, g), np.roll(periodic_convolve(u, k, g), s), atol=1e-12)


def test_gaussian_kernel_is_even_and_truncates():
    g = TorusGrid(2, 32)
    k = gaussian_kernel(g, 0.05, radius=0.1)
    np.testing.assert_allclose(reflect(k, g), k, atol=1e-14)
    assert k.sum() * g.cell_volume == pytest.approx(1.0)
    assert np.all(k[g.torus_distance() > 0.1 + 1e-9] == 0)


def test_reflect_is_involution_and_central_difference_odd():
    g = TorusGrid(1, 12)
    u = np.random.default_rng(2).normal(size=12)
    np.testing.assert_array_equal(reflect(reflect(u, g), g), u)
    np.testing.assert_allclose(diff_central(reflect(u, g), g), -reflect(diff_central(u, g), g), atol=1e-12)


def test_subsample_nests():
    fine, coarse = TorusGrid(1, 16), TorusGrid(1, 4)
    f = np.arange(9 * 16.0).reshape(9, 16)
    out = subsample(f, fine, coarse, time_factor=2)
    assert out.shape == (5, 4)
    assert out[1, 1] == f[2, 4]
    with pytest.raises(ValueError):
        subsample(f, fine, TorusGrid(1, 5))


@settings(max_examples=25)
@given(st.floats(0.0, 10.0), st.integers(0, 100))
def test_implicit_diffusion_inverts_operator(c, seed):
    g = TorusGrid(2, 8)
    rhs = np.random.default_rng(seed).normal(size=g.shape)
    x = ImplicitDiffusion(g, c)(rhs)
    np.testing.assert_allclose(x - c * laplacian(x, g), rhs, atol=1e-9 * (1 + c))
    assert integrate_space(x, g) == pytest.approx(integrate_space(rhs, g), abs=1e-12)
