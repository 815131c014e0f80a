"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even with
output capture on) or directly with ``python3 tests/test_acceptance.py``.
The full suite solves the production-size sweeps and takes several minutes.
"""

from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from vvmfg import suites
from vvmfg.fixpoint import solve_mfg
from vvmfg.fpk import mass, solve_fpk
from vvmfg.grid import TimeGrid, TorusGrid
from vvmfg.hjb import solve_hjb
from vvmfg.metrics import fit_rate
from vvmfg.model import HamiltonianSpec
from vvmfg.scenarios import fit_all, get_preset, hj_stability_sweep, run_sweep
from vvmfg.variational import duality_gap

SEED = 20240611
_CACHE: dict = {}


def report(number: int, passed: bool, text: str, runtime: float, limit: float) -> None:
    within = runtime <= limit
    status = "PASS" if passed and within else "FAIL"
    line = f"criterion {number}: {status} | {text} | {runtime:.1f}s (limit {limit:.0f}s)"
    capman = _CACHE.get("capman")
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)
    assert passed, line
    assert within, line


@pytest.fixture(autouse=True)
def _uncaptured(pytestconfig):
    _CACHE["capman"] = pytestconfig.pluginmanager.getplugin("capturemanager")
    yield
    _CACHE.pop("capman", None)


def _sweep(name: str):
    """Cached sweep and its wall time; kpz1d serves two criteria."""
    if name not in _CACHE:
        preset = get_preset(name)
        start = time.perf_counter()
        result = run_sweep(preset)
        _CACHE[name] = (preset, result, {f["name"]: f for f in fit_all(preset, result)}, time.perf_counter() - start)
    return _CACHE[name]


def _fit_text(fit: dict) -> str:
    return f"{fit['name']} slope {fit['slope']:.3f} (predicted {fit['predicted']:.3f}), R^2 {fit['r_squared']:.4f}"


def test_criterion_1_coercivity():
    start = time.perf_counter()
    res = suites.coercivity(np.random.default_rng([SEED, 0]))
    runtime = time.perf_counter() - start
    d = res.details
    text = (
        f"min residual {d['min_residual']:.2e} over {d['samples']} samples (need >= -1e-12); "
        f"c0 = 0.51 counterexample found after {d['counterexample_draws']} draws (need <= 1e5)"
    )
    report(1, res.passed, text, runtime, 10)


def test_criterion_2_duality_gap():
    start = time.perf_counter()
    hom = get_preset("homogeneous")
    prob = hom.problem(32, hom.sweep_steps(), 0.1)
    gap_h = duality_gap(solve_mfg(prob, hom.options()), prob)
    kpz = get_preset("kpz1d")
    base = kpz.with_overrides(n=64, n_ref=256)
    nt = base.sweep_steps()
    gaps = []
    for n, steps in ((64, nt), (128, 2 * nt)):
        prob = kpz.problem(n, steps, 0.1)
        gaps.append(duality_gap(solve_mfg(prob, kpz.options()), prob))
    ratio = abs(gaps[0]) / abs(gaps[1])
    runtime = time.perf_counter() - start
    passed = abs(gap_h) <= 1e-6 and ratio >= 1.7
    text = f"homogeneous |gap| {abs(gap_h):.1e} (need <= 1e-6); kpz1d nu=0.1 gap {gaps[0]:.3e} -> {gaps[1]:.3e}, ratio {ratio:.2f} (need >= 1.7)"
    report(2, passed, text, runtime, 120)


def _heat_errors(nu=0.05, T=1.0):
    out_hjb, out_fpk = [], []
    for n in (256, 512):
        g, tg = TorusGrid(1, n), TimeGrid(T, 2 * n)
        x = g.nodes[0]
        u = solve_hjb(nu, HamiltonianSpec(variant="zero"), 0.0, np.cos(2 * np.pi * x), g, tg)
        exact_u = np.exp(-4 * np.pi**2 * nu * (T - tg.times))[:, None] * np.cos(2 * np.pi * x)
        out_hjb.append(np.max(np.abs(u - exact_u)))
        m = solve_fpk(nu, np.zeros((1, n)), 1 + np.cos(2 * np.pi * x), g, tg)
        exact_m = 1 + np.exp(-4 * np.pi**2 * nu * tg.times)[:, None] * np.cos(2 * np.pi * x)
        out_fpk.append(np.max(np.abs(m - exact_m)))
    return out_hjb, out_fpk


def test_criterion_3_solver_oracles():
    start = time.perf_counter()
    e_hjb, e_fpk = _heat_errors()
    g, tg = TorusGrid(1, 256), TimeGrid(1.0, 1000)
    x = g.nodes[0]
    m = solve_fpk(0.01, (0.3 * np.sin(2 * np.pi * x))[None], 1 + 0.5 * np.cos(2 * np.pi * x), g, tg)
    drift = float(np.max(np.abs(mass(m, g) - 1.0)))
    r_hjb, r_fpk = e_hjb[0] / e_hjb[1], e_fpk[0] / e_fpk[1]
    runtime = time.perf_counter() - start
    passed = 1.7 <= r_hjb <= 2.6 and 1.7 <= r_fpk <= 2.6 and drift <= 1e-12
    text = f"heat error ratios hjb {r_hjb:.2f}, fpk {r_fpk:.2f} (need [1.7, 2.6]); mass drift {drift:.1e} over {tg.nt} steps (need <= 1e-12)"
    report(3, passed, text, runtime, 60)


def test_criterion_4_kpz_density_rate():
    preset, result, fits, runtime = _sweep("kpz1d")
    fit = fits["err_m_L2_sq"]
    passed = fit["slope"] >= 0.4 and fit["r_squared"] >= 0.95 and not result.reference_limited
    text = f"n={preset.n}, n_ref={preset.n_ref}: {_fit_text(fit)}; reference-limited {result.reference_limited} (need slope >= 0.4, R^2 >= 0.95)"
    report(4, passed, text, runtime, 900)


def test_criterion_5_nonlocal_rates():
    preset, result, fits, runtime = _sweep("nonlocal1d")
    pair, l1 = fits["pairing"], fits["err_L1_sup_t"]
    passed = pair["slope"] >= 0.4 and l1["slope"] >= 0.15 and not result.reference_limited
    text = f"{_fit_text(pair)} (need >= 0.4); {_fit_text(l1)} (need >= 0.15); reference-limited {result.reference_limited}"
    report(5, passed, text, runtime, 900)


def test_criterion_6_weighted_sup():
    _, result, fits, runtime = _sweep("kpz1d")
    fit = fits["err_u_weighted_sup"]
    passed = fit["slope"] >= 0.15 and not result.reference_limited
    text = f"{_fit_text(fit)} (need >= 0.15); shares the criterion 4 sweep"
    report(6, passed, text, runtime, 900)


def test_criterion_7_hj_stability():
    start = time.perf_counter()
    res = hj_stability_sweep()
    fit = fit_rate(res, "err_u_sup", 0.5)
    runtime = time.perf_counter() - start
    text = f"max|u_nu - u_0| slope {fit.slope:.3f} (predicted 0.5), R^2 {fit.r_squared:.4f} (need >= 0.4)"
    report(7, fit.slope >= 0.4, text, runtime, 300)


def test_criterion_8_dimension_probe():
    preset, result, fits, runtime = _sweep("subcrit2d")
    fit = fits["err_m_J2_sq"]
    threshold = 1 / 3.5 - 0.1
    passed = fit["slope"] >= threshold and not result.reference_limited
    tight = "materially exceeds" if fit["slope"] > fit["predicted"] + 0.1 else "does not materially exceed"
    text = (
        f"{preset.n}^2 sweep, {preset.n_ref}^2 reference (reduced grid): {_fit_text(fit)} "
        f"(need >= {threshold:.3f}); measured slope {tight} the proven exponent"
    )
    report(8, passed, text, runtime, 1800)


def test_criterion_9_invariant_suites():
    start = time.perf_counter()
    results = suites.run_suites(list(suites.SUITES), SEED)
    runtime = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    text = f"{len(results) - len(failed)}/{len(results)} suites pass under seed {SEED}" + (f"; failed: {', '.join(failed)}" if failed else "")
    report(9, not failed, text, runtime, 180)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", *sys.argv[1:]]))
