"""Command line entry point: ``vvmfg {run,sweep,check,presets}``.

Configuration is a JSON object with flat dotted keys, for example::

    {"preset": "kpz1d", "grid.n": 64, "grid.n_ref": 256, "output.svg": false}

Keys given with ``--set key=value`` override the file. Every emitted JSON
record carries the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .errors import CflError, DivergenceError
from .fixpoint import solve_mfg
from .fpk import mass
from .scenarios import Preset, builtin_presets, fit_all, get_preset, run_sweep
from .suites import SUITES, run_suites
from .variational import duality_gap

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240611
SWEEP_COLUMNS = (
    "nu",
    "err_m_J2_sq",
    "err_J1_weighted_sq",
    "err_m_L2_sq",
    "err_u_weighted_sq",
    "err_u_weighted_sup",
    "pairing",
    "pairing_terminal",
    "err_L1_sup_t",
    "iters",
    "runtime_s",
)

# config key -> Preset field
PRESET_KEYS = {
    "problem.d": "d",
    "problem.q": "q",
    "problem.r": "r",
    "problem.coupling": "coupling",
    "problem.kernel_sigma": "kernel_sigma",
    "problem.c1": "c1",
    "problem.c2": "c2",
    "problem.terminal_weight": "terminal_weight",
    "problem.T": "T",
    "problem.m0_amp": "m0_amp",
    "problem.uT_amp": "uT_amp",
    "grid.n": "n",
    "grid.n_ref": "n_ref",
    "grid.nt_ref": "nt_ref",
    "sweep.nus": "nus",
    "sweep.norms": "norms",
    "solver.variant": "variant",
    "solver.theta": "theta",
    "solver.tol": "tol",
    "solver.max_iters": "max_iters",
}
OTHER_DEFAULTS = {
    "preset": None,
    "run.nu": 0.1,
    "run.nt": 0,
    "output.dir": "out",
    "output.csv": True,
    "output.json": True,
    "output.svg": True,
    "output.timings": True,
    "seed": DEFAULT_SEED,
    "check.suites": list(SUITES),
    "check.c0": None,
}
KNOWN_KEYS = set(PRESET_KEYS) | set(OTHER_DEFAULTS)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str]) -> dict:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object with flat dotted keys")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        raw[key.strip()] = _parse_value(value)
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return raw


def resolve(raw: dict) -> tuple[dict, Preset]:
    """Full configuration with every default filled in, and the preset it describes."""
    cfg = dict(OTHER_DEFAULTS)
    cfg.update({k: v for k, v in raw.items() if k in OTHER_DEFAULTS})
    try:
        base = get_preset(cfg["preset"]) if cfg["preset"] else Preset("custom")
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    changes = {PRESET_KEYS[k]: v for k, v in raw.items() if k in PRESET_KEYS}
    if isinstance(changes.get("nus"), list):
        changes["nus"] = tuple(changes["nus"])
    if isinstance(changes.get("norms"), list):
        changes["norms"] = tuple(changes["norms"])
    try:
        preset = base.with_overrides(**changes)
        preset.exponents
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem description: {exc}") from exc
    fields = preset.as_dict()
    for key, name in PRESET_KEYS.items():
        cfg[key] = fields[name]
    if isinstance(cfg["check.suites"], str):
        cfg["check.suites"] = [s for s in cfg["check.suites"].split(",") if s]
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return dict(sorted(cfg.items(), key=lambda kv: kv[0])), preset


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _finite(value):
    """JSON has no infinities; emit them as strings."""
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def write_json(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_finite(record), indent=2, sort_keys=True, default=_json_default) + "\n")


def _fmt(value) -> str:
    """Round-trip, locale-independent number formatting."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _error(outdir: Path | None, kind: str, message: str, cfg: dict | None, code: int) -> int:
    record = {"error": kind, "message": message, "config": cfg}
    print(json.dumps(_finite(record), sort_keys=True, default=_json_default), file=sys.stderr)
    if outdir is not None:
        try:
            write_json(outdir / "error.json", record)
        except OSError:
            pass
    return code


# ---------------------------------------------------------------------------
# run


def _run_steps(preset: Preset, cfg: dict) -> int:
    """run.nt if set, otherwise the time grid a sweep would use at grid.n."""
    if cfg["run.nt"]:
        return int(cfg["run.nt"])
    return preset.sweep_steps()


def cmd_run(cfg: dict, preset: Preset) -> int:
    outdir = Path(cfg["output.dir"])
    nu = float(cfg["run.nu"])
    try:
        nt = _run_steps(preset, cfg)
        problem = preset.problem(preset.n, nt, nu)
        sol = solve_mfg(problem, preset.options())
    except (CflError, DivergenceError, ValueError) as exc:
        return _error(outdir, type(exc).__name__, str(exc), cfg, EXIT_SOLVER)
    gap = duality_gap(sol, problem) if preset.coupling == "local" else None
    record = {
        "command": "run",
        "version": __version__,
        "config": cfg,
        "nt": nt,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "residual_history": [[k, r] for k, r in sol.residual_history],
        "duality_gap": gap,
        "max_mass_drift": float(np.max(np.abs(mass(sol.m, problem.grid) - 1.0))),
        "runtime_s": sol.runtime_s if cfg["output.timings"] else None,
    }
    if cfg["output.json"]:
        write_json(outdir / "meta.json", record)
    if cfg["output.csv"]:
        _write_fields(outdir / "fields.csv", problem, sol.u, sol.m)
    status = "converged" if sol.converged else "not converged"
    print(f"run {preset.name}: nu={nu} n={preset.n} nt={nt} {status} after {sol.iterations} iterations, gap={gap}")
    if not sol.converged:
        return _error(outdir, "NotConverged", f"fixed point not reached, residual {sol.residual:.3e}", cfg, EXIT_SOLVER)
    return EXIT_OK


def _write_fields(path: Path, problem, u, m) -> None:
    """u and m on the slices t = 0, T/2, T."""
    grid, tgrid = problem.grid, problem.tgrid
    coords = [c.ravel() for c in np.meshgrid(*grid.nodes, indexing="ij")] if grid.d > 1 else [grid.nodes[0]]
    names = ["x", "y"][: grid.d]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *names, "u", "m"])
        for k in sorted({0, tgrid.nt // 2, tgrid.nt}):
            t = tgrid.times[k]
            for idx, (uu, mm) in enumerate(zip(u[k].ravel(), m[k].ravel())):
                writer.writerow([_fmt(t), *(_fmt(c[idx]) for c in coords), _fmt(uu), _fmt(mm)])


# ---------------------------------------------------------------------------
# sweep


def write_sweep_csv(path: Path, result: metrics.SweepResult, timings: bool = True) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in result.rows:
            values = {"nu": row.nu, "iters": row.iterations, "runtime_s": row.runtime_s if timings else None}
            values.update(row.norms)
            writer.writerow([_fmt(values.get(col)) for col in SWEEP_COLUMNS])


def cmd_sweep(cfg: dict, preset: Preset) -> int:
    outdir = Path(cfg["output.dir"])
    try:
        result = run_sweep(preset)
    except (CflError, DivergenceError, ValueError, RuntimeError) as exc:
        return _error(outdir, type(exc).__name__, str(exc), cfg, EXIT_SOLVER)
    fits = fit_all(preset, result)
    reference = dict(result.reference)
    if not cfg["output.timings"]:
        reference.pop("runtime_s", None)
        reference.pop("total_runtime_s", None)
    record = {
        "command": "sweep",
        "version": __version__,
        "config": cfg,
        "exponents": preset.exponents.as_dict(),
        "fits": fits,
        "reference": reference,
        "reference_limited": result.reference_limited,
        "notes": result.notes,
        "rows_converged": [row.converged for row in result.rows],
    }
    if cfg["output.csv"]:
        write_sweep_csv(outdir / "sweep.csv", result, cfg["output.timings"])
    if cfg["output.json"]:
        write_json(outdir / "rates.json", record)
        write_json(outdir / "meta.json", {k: record[k] for k in ("command", "version", "config", "reference", "notes")})
    if cfg["output.svg"]:
        (outdir / "plot.svg").write_text(render_svg(result, preset, fits))
    for fit in fits:
        if "slope" in fit:
            print(f"{fit['name']}: slope {fit['slope']:.3f} (predicted {fit['predicted']:.3f}, R^2 {fit['r_squared']:.4f}) {'PASS' if fit['pass'] else 'FAIL'}")
        else:
            print(f"{fit['name']}: skipped ({fit['skipped']})")
    if result.reference_limited:
        print("sweep is reference-limited: " + "; ".join(result.notes))
    return EXIT_OK


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def render_svg(result: metrics.SweepResult, preset: Preset, fits: list, width: int = 640, height: int = 440) -> str:
    """Log-log plot of each norm against nu with dashed predicted-slope guides."""
    series = {name: result.series(name) for name in preset.norms}
    series = {k: (x[v > 0], v[v > 0]) for k, (x, v) in series.items() if np.any(v > 0)}
    left, right, top, bottom = 70, 170, 20, 50
    pw, ph = width - left - right, height - top - bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if not series:
        out.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no positive data</text></svg>')
        return "\n".join(out) + "\n"
    lx = np.log10(np.concatenate([x for x, _ in series.values()]))
    ly = np.log10(np.concatenate([v for _, v in series.values()]))
    x0, x1 = math.floor(lx.min()), math.ceil(lx.max())
    y0, y1 = math.floor(ly.min()), math.ceil(ly.max())
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)

    def px(v):
        return left + (math.log10(v) - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - math.log10(v)) / (y1 - y0) * ph

    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for e in range(x0, x1 + 1):
        x = px(10.0**e)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 20}" font-size="12" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        y = py(10.0**e)
        out.append(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="12" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" font-size="13" text-anchor="middle">viscosity nu</text>')
    out.append(f'<clipPath id="plot"><rect x="{left}" y="{top}" width="{pw}" height="{ph}"/></clipPath>')
    for i, (name, (x, v)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, v))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, b in zip(x, v):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        # guide with the predicted slope through the largest-nu point
        slope = preset.predicted(name)
        a0, b0 = x[0], v[0]
        a1 = 10.0**x0
        b1 = b0 * (a1 / a0) ** slope
        out.append(
            f'<line x1="{px(a0):.2f}" y1="{py(b0):.2f}" x2="{px(a1):.2f}" y2="{py(b1):.2f}" '
            f'stroke="{color}" stroke-dasharray="5,4" clip-path="url(#plot)"/>'
        )
        fit = next((f for f in fits if f.get("name") == name and "slope" in f), None)
        label = f"{name} {fit['slope']:.2f}" if fit else name
        ty = top + 15 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ty - 4}" x2="{left + pw + 30}" y2="{ty - 4}" stroke="{color}"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ty}" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# check and presets


def cmd_check(cfg: dict, preset: Preset) -> int:
    outdir = Path(cfg["output.dir"])
    names = list(cfg["check.suites"])
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        return _error(outdir, "UnknownSuite", f"unknown suite(s): {', '.join(unknown)}; known: {', '.join(SUITES)}", cfg, EXIT_CONFIG)
    results = run_suites(names, cfg["seed"], cfg["check.c0"])
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} ({r.runtime_s:.2f}s)")
    record = {
        "command": "check",
        "version": __version__,
        "config": cfg,
        "suites": [
            {**r.as_dict(), "runtime_s": r.runtime_s if cfg["output.timings"] else None} for r in results
        ],
        "pass": not failed,
    }
    if cfg["output.json"]:
        write_json(outdir / "meta.json", record)
    if failed:
        for r in failed:
            print(f"violated: {r.name} witness={json.dumps(_finite(r.witness), default=_json_default)}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_presets(cfg: dict, preset: Preset) -> int:
    for p in builtin_presets():
        ex = p.exponents
        rates = ", ".join(f"{name}={p.predicted(name):.4g}" for name in p.norms)
        print(f"{p.name}: d={p.d} q={p.q:g} r={p.r:g} beta={ex.beta:g} ({ex.regime}) n={p.n} n_ref={p.n_ref}")
        print(f"    {p.description}")
        print(f"    predicted: {rates}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "presets": cmd_presets}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vvmfg", description="Vanishing-viscosity rates for mean field games on the torus.")
    parser.add_argument("--version", action="version", version=f"vvmfg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "solve one problem and write meta.json and fields.csv"),
        ("sweep", "viscosity sweep with rate fits: sweep.csv, rates.json, plot.svg"),
        ("check", "seeded invariant suites"),
        ("presets", "list builtin presets with predicted exponents"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with flat dotted keys")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--preset", help="shorthand for --set preset=NAME")
        p.add_argument("--out", help="shorthand for --set output.dir=DIR")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "check":
            p.add_argument("--suites", help="comma-separated suite names")
            p.add_argument("--seed", type=int)
            p.add_argument("--c0", type=float, help="inject a coercivity constant at q = 2")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s %(message)s")
    overrides = list(args.overrides)
    if args.preset:
        overrides.append(f"preset={args.preset}")
    if args.out:
        overrides.append(f"output.dir={args.out}")
    if args.command == "check":
        if args.suites is not None:
            overrides.append(f"check.suites={args.suites}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.c0 is not None:
            overrides.append(f"check.c0={args.c0!r}")
    try:
        raw = load_config(args.config, overrides)
        cfg, preset = resolve(raw)
    except ConfigError as exc:
        outdir = Path(args.out) if args.out else None
        return _error(outdir, "ConfigError", str(exc), None, EXIT_CONFIG)
    start = time.perf_counter()
    code = COMMANDS[args.command](cfg, preset)
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
