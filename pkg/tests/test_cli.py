from __future__ import annotations

import csv
import json

import pytest

from vvmfg.cli import SWEEP_COLUMNS, ConfigError, load_config, main, resolve

SMALL_KPZ = ["--preset", "kpz1d", "--set", "grid.n=16", "--set", "grid.n_ref=64"]


def read_json(path):
    return json.loads(path.read_text())


def test_presets_lists_exponents(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "kpz1d" in out and "subcrit2d" in out and "beta=2.5" in out


def test_run_homogeneous(tmp_path):
    assert main(["run", "--preset", "homogeneous", "--out", str(tmp_path)]) == 0
    meta = read_json(tmp_path / "meta.json")
    assert meta["converged"] and abs(meta["duality_gap"]) <= 1e-6
    assert meta["config"]["preset"] == "homogeneous"
    assert (tmp_path / "fields.csv").exists()


def test_run_is_byte_deterministic(tmp_path):
    args = ["run", *SMALL_KPZ, "--set", "run.nu=0.05", "--set", "output.timings=false", "--out", str(tmp_path)]
    assert main(args) == 0
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert main(args) == 0
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == first


def test_config_file_and_every_record_carries_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "homogeneous", "run.nu": 0.2, "output.dir": str(tmp_path / "o")}))
    assert main(["run", "--config", str(cfg)]) == 0
    meta = read_json(tmp_path / "o" / "meta.json")
    assert meta["config"]["run.nu"] == 0.2
    assert {"grid.n", "solver.tol", "seed", "output.svg"} <= set(meta["config"])


@pytest.mark.parametrize(
    "content, extra",
    [("{not json", []), ('{"grid.bogus": 1}', []), ("{}", ["--set", "grid.n=abc"]), ("[1, 2]", [])],
)
def test_malformed_config_exits_2(tmp_path, capsys, content, extra):
    cfg = tmp_path / "bad.json"
    cfg.write_text(content)
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out), *extra]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "ConfigError"
    assert read_json(out / "error.json")["error"] == "ConfigError"


def test_load_and_resolve():
    raw = load_config(None, ["preset=kpz1d", "grid.n=32", "sweep.nus=[0.1, 0.05]"])
    cfg, preset = resolve(raw)
    assert preset.name == "kpz1d" and preset.n == 32 and preset.nus == (0.1, 0.05)
    assert list(cfg) == sorted(cfg)
    with pytest.raises(ConfigError):
        resolve(load_config(None, ["preset=nope"]))
    with pytest.raises(ConfigError):
        load_config(None, ["no_equals_sign"])


def test_sweep_outputs(tmp_path, capsys):
    assert main(["sweep", *SMALL_KPZ, "--set", "output.svg=false", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert rows[0] == list(SWEEP_COLUMNS)
    assert len(rows) - 1 >= 5
    for row in rows[1:]:
        assert row[SWEEP_COLUMNS.index("pairing")] == ""
        assert float(row[0]) > 0
    assert not (tmp_path / "plot.svg").exists()
    rates = read_json(tmp_path / "rates.json")
    assert {f["name"] for f in rates["fits"]} == set(rates["config"]["sweep.norms"])
    assert "reference_limited" in rates


def test_sweep_svg_and_fixed_columns_for_nonlocal(tmp_path):
    args = ["sweep", "--preset", "nonlocal1d", "--set", "grid.n=16", "--set", "grid.n_ref=64"]
    args += ["--set", "sweep.nus=[0.125, 0.0625, 0.03125]", "--out", str(tmp_path)]
    assert main(args) == 0
    header = next(csv.reader((tmp_path / "sweep.csv").open()))
    assert header == list(SWEEP_COLUMNS)
    svg = (tmp_path / "plot.svg").read_text()
    assert svg.startswith("<svg") and "pairing" in svg


def test_check_default_seed_passes(tmp_path):
    suites = "coercivity,fenchel_young,fstar_monotone,w1_triangle,nonlocal_monotone"
    assert main(["check", "--suites", suites, "--out", str(tmp_path)]) == 0
    meta = read_json(tmp_path / "meta.json")
    assert meta["pass"] and len(meta["suites"]) == 5


def test_check_injected_c0_fails_with_witness(tmp_path, capsys):
    assert main(["check", "--suites", "coercivity", "--c0", "0.6", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "violated: coercivity" in err
    witness = read_json(tmp_path / "meta.json")["suites"][0]["witness"]
    assert witness["q"] == 2.0 and "m" in witness and "alpha" in witness


def test_check_unknown_suite(tmp_path):
    assert main(["check", "--suites", "coercivity,nonsense", "--out", str(tmp_path)]) == 2
    assert read_json(tmp_path / "error.json")["error"] == "UnknownSuite"


def test_check_seed_determinism(tmp_path):
    out = []
    d = tmp_path / "o"
    for _ in range(2):
        assert main(["check", "--suites", "fenchel_young", "--seed", "7", "--set", "output.timings=false", "--out", str(d)]) == 0
        out.append((d / "meta.json").read_bytes())
    assert out[0] == out[1]
