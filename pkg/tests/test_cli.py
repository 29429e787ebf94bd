import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from epivar.cli import main
from epivar.config import RunConfig, apply_override, load_config
from epivar.datagen import Dataset, write_csv
from epivar.exceptions import ConfigError, TrainingDivergedError, UnsupportedSourceError
from epivar.runner import RESULT_COLUMNS, read_rows, run_estimate, run_ground_truth, run_table

TINY_NET = {"hidden_widths": [16], "learning_rate": "auto", "max_epochs": 200}


def tiny(tmp_path, **extra):
    data = {
        "seed": 1,
        "dataset": {"synthetic": {"family": "sin-sum", "dim": 2, "n": 30}},
        "net": dict(TINY_NET),
        "estimators": {"IF": {}, "EV": {"m": 4}, "BA": {"k": 3}},
        "oracle": {"j": 3, "m_prime": 3},
        "output": {"out_dir": str(tmp_path / "out")},
    }
    data.update(extra)
    return data


def write_config(tmp_path, data, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


# -- configuration -------------------------------------------------------

@pytest.mark.parametrize("patch", [
    {"dataset": {}},
    {"dataset": {"synthetic": {"dim": 2, "n": 10}, "csv": {"path": "x.csv"}}},
    {"dataset": {"synthetic": {"dim": 0, "n": 10}}},
    {"estimators": {"XX": {}}},
    {"estimators": {"EV": {"m": 1}}},
    {"estimators": {"BA": {"k": 2, "ci_level": 1.5}}},
    {"net": {"learning_rate": -1}},
    {"net": {"hidden_widths": []}},
    {"oracle": {"j": 1}},
    {"seed": -3},
    {"workers": 0},
    {"kernel": {"h0_mode": "guess"}},
])
def test_config_validation(tmp_path, patch):
    data = tiny(tmp_path)
    data.update(patch)
    with pytest.raises(ConfigError):
        RunConfig(data)


def test_empty_grid_is_an_input_error(tmp_path):
    cfg = RunConfig(tiny(tmp_path, grid={"dim": [], "n": [30]}))
    with pytest.raises(ConfigError):
        run_table(cfg)


def test_defaults_fill_in():
    cfg = RunConfig({"dataset": {"synthetic": {"dim": 2, "n": 200}}})
    assert set(cfg.estimators) == {"IF", "EV", "BA"}
    assert cfg.estimators["EV"]["m"] == 50 and cfg.oracle["j"] == 100
    assert cfg.net_config(2).hidden_widths == (1024,)


def test_config_hash_ignores_key_order_and_output(tmp_path):
    data = tiny(tmp_path)
    reordered = {k: data[k] for k in reversed(list(data))}
    reordered["net"] = {k: TINY_NET[k] for k in reversed(list(TINY_NET))}
    assert RunConfig(data).config_hash() == RunConfig(reordered).config_hash()
    moved = tiny(tmp_path, output={"out_dir": "/elsewhere"}, workers=4)
    assert RunConfig(moved).config_hash() == RunConfig(data).config_hash()


@given(st.sampled_from([
    ("seed", 2), ("net.reg_lambda", 0.01), ("net.hidden_widths", [32]), ("estimators.EV.m", 5),
    ("oracle.j", 4), ("dataset.synthetic.n", 31), ("kernel.jitter", 1e-12), ("estimators.BA.ci_level", 0.9),
]))
def test_config_hash_tracks_semantic_fields(change):
    data = {
        "dataset": {"synthetic": {"family": "sin-sum", "dim": 2, "n": 30}},
        "net": dict(TINY_NET),
        "estimators": {"IF": {}, "EV": {"m": 4}, "BA": {"k": 3}},
        "oracle": {"j": 3, "m_prime": 3},
    }
    before = RunConfig(data).config_hash()
    key, value = change
    apply_override(data, f"{key}={json.dumps(value)}")
    assert RunConfig(data).config_hash() != before


def test_overrides_and_file_loading(tmp_path):
    p = write_config(tmp_path, tiny(tmp_path))
    data = load_config(p, ["oracle.j=7", "net.hidden_widths=[8, 8]"])
    assert data["oracle"]["j"] == 7 and data["net"]["hidden_widths"] == [8, 8]
    with pytest.raises(ConfigError):
        apply_override({}, "novalue")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("seed: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "run.json").write_text(json.dumps(tiny(tmp_path)))
    assert load_config(tmp_path / "run.json")["seed"] == 1


def test_workers_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("EPIVAR_WORKERS", "3")
    assert RunConfig({"dataset": {"synthetic": {"dim": 2, "n": 5}}}).workers == 3
    assert RunConfig({"dataset": {"synthetic": {"dim": 2, "n": 5}}, "workers": 2}).workers == 2


# -- runs ----------------------------------------------------------------

def test_ev_with_equal_predictions(tmp_path):
    cfg = RunConfig(tiny(tmp_path, estimators={"EV": {"m": 6}}))
    rows = run_estimate(cfg, trainer=lambda d, s, x0: 0.5)
    assert len(rows) == 1
    r = rows[0]
    assert (r.method, r.quantity, r.value, r.ci_lower, r.ci_upper) == ("EV", "tau2", 0.0, 0.0, 0.0)
    assert r.seed == 1 and r.config_hash == cfg.config_hash() and r.wall_seconds >= 0
    assert (tmp_path / "out" / "estimate.csv").exists() and (tmp_path / "out" / "ev_curve.csv").exists()


def test_estimate_rows_and_outputs(tmp_path):
    cfg = RunConfig(tiny(tmp_path))
    rows = run_estimate(cfg)
    assert [(r.method, r.quantity) for r in rows] == [("IF", "sigma2_over_n"), ("EV", "tau2"), ("BA", "ensemble_total")]
    assert all(r.value >= 0 for r in rows)
    parsed = read_rows(tmp_path / "out" / "estimate.csv")
    assert list(parsed[0]) == list(RESULT_COLUMNS)
    for rec, row in zip(parsed, rows):
        assert rec["value"] == row.value  # bit-exact float round trip
        assert rec["config_hash"] == cfg.config_hash() and rec["seed"] == 1
    js = json.loads((tmp_path / "out" / "estimate.json").read_text())
    assert js["config_hash"] == cfg.config_hash()
    assert all("wall_seconds" in r and r["config"] for r in js["rows"])
    assert js["learning_rate"] > 0 and js["x0"] == [0.1, 0.1]


def test_estimate_rerun_is_byte_identical(tmp_path):
    a = RunConfig(tiny(tmp_path, output={"out_dir": str(tmp_path / "a")}))
    b = RunConfig(tiny(tmp_path, output={"out_dir": str(tmp_path / "b")}))
    run_estimate(a)
    run_estimate(b)
    assert (tmp_path / "a" / "estimate.csv").read_bytes() == (tmp_path / "b" / "estimate.csv").read_bytes()


def test_estimator_errors_carry_method_and_config(tmp_path):
    cfg = RunConfig(tiny(tmp_path, estimators={"EV": {"m": 3}}))

    def boom(data, seed, x0):
        raise TrainingDivergedError(4, float("inf"))

    from epivar.exceptions import RunError

    with pytest.raises(RunError) as info:
        run_estimate(cfg, trainer=boom)
    assert info.value.method == "EV" and "config:" in str(info.value) and '"seed":1' in str(info.value)


def test_ground_truth_constant_stub(tmp_path):
    rows = run_ground_truth(RunConfig(tiny(tmp_path)), trainer=lambda d, s, x0: 1.0)
    assert [r.quantity for r in rows] == ["tau2", "sigma2_over_n", "var_single", "var_ensemble"]
    assert all(r.value == 0 and r.method == "GT" for r in rows)


def test_ground_truth_minimal_real_run(tmp_path):
    cfg = RunConfig(tiny(tmp_path, oracle={"j": 2, "m_prime": 3}))
    v = {r.quantity: r.value for r in run_ground_truth(cfg)}
    assert v["tau2"] + v["sigma2_over_n"] == pytest.approx(v["var_single"], rel=1e-12)
    assert v["sigma2_over_n"] + v["tau2"] / 3 == pytest.approx(v["var_ensemble"], rel=1e-12)


def csv_dataset(tmp_path, n=40):
    g = np.random.default_rng(0)
    X = g.normal(size=(n, 3))
    path = write_csv(Dataset(X, X @ [1.0, -0.5, 0.2] + 0.1 * g.normal(size=n)), tmp_path / "real.csv", "target")
    return {"csv": {"path": str(path), "label_column": "target"}}


def test_ground_truth_rejects_csv(tmp_path):
    cfg = RunConfig(tiny(tmp_path, dataset=csv_dataset(tmp_path)))
    with pytest.raises(UnsupportedSourceError):
        run_ground_truth(cfg)


def test_real_data_pipeline(tmp_path):
    cfg = RunConfig(tiny(tmp_path, dataset=csv_dataset(tmp_path)))
    rows = run_estimate(cfg)
    assert [r.method for r in rows] == ["IF", "EV", "BA"]
    assert all(r.dim == 3 and r.n == 40 for r in rows)


def test_single_cell_table_equals_direct_runs(tmp_path):
    cfg = RunConfig(tiny(tmp_path, grid={"dim": [2], "n": [30]}))
    table, summary = run_table(cfg)
    est = {r.method: r.value for r in run_estimate(RunConfig(tiny(tmp_path)), write=False)}
    gt = {r.quantity: r.value for r in run_ground_truth(RunConfig(tiny(tmp_path)), write=False)}
    by_method = {r["method"]: r for r in table}
    assert by_method["EV"]["estimate"] == est["EV"] and by_method["EV"]["gt"] == gt["tau2"]
    assert by_method["IF"]["estimate"] == est["IF"] and by_method["IF"]["gt"] == gt["sigma2_over_n"]
    assert by_method["BA"]["estimate"] == est["BA"] and by_method["BA"]["gt"] == gt["var_ensemble"]
    assert by_method["BA"]["diff"] == est["BA"] - gt["var_ensemble"]
    assert summary["failed"] == 0
    out = tmp_path / "out"
    for name in ("table.csv", "table_rows.csv", "table_summary.json", "table1.txt"):
        assert (out / name).exists()
    assert "tau2 GT" in (out / "table1.txt").read_text()


def test_table_requires_matching_batch_count(tmp_path):
    with pytest.raises(ConfigError):
        run_table(RunConfig(tiny(tmp_path, grid={"dim": [2], "n": [30]}, oracle={"j": 2, "m_prime": 4})))


def test_table_scaling_summary_and_workers(tmp_path):
    grid = {"dim": [2], "n": [20, 40, 80]}
    t1, s1 = run_table(RunConfig(tiny(tmp_path, grid=grid, output={"out_dir": str(tmp_path / "w1")})), workers=1)
    t2, s2 = run_table(RunConfig(tiny(tmp_path, grid=grid, output={"out_dir": str(tmp_path / "w2")})), workers=2)
    assert (tmp_path / "w1" / "table.csv").read_bytes() == (tmp_path / "w2" / "table.csv").read_bytes()
    sc = s1["scaling"]["2"]
    assert sc["n"] == [20, 40, 80] and sc["if_log_log_slope"] < 0
    assert [r["n"] for r in t1 if r["method"] == "IF"] == [20, 40, 80]


def test_partial_grid_failure(tmp_path):
    cfg = RunConfig(tiny(tmp_path, grid={"dim": [2], "n": [5, 30]}))
    table, summary = run_table(cfg)
    assert summary["failed"] == 1
    assert [c["status"] for c in summary["cells"]] == ["error", "ok"]
    assert table[0]["status"] == "error" and "BA" in table[0]["error"]


# -- command line --------------------------------------------------------

def test_cli_selfcheck(capsys):
    assert main(["selfcheck"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_estimate_and_formats(tmp_path, capsys):
    p = write_config(tmp_path, tiny(tmp_path))
    assert main(["estimate", str(p), "--seed", "4", "--out-dir", str(tmp_path / "o"), "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["method"] for r in rows] == ["IF", "EV", "BA"] and rows[0]["seed"] == 4 and rows[0]["wall_seconds"] >= 0
    assert (tmp_path / "o" / "estimate.csv").exists()
    assert main(["estimate", str(p), "--set", "estimators={IF: {}}", "--out-dir", str(tmp_path / "o2")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("method,quantity") and len(out) == 2


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["estimate", str(tmp_path / "nope.yaml")]) == 1
    bad = write_config(tmp_path, {"dataset": {"synthetic": {"dim": 2}}}, "bad.yaml")
    assert main(["estimate", str(bad)]) == 1
    diverge = tiny(tmp_path, net={"hidden_widths": [16], "learning_rate": 1e6, "max_epochs": 50},
                   estimators={"EV": {"m": 2}})
    assert main(["estimate", str(write_config(tmp_path, diverge, "div.yaml"))]) == 2
    err = capsys.readouterr().err
    assert "EV failed" in err and "diverged" in err
    csv_cfg = write_config(tmp_path, tiny(tmp_path, dataset=csv_dataset(tmp_path)), "csv.yaml")
    assert main(["ground-truth", str(csv_cfg)]) == 1
    partial = write_config(tmp_path, tiny(tmp_path, grid={"dim": [2], "n": [5, 30]}), "grid.yaml")
    assert main(["table", str(partial)]) == 3
    ok = write_config(tmp_path, tiny(tmp_path, grid={"dim": [2], "n": [30]}), "ok.yaml")
    assert main(["table", str(ok)]) == 0


def test_cli_ground_truth(tmp_path, capsys):
    p = write_config(tmp_path, tiny(tmp_path))
    assert main(["ground-truth", str(p), "--set", "oracle.j=2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 5
    assert len(read_rows(tmp_path / "out" / "ground_truth.csv")) == 4


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "epivar.cli", "selfcheck"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.count("PASS") == 7
