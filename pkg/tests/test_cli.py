import csv
import json
import subprocess
import sys

import pytest

from cachejt.cli import fmt, main, read_csv, write_csv
from cachejt.config import ConfigError, bundled_names, load_config


def run(args, tmp_path, name="out.csv"):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out


def test_bundled_configs_present():
    assert set(bundled_names()) >= {"defaults", "fig2", "fig3a", "fig3b", "fig4"}
    for name in bundled_names():
        load_config(name)


def test_defaults_match_baseline_network():
    cfg = load_config("defaults")
    params, catalog, k = cfg.cell_params({})
    assert (params.alpha, params.lambda_b, params.m_coop, params.tau) == (4.0, 0.01, 3, 1.0)
    assert (catalog.n_files, catalog.gamma_zipf, k) == (100, 0.8, 25)


def test_fig2_cells_order():
    cfg = load_config("fig2")
    cells = cfg.cells()
    assert len(cells) == 28
    assert cells[0] == {"m_coop": 1, "tau_db": -10} and cells[7] == {"m_coop": 2, "tau_db": -10}


def test_dotted_override_and_tau_db():
    cfg = load_config("defaults", [("network.tau_db", "10")])
    assert cfg.cell_params({})[0].tau == pytest.approx(10.0)


@pytest.mark.parametrize("key, value, field", [
    ("network.alpha", "2", "network"),
    ("network.nope", "1", "network.nope"),
    ("cache_k", "100", "cache_k"),
    ("engine", "\"magic\"", "engine"),
    ("sweep", "{\"axis\": \"beta\", \"values\": [1]}", "sweep.axis"),
    ("placement.source", "\"explicit\"", "placement.t"),
    ("sim.n_realizations", "0", "sim"),
])
def test_config_errors_name_the_field(key, value, field):
    with pytest.raises(ConfigError, match=f"^{field}"):
        load_config("defaults", [(key, value)])


def test_explicit_placement_validated():
    with pytest.raises(ConfigError, match="placement.t"):
        load_config("fig2", [("placement.t", "[0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]")])


def test_cli_config_error_exit_code(tmp_path, capsys):
    code, _ = run(["analytic", "--network.alpha", "1.5"], tmp_path)
    assert code == 2
    assert "network" in capsys.readouterr().err


def test_fmt():
    assert fmt(3) == "3"
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(1.0 / 3.0) == "0.333333333333"


def test_csv_roundtrip(tmp_path):
    rows = [[-10, 1, 0.123456789012345, 1e-9], [5, 2, 1.0 / 7.0, 0.5]]
    p = tmp_path / "x.csv"
    with open(p, "w", newline="") as fh:
        write_csv(["a", "b", "c", "d"], rows, fh)
    data = p.read_bytes()
    assert b"\r" not in data
    header, back = read_csv(p)
    for r, b in zip(rows, back):
        assert float(b["c"]) == float("%.12g" % r[2])
    again = tmp_path / "y.csv"
    with open(again, "w", newline="") as fh:
        write_csv(header, [[float(v) if "." in v or "e" in v else int(v) for v in b.values()] for b in back], fh)
    assert again.read_bytes() == data


def test_analytic_fig3a_shape(tmp_path):
    code, out = run(["analytic", "--config", "fig3a", "--sweep.values", "[1, 2]"], tmp_path)
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["m_coop", "strategy", "stp_analytic", "analytic_err"]
    assert [(r["m_coop"], r["strategy"]) for r in rows][:4] == [("1", "optimal"), ("1", "mpc"), ("1", "iidc"),
                                                                ("1", "udc")]


def test_fig2_columns(tmp_path):
    code, out = run(["sweep", "--config", "fig2", "--sim.n_realizations", "50", "--sim.window_side", "300",
                     "--series.values", "[1, 2]"], tmp_path)
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["tau_db", "m_coop", "stp_analytic", "stp_mc", "mc_ci"]
    assert len(rows) == 14


def test_optimize_fig4_columns(tmp_path):
    code, out = run(["optimize", "--config", "fig4", "--sweep.values", "[10]"], tmp_path)
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["tau_db", "n", "t_star"]
    assert len(rows) == 100
    assert sum(float(r["t_star"]) for r in rows) == pytest.approx(25.0, abs=1e-9)


def test_compare_reports_ordering(tmp_path, capsys):
    code, out = run(["compare", "--catalog.n_files", "20", "--cache_k", "5", "--sim.n_realizations", "200",
                     "--sim.window_side", "300"], tmp_path)
    assert code == 0
    err = capsys.readouterr().err
    assert err.count("optimal vs") == 3
    header, rows = read_csv(out)
    assert [r["strategy"] for r in rows] == ["optimal", "mpc", "iidc", "udc"]


def test_compare_uniform_catalog_optimal_equals_udc(tmp_path):
    code, out = run(["compare", "--catalog.n_files", "20", "--cache_k", "5", "--catalog.gamma_zipf", "0",
                     "--sim.n_realizations", "100", "--sim.window_side", "300"], tmp_path)
    assert code == 0
    _, rows = read_csv(out)
    vals = {r["strategy"]: float(r["stp_analytic"]) for r in rows}
    assert vals["optimal"] == pytest.approx(vals["udc"], abs=1e-6)


def test_trace_flag(tmp_path):
    trace = tmp_path / "t.jsonl"
    code, _ = run(["simulate", "--config", "fig2", "--sim.n_realizations", "3", "--sim.window_side", "300",
                   "--series.values", "[2]", "--sweep.values", "[0]", "--trace", str(trace)], tmp_path)
    assert code == 0
    recs = [json.loads(x) for x in trace.read_text().splitlines()]
    assert len(recs) == 3 * 8


def test_seed_changes_mc_and_is_reproducible(tmp_path):
    base = ["simulate", "--config", "fig2", "--sim.n_realizations", "100", "--sim.window_side", "300",
            "--series.values", "[2]"]
    _, a = run(base + ["--seed", "1"], tmp_path, "a.csv")
    _, b = run(base + ["--seed", "1"], tmp_path, "b.csv")
    _, c = run(base + ["--seed", "2"], tmp_path, "c.csv")
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.csv"
    proc = subprocess.run([sys.executable, "-m", "cachejt", "analytic", "--config", "fig2",
                           "--sweep.values", "[0]", "--series.values", "[1]", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["tau_db", "m_coop", "stp_analytic", "analytic_err"]
