import json
import math
import os

import numpy as np
import pytest

from common.data_models import ResultRow, RunHeader
from orchestrator.__main__ import main
from orchestrator.command_handlers import RunContext
from orchestrator.csv_report import format_value, read_report, render_report
from orchestrator.orchestrator import Orchestrator

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config")

SURVIVAL_CONFIG = {
    "schema_version": "1",
    "law": {"type": "binary_bernoulli", "p": 0.3},
    "seed": 5,
    "commands": {"survival": {"slopes": [0.2, 0.1], "n_grid": [4, 6], "replicates": 2000, "oracle": True}},
}


def _write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


def _run(tmp_path, command, config_path, *extra, out_name="out.csv"):
    out = tmp_path / out_name
    code = main([command, "--config", config_path, "--out", str(out), *extra])
    text = out.read_text(encoding="utf-8") if out.exists() else ""
    return code, text


def test_analyze_p0_reports_gamma_one_half(tmp_path):
    code, text = _run(tmp_path, "analyze", os.path.join(CONFIG_DIR, "analyze_p0.json"))
    assert code == 0
    header = json.loads(text.splitlines()[0][2:])
    assert header["command"] == "analyze"
    values = {row["quantity"]: row["value"] for row in read_report(text)}
    assert float(values["gamma"]) == pytest.approx(0.5, abs=1e-9)
    assert float(values["aldous_rate"]) == pytest.approx(1.1115, abs=1e-3)
    assert values["law_type"] == "binary_bernoulli"


def test_percolating_law_exits_3(tmp_path):
    code, text = _run(tmp_path, "analyze", os.path.join(CONFIG_DIR, "analyze_percolating.json"))
    assert code == 3
    assert text == ""


def test_missing_config_exits_2(tmp_path):
    code, _ = _run(tmp_path, "analyze", str(tmp_path / "absent.json"))
    assert code == 2


def test_stochastic_command_without_seed_exits_2(tmp_path):
    config = {**SURVIVAL_CONFIG}
    del config["seed"]
    code, _ = _run(tmp_path, "survival", _write_config(tmp_path, config))
    assert code == 2


def test_seed_flag_overrides_config(tmp_path):
    config = {**SURVIVAL_CONFIG}
    del config["seed"]
    code, text = _run(tmp_path, "survival", _write_config(tmp_path, config), "--seed", "5", "--threads", "2")
    assert code == 0
    assert json.loads(text.splitlines()[0][2:])["seed"] == 5


def test_survival_report_is_reproducible(tmp_path):
    path = _write_config(tmp_path, SURVIVAL_CONFIG)
    code_a, a = _run(tmp_path, "survival", path, "--threads", "2", out_name="a.csv")
    code_b, b = _run(tmp_path, "survival", path, "--threads", "2", out_name="b.csv")
    assert code_a == code_b == 0
    assert a == b
    rows = read_report(a)
    assert [r["method"] for r in rows] == ["mc"] * 4 + ["oracle"] * 4
    assert all(r["runtime_ms"] == "" for r in rows)
    assert "# monotonicity_violations,0" in a.splitlines()


def test_survival_rows_do_not_depend_on_threads(tmp_path):
    path = _write_config(tmp_path, SURVIVAL_CONFIG)
    _, one = _run(tmp_path, "survival", path, "--threads", "1", out_name="one.csv")
    _, three = _run(tmp_path, "survival", path, "--threads", "3", out_name="three.csv")
    assert one == three
    assert "threads" not in json.loads(one.splitlines()[0][2:])


def test_survival_mc_agrees_with_oracle(tmp_path):
    _, text = _run(tmp_path, "survival", _write_config(tmp_path, SURVIVAL_CONFIG))
    rows = read_report(text)
    mc = {(r["slope"], r["n"]): r for r in rows if r["method"] == "mc"}
    for r in rows:
        if r["method"] != "oracle":
            continue
        est = mc[(r["slope"], r["n"])]
        assert float(est["ci_low"]) <= float(est["estimate"]) <= float(est["ci_high"])
        se = math.sqrt(float(est["estimate"]) * (1 - float(est["estimate"])) / 2000)
        assert abs(float(est["estimate"]) - float(r["estimate"])) <= 5 * se + 1e-9


def test_timings_flag_fills_runtime(tmp_path):
    _, text = _run(tmp_path, "survival", _write_config(tmp_path, SURVIVAL_CONFIG), "--timings")
    assert all(float(r["runtime_ms"]) >= 0 for r in read_report(text))


def test_mogulskii_lattice_runs_without_law(tmp_path):
    config = {"commands": {"mogulskii": {"array": {"kind": "lazy"}, "n_list": [10, 100], "endpoint": True}}}
    code, text = _run(tmp_path, "mogulskii", _write_config(tmp_path, config))
    assert code == 0
    columns = text.splitlines()[1].split(",")
    assert columns[-3:] == ["prob_endpoint", "scaled_log_prob_endpoint", "runtime_ms"]
    assert [r["method"] for r in read_report(text)] == ["dp", "dp"]
    assert any(line.startswith("# gap_shrinking,") for line in text.splitlines())


def test_command_without_law_exits_2(tmp_path):
    config = {"commands": {"analyze": {}}}
    code, _ = _run(tmp_path, "analyze", _write_config(tmp_path, config))
    assert code == 2


def test_runtime_budget_exceeded(tmp_path):
    config = {**SURVIVAL_CONFIG, "runtime_budget_sec": 1e-9}
    code, _ = _run(tmp_path, "survival", _write_config(tmp_path, config), "--threads", "1")
    assert code == 4


def test_orchestrator_sorts_rows_by_key():
    context = RunContext(config=SURVIVAL_CONFIG, command="survival", seed=5)
    rows = Orchestrator(context, threads=4).run()
    keys = [tuple(r.key) for r in rows]
    assert keys == sorted(keys)
    assert context.footer["monotonicity_violations"] == 0


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "true"
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(math.inf) == "inf"
    assert format_value(-math.inf) == "-inf"
    assert format_value(math.nan) == "nan"
    assert format_value(np.float64(0.5)) == "0.5"
    assert format_value(np.int64(7)) == "7"
    assert format_value("mc") == "mc"


def test_render_report_layout():
    header = RunHeader(command="analyze", config_hash="abc", seed=None)
    rows = [ResultRow(key=[0], values={"quantity": "gamma", "value": 0.5}, runtime_ms=1.5)]
    text = render_report(header, ["quantity", "value"], rows, {"note": True})
    lines = text.splitlines()
    assert lines[0].startswith("# {")
    assert lines[1:] == ["quantity,value", "gamma,0.5", "# note,true"]
    assert read_report(text) == [{"quantity": "gamma", "value": "0.5"}]


def test_pemantle_rows(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.3},
              "commands": {"pemantle": {"eps_U": [0.5, 0.2], "n_start": 16, "n_max": 1024}}}
    code, text = _run(tmp_path, "pemantle", _write_config(tmp_path, config))
    assert code == 0
    rows = read_report(text)
    assert [float(r["eps_U"]) for r in rows] == [0.5, 0.2]
    for r in rows:
        assert float(r["beta_target"]) == pytest.approx(-1.249, rel=1e-3)
        assert 0 < float(r["rho_oracle"]) < 1
        assert int(r["n_used"]) <= 1024


def test_pemantle_p0_footer_has_aldous_rate(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.066987298107780677},
              "commands": {"pemantle": {"eps_U": [0.5], "n_start": 16, "n_max": 256}}}
    _, text = _run(tmp_path, "pemantle", _write_config(tmp_path, config))
    footer = [line for line in text.splitlines() if line.startswith("# aldous_rate,")]
    assert len(footer) == 1
    assert float(footer[0].split(",")[1]) == pytest.approx(1.1115, abs=1e-3)


def test_pemantle_rejects_p_above_one_half(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.6}, "commands": {"pemantle": {"eps_U": [0.1]}}}
    code, _ = _run(tmp_path, "pemantle", _write_config(tmp_path, config))
    assert code == 2


def test_many_to_one_rows(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 7,
              "commands": {"many-to-one": {"n": 3, "replicates": 2000, "functionals": ["one", "corridor"]}}}
    code, text = _run(tmp_path, "many-to-one", _write_config(tmp_path, config))
    assert code == 0
    rows = read_report(text)
    assert [r["functional"] for r in rows] == ["one", "corridor"]
    assert rows[0]["rhs_mean"] == "1"
    assert float(rows[0]["exact"]) == pytest.approx(1.0, abs=1e-12)


def test_embed_with_fixed_L_and_M(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 11,
              "commands": {"embed": {"n": 6, "eps": 0.5, "alpha": 0.5, "L": 3, "M": 0.0, "replicates": 500}}}
    code, text = _run(tmp_path, "embed", _write_config(tmp_path, config))
    assert code == 0
    values = {r["quantity"]: r["value"] for r in read_report(text)}
    assert values["L"] == "3"
    assert values["kappa_hat"] == ""
    assert "rho_oracle_alpha_eps" in values
    assert sum(int(v) for k, v in values.items() if k.startswith("hist_")) == 500


def test_cap_sweep_rows(tmp_path):
    config = {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 3,
              "commands": {"cap-sweep": {"slope": 0.1, "n": 8, "caps": [50, None], "replicates": 500}}}
    code, text = _run(tmp_path, "cap-sweep", _write_config(tmp_path, config))
    assert code == 0
    rows = read_report(text)
    assert [r["escape_cap"] for r in rows] == ["50", "inf"]
    assert rows[1]["cap_hits"] == "0"


STOCHASTIC_CONFIGS = {
    "many-to-one": {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 13,
                    "commands": {"many-to-one": {"n": 3, "replicates": 3000,
                                                 "functionals": ["one", "corridor", "exp_linear"]}}},
    "embed": {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 17,
              "commands": {"embed": {"n": 12, "eps": 0.5, "alpha": 0.5, "replicates": 400,
                                     "j_max": 10, "mk_replicates": 300}}},
    "cap-sweep": {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 19,
                  "commands": {"cap-sweep": {"slope": 0.1, "n": 8, "caps": [20, 200, None], "replicates": 400}}},
    "mogulskii": {"seed": 23,
                  "commands": {"mogulskii": {"array": {"kind": "gaussian"}, "n_list": [8, 16],
                                             "mc_replicates": 1000000, "endpoint": True}}},
}


@pytest.mark.parametrize("command", sorted(STOCHASTIC_CONFIGS))
def test_stochastic_reports_do_not_depend_on_threads_or_reruns(tmp_path, command):
    path = _write_config(tmp_path, STOCHASTIC_CONFIGS[command])
    code_one, one = _run(tmp_path, command, path, "--threads", "1", out_name="one.csv")
    code_three, three = _run(tmp_path, command, path, "--threads", "3", out_name="three.csv")
    _, again = _run(tmp_path, command, path, "--threads", "3", out_name="again.csv")
    assert code_one == code_three == 0
    assert read_report(one)
    assert one == three == again


def test_mogulskii_monte_carlo_rows(tmp_path):
    _, text = _run(tmp_path, "mogulskii", _write_config(tmp_path, STOCHASTIC_CONFIGS["mogulskii"]))
    rows = read_report(text)
    assert [r["method"] for r in rows] == ["mc", "mc"]
    for r in rows:
        assert 0.0 < float(r["prob_endpoint"]) <= float(r["prob"]) < 1.0


def test_many_to_one_footer_reports_spine_moments(tmp_path):
    _, text = _run(tmp_path, "many-to-one", _write_config(tmp_path, STOCHASTIC_CONFIGS["many-to-one"]))
    footer = dict(line[2:].split(",", 1) for line in text.splitlines()[2:] if line.startswith("# "))
    assert float(footer["spine_delta3"]) == 0.5
    assert float(footer["spine_moment_minus_delta3"]) >= 1.0
    assert float(footer["spine_moment_plus_delta3"]) >= 1.0


def test_task_error_is_raised_from_worker(tmp_path):
    # L >= n is rejected inside the row handler, on a worker thread
    config = {"law": {"type": "binary_bernoulli", "p": 0.3}, "seed": 11,
              "commands": {"embed": {"n": 6, "eps": 0.5, "L": 6, "M": 0.0, "replicates": 100}}}
    code, text = _run(tmp_path, "embed", _write_config(tmp_path, config), "--threads", "2")
    assert code == 2
    assert text == ""
