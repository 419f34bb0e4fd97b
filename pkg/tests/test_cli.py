import json
import os

import pytest
from click.testing import CliRunner

from ergodic_lab.api.app import EXIT_OK, EXIT_USAGE, EXIT_VERDICT, cli
from ergodic_lab.api.utils import (
    EXPERIMENTS,
    config_echo,
    parse_config,
    resolve_model,
    run_experiment,
    serialize_config,
)
from ergodic_lab.components.constant.builtin_models import markov_models
from ergodic_lab.components.main_verifier import IN_SCOPE_TAGS
from ergodic_lab.exception.custom_exception import ConfigError


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data, indent=2))
    return str(path)


# ============================================
# CONFIG PARSING
# ============================================
def test_empty_config_gives_defaults():
    cfg = parse_config("", "renewal")
    assert cfg.model == "lazy-walk"
    assert cfg.backend == "exact"
    assert cfg.params["n_max"] == 200
    assert (cfg.output_dir, cfg.output_format, cfg.threads) == ("reports", "csv", 1)


def test_unknown_top_level_key_is_named():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "experiment": "renewal",\n  "kapa": 1\n}')
    assert "'kapa'" in info.value.message
    assert "(line 3)" in info.value.message


def test_unknown_param_gets_a_suggestion():
    with pytest.raises(ConfigError) as info:
        parse_config(json.dumps({"experiment": "recurrence", "params": {"n_mx": 100}}))
    assert "did you mean 'n_max'" in info.value.message


def test_invalid_json_reports_position():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "experiment": "renewal",\n}')
    assert "line 3" in info.value.message


@pytest.mark.parametrize("name", sorted(EXPERIMENTS))
def test_canonical_config_round_trip(name):
    cfg = parse_config("", name)
    again = parse_config(serialize_config(cfg), name)
    assert config_echo(again) == config_echo(cfg)
    assert serialize_config(again) == serialize_config(cfg)


@pytest.mark.parametrize("params", [
    {"n_grid": []},
    {"drift_bound": -1.0},
    {"nus": [0, "one"]},
])
def test_bad_params_are_rejected(params):
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"experiment": "psi-moments", "params": params}))


def test_window_must_be_ordered():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"experiment": "admissibility", "params": {"window": [60, 10]}}))


def test_rational_params_are_exact():
    cfg = parse_config(json.dumps({"experiment": "lll", "params": {"I": ["1/4", "1/2"], "t": "101/2"}}))
    assert [str(v) for v in cfg.params["I"]] == ["1/4", "1/2"]
    assert str(cfg.params["t"]) == "101/2"


def test_config_for_another_experiment():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"experiment": "bell"}), "lll")


def test_model_resolution(tmp_path):
    with pytest.raises(ConfigError) as info:
        resolve_model("lazy-wlak", "markov")
    assert "did you mean 'lazy-walk'" in info.value.message
    path = _write(tmp_path, "chain.json", markov_models["biased-chain"])
    assert resolve_model(path, "markov", "exact").states == ("a", "b")


def test_registry_covers_every_tag():
    assert {e.tag for e in EXPERIMENTS.values() if e.name != "report"} == set(IN_SCOPE_TAGS)


# ============================================
# DIRECT RUNS
# ============================================
@pytest.mark.parametrize("name, params", [
    ("farey", {"d": 3, "bound": 40}),
    ("aperiodicity", {}),
    ("transfer", {}),
    ("induced-return", {"n_max": 200}),
])
def test_small_experiments_pass(name, params):
    report = run_experiment(parse_config(json.dumps({"experiment": name, "params": params})))
    assert report.passed is True
    assert report.tag == EXPERIMENTS[name].tag


def test_cover_count_reports_kappa_two_share():
    params = {"t_grid": [6.0, 7.0], "band_bound": 1e6}
    report = run_experiment(parse_config(json.dumps({"experiment": "cover-count", "params": params})))
    share = report.verdicts["kappa2_share"]
    assert len(share) == 2
    assert all(0.0 <= v <= 1.0 for v in share)


# ============================================
# COMMAND LINE
# ============================================
def test_renewal_command_writes_json(tmp_path):
    config = _write(tmp_path, "renewal.json", {"experiment": "renewal", "params": {"n_max": 40}})
    out = tmp_path / "out"
    result = CliRunner().invoke(cli, ["renewal", "--config", config, "--out", str(out), "--format", "json"])
    assert result.exit_code == EXIT_OK, result.output
    with open(out / "renewal.json") as file:
        data = json.load(file)
    assert data["schema_version"] == "1.0"
    assert data["passed"] is True


def test_reports_do_not_depend_on_thread_count(tmp_path):
    config = _write(tmp_path, "psi.json", {
        "experiment": "psi-moments", "params": {"nus": [0, 1], "n_grid": [10, 20], "drift_bound": 1.0}})
    files = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        CliRunner().invoke(cli, ["psi-moments", "--config", config, "--out", str(out),
                                 "--format", "json", "--threads", str(threads)])
        with open(out / "psi-moments.json", "rb") as file:
            files.append(file.read())
    assert files[0] == files[1]


def test_unknown_key_is_a_usage_error(tmp_path):
    config = _write(tmp_path, "bad.json", '{"experiment": "renewal", "params": {"n_mx": 10}}')
    result = CliRunner().invoke(cli, ["renewal", "--config", config, "--out", str(tmp_path)])
    assert result.exit_code == EXIT_USAGE
    assert "n_mx" in result.output
    assert not os.path.exists(tmp_path / "renewal__summary.csv")


def test_failed_prediction_exits_one(tmp_path):
    config = _write(tmp_path, "rec.json", {
        "experiment": "recurrence", "params": {"n_max": 200, "expected": "dissipative"}})
    result = CliRunner().invoke(cli, ["recurrence", "--config", config, "--out", str(tmp_path)])
    assert result.exit_code == EXIT_VERDICT
    assert os.path.exists(tmp_path / "recurrence__summary.csv")


def test_zero_threads_is_a_usage_error(tmp_path):
    result = CliRunner().invoke(cli, ["farey", "--threads", "0", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_defaults_command():
    result = CliRunner().invoke(cli, ["defaults", "group-enum"])
    assert result.exit_code == 0
    data = json.loads(result.output)
    assert data["experiment"] == "group-enum"
    assert data["params"] == {"max_len": 8}
