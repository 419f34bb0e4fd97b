import json
import os
from fractions import Fraction

import pandas as pd
import pytest

from ergodic_lab.api.report_writer import SCHEMA_VERSION, Report, emit_report, report_to_dict
from ergodic_lab.exception.custom_exception import ConfigError, InvariantViolation


def _report():
    report = Report("renewal", "renewal-sequence", "exact", {"experiment": "renewal", "params": {"n_max": 3}})
    frame = pd.DataFrame({"n": [1, 2, 3], "u": [Fraction(1, 2), Fraction(3, 8), Fraction(5, 16)]})
    report.add_table("returns", frame, {"n": "step", "u": "probability"})
    report.verdicts["index"] = -0.5
    report.passed = True
    return report


def test_every_column_needs_a_unit():
    report = Report("renewal", "renewal-sequence", "exact", {})
    with pytest.raises(InvariantViolation):
        report.add_table("returns", pd.DataFrame({"n": [1], "u": [0.5]}), {"n": "step"})


def test_report_dict_is_json_safe():
    data = report_to_dict(_report())
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["tables"]["returns"]["rows"][2] == [3, "5/16"]
    assert data["tables"]["returns"]["units"] == {"n": "step", "u": "probability"}
    json.dumps(data)


def test_emit_csv(tmp_path):
    paths = emit_report(_report(), str(tmp_path), "csv")
    assert [os.path.basename(p) for p in paths] == ["renewal__summary.csv", "renewal__returns.csv"]
    summary = pd.read_csv(paths[0])
    assert summary.loc[summary["key"] == "schema_version", "value"].item() == SCHEMA_VERSION
    returns = pd.read_csv(paths[1])
    assert list(returns["n"]) == [1, 2, 3]
    assert list(returns["u"]) == ["1/2", "3/8", "5/16"]


def test_emit_json(tmp_path):
    (path,) = emit_report(_report(), str(tmp_path), "json")
    with open(path) as file:
        data = json.load(file)
    assert data["schema_version"] == "1.0"
    assert data["passed"] is True
    assert data["verdicts"] == {"index": -0.5}


def test_emit_twice_gives_identical_files(tmp_path):
    first = emit_report(_report(), str(tmp_path / "a"), "json")[0]
    second = emit_report(_report(), str(tmp_path / "b"), "json")[0]
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_unknown_format(tmp_path):
    with pytest.raises(ConfigError):
        emit_report(_report(), str(tmp_path), "xml")
