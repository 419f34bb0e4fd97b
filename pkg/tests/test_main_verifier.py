import pandas as pd
import pytest

from ergodic_lab.components.constant.conformance_cases import profiles
from ergodic_lab.components.main_verifier import (
    IN_SCOPE_TAGS,
    audit_tags,
    prepare_conformance_data,
    run_conformance,
    summarize_conformance,
)
from ergodic_lab.exception.custom_exception import ConfigError, DomainError


@pytest.mark.parametrize("profile", sorted(profiles))
def test_profiles_cover_every_tag(profile):
    df = prepare_conformance_data(profile)
    assert list(df.columns) == ["experiment", "tag", "params"]
    assert audit_tags(df["tag"]) == (set(), set())


def test_unknown_profile():
    with pytest.raises(ConfigError):
        prepare_conformance_data("slow")


def test_audit_reports_missing_and_extra_tags():
    missing, extra = audit_tags(["renewal-sequence", "made-up"])
    assert "renewal-sequence" not in missing
    assert len(missing) == len(IN_SCOPE_TAGS) - 1
    assert extra == {"made-up"}


def test_failing_case_keeps_its_message():
    df = pd.DataFrame([
        {"experiment": "a", "tag": "t1", "params": {}},
        {"experiment": "b", "tag": "t1", "params": {}},
        {"experiment": "c", "tag": "t2", "params": {}},
    ])

    def run_case(row):
        if row["experiment"] == "b":
            raise DomainError("window too small")
        return row["experiment"] == "a"

    result = run_conformance(df, run_case, threads=2)
    assert list(result["passed"]) == [True, False, False]
    assert list(result["error"]) == ["", "window too small", ""]

    summary = summarize_conformance(result)
    assert summary.to_dict("records") == [
        {"tag": "t1", "cases": 2, "passed": 1},
        {"tag": "t2", "cases": 1, "passed": 0},
    ]
