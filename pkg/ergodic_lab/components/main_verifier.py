from ergodic_lab.exception.custom_exception import ConfigError, CustomException
from ergodic_lab.logging.logger import logging
from ergodic_lab.components.constant.conformance_cases import profiles
from ergodic_lab.components.util.main_utils import ordered_map
from typing import Callable, Iterable, Set, Tuple
import pandas as pd
import sys

IN_SCOPE_TAGS = frozenset({
    "renewal-sequence",
    "multiple-correlation",
    "multiple-recurrence",
    "ordering-domains",
    "psi-moments",
    "local-limit",
    "lower-local-limit",
    "tail-sum",
    "disk-geometry",
    "word-growth",
    "correlation-sandwich",
    "cover-counting",
    "admissibility",
    "rational-weak-mixing",
    "transfer-duality",
    "induced-return",
    "stable-density",
    "aperiodicity",
    "flow-return",
    "geodesic-multi-correlation",
    "nice-set",
})


def prepare_conformance_data(profile: str = "quick") -> pd.DataFrame:
    """
    One row per conformance case: experiment, tag, params
    """
    try:
        logging.info(f"📊 Preparing conformance cases for profile '{profile}'...")

        if profile not in profiles:
            raise ConfigError(f"unknown conformance profile '{profile}', expected one of {sorted(profiles)}")

        df = pd.DataFrame(profiles[profile], columns=["experiment", "tag", "params"])

        logging.info(f"✅ Prepared {len(df)} conformance cases")

        return df

    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)


def run_conformance(df: pd.DataFrame, run_case: Callable[[pd.Series], bool], threads: int = 1) -> pd.DataFrame:
    """
    Run every case; a case that raises counts as failed and keeps its message
    """
    try:
        logging.info(f"🎯 Starting conformance run on {threads} thread(s)...")

        def attempt(row) -> Tuple[bool, str]:
            try:
                return bool(run_case(row)), ""
            except CustomException as e:
                logging.warning(f"conformance case '{row['experiment']}' raised: {e.message}")
                return False, e.message

        outcomes = ordered_map(attempt, [row for _, row in df.iterrows()], threads)

        df = df.copy()
        df["passed"] = [ok for ok, _ in outcomes]
        df["error"] = [message for _, message in outcomes]

        logging.info(f"✅ Conformance run completed: {int(df['passed'].sum())}/{len(df)} cases passed")

        return df

    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)


def summarize_conformance(df: pd.DataFrame) -> pd.DataFrame:
    try:
        logging.info("📋 Generating conformance summary...")

        summary = df.groupby("tag", sort=True)["passed"].agg(["count", "sum"]).reset_index()
        summary.columns = ["tag", "cases", "passed"]
        summary["passed"] = summary["passed"].astype(int)

        return summary

    except Exception as e:
        raise CustomException(e, sys)


def audit_tags(tags: Iterable[str]) -> Tuple[Set[str], Set[str]]:
    """(in-scope tags nobody covers, covered tags that are not in scope)."""
    tags = set(tags)
    return set(IN_SCOPE_TAGS) - tags, tags - set(IN_SCOPE_TAGS)
