import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ergodic_lab.components.util.main_utils import save_csv_file, save_json_file
from ergodic_lab.exception.custom_exception import ConfigError, CustomException, InvariantViolation
from ergodic_lab.logging.logger import logging

SCHEMA_VERSION = "1.0"
FORMATS = ("csv", "json")


@dataclass
class Report:
    """
    Result of one experiment run.

    tables hold long-format frames; units[table][column] names the unit or
    normalization of every column. wall_time is logged, never written.
    """
    experiment: str
    tag: str
    backend: str
    config: dict
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    units: Dict[str, Dict[str, str]] = field(default_factory=dict)
    verdicts: Dict[str, object] = field(default_factory=dict)
    passed: Optional[bool] = None
    wall_time: float = 0.0

    def add_table(self, name: str, frame: pd.DataFrame, units: Dict[str, str]) -> None:
        missing = [c for c in frame.columns if c not in units]
        if missing:
            raise InvariantViolation(f"table '{name}' has columns without a declared unit: {missing}")
        self.tables[name] = frame.reset_index(drop=True)
        self.units[name] = {c: units[c] for c in frame.columns}


def _plain(value):
    """JSON-safe scalar with a fixed textual form."""
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if value is None:
        return None
    return str(value)


def report_to_dict(report: Report) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": report.experiment,
        "tag": report.tag,
        "backend": report.backend,
        "config": _plain(report.config),
        "passed": report.passed,
        "verdicts": _plain(report.verdicts),
        "tables": {
            name: {
                "columns": list(frame.columns),
                "units": report.units[name],
                "rows": [[_plain(v) for v in row] for row in frame.itertuples(index=False, name=None)],
            }
            for name, frame in report.tables.items()
        },
    }


def _summary_frame(report: Report) -> pd.DataFrame:
    rows = [
        ("meta", "schema_version", SCHEMA_VERSION),
        ("meta", "experiment", report.experiment),
        ("meta", "tag", report.tag),
        ("meta", "backend", report.backend),
        ("meta", "passed", "" if report.passed is None else str(report.passed)),
    ]
    for key, value in report.verdicts.items():
        rows.append(("verdict", key, str(_plain(value))))
    for name, units in report.units.items():
        for column, unit in units.items():
            rows.append(("unit", f"{name}.{column}", unit))
    return pd.DataFrame(rows, columns=["section", "key", "value"])


def emit_report(report: Report, out_dir: str, fmt: str = "csv") -> List[str]:
    """Write the report under out_dir; returns the written paths in a fixed order."""
    try:
        if fmt not in FORMATS:
            raise ConfigError(f"unknown report format '{fmt}', expected one of {FORMATS}")
        stem = report.experiment
        paths = []
        if fmt == "json":
            paths.append(save_json_file(report_to_dict(report), f"{stem}.json", out_dir))
        else:
            paths.append(save_csv_file(_summary_frame(report), f"{stem}__summary.csv", out_dir))
            for name, frame in report.tables.items():
                paths.append(save_csv_file(frame, f"{stem}__{name}.csv", out_dir))
        logging.info(f"✅ Report '{stem}' written as {fmt} ({len(paths)} files, wall time {report.wall_time:.2f}s)")
        return paths
    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)
