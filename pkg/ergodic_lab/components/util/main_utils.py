import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Callable, Iterable, List, TypeVar

import pandas as pd

from ergodic_lab.exception.custom_exception import ConfigError, CustomException
from ergodic_lab.logging.logger import logging

T = TypeVar("T")
R = TypeVar("R")


def save_csv_file(file: pd.DataFrame, filename: str, dir_name: str = "data") -> str:
    try:
        os.makedirs(dir_name, exist_ok=True)
        path = os.path.join(dir_name, filename)
        file.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        logging.info(f"💾 Saved {len(file)} rows to {path}")
        return path
    except Exception as e:
        raise CustomException(e, sys)


def save_json_file(data: dict, filename: str, dir_name: str = "data") -> str:
    try:
        os.makedirs(dir_name, exist_ok=True)
        path = os.path.join(dir_name, filename)
        with open(path, "w") as file:
            json.dump(data, file, indent=2, sort_keys=True)
            file.write("\n")
        logging.info(f"💾 Saved report to {path}")
        return path
    except Exception as e:
        raise CustomException(e, sys)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply fn over items on a bounded pool; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def parse_rational(value) -> Fraction:
    """'p/q', a decimal string or a number, read exactly."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a rational number, got {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"malformed rational {value!r}")
