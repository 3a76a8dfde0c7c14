"""Helper utilities for Distill Tools"""

import csv
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np

from ..core.fock import VACUUM_VARIANCE


def to_db(variance: float, reference: float = VACUUM_VARIANCE) -> float:
    """Variance relative to shot noise in dB"""
    if variance <= 0:
        raise ValueError(f"Variance must be positive, got {variance}")
    return float(10.0 * np.log10(variance / reference))


def from_db(value_db: float, reference: float = VACUUM_VARIANCE) -> float:
    return float(reference * 10.0 ** (value_db / 10.0))


def format_db(value_db: float, digits: int = 2) -> str:
    """Format a dB figure with an explicit sign"""
    if value_db is None or not np.isfinite(value_db):
        return "N/A"
    return f"{value_db:+.{digits}f} dB"


def format_value(value: Any) -> str:
    """CSV cell text: '.12g' for floats, empty for None"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return ""
        return format(float(value), '.12g')
    return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a header plus rows with '\\n' line endings"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path: Union[str, Path]) -> List[dict]:
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))
