# Shared Utility Functions
import csv
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


def utcnow() -> datetime:
    """
    Get current UTC datetime with timezone info.

    Returns:
        datetime: Current UTC time with timezone.
    """
    return datetime.now(timezone.utc)


def format_cell(value) -> str:
    """
    Render one CSV cell: None as empty, floats with repr round-trip precision.
    """
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """
    Write a header line and rows with "\\n" line endings, creating parent directories.

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(value) for value in row])
    return path


def held_out_path(train_path: PathLike) -> Path:
    # data/x.bods -> data/x.test.bods
    train_path = Path(train_path)
    return train_path.with_name(f"{train_path.stem}.test{train_path.suffix}")
