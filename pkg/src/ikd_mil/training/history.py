"""
Per-epoch training history.

:hierarchy: [Training | History]
:relates-to:
 - implements: "class: 'HistoryRow', 'TrainingHistory'; function: best_per_period"
 - uses: ["library: 'pandas'"]
:complexity: 2
"""

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd

from ikd_mil.core.exceptions import DataLoadError


@dataclass
class HistoryRow:
    epoch: int
    cycle: int
    stage: str
    role: str
    loss_total: float
    loss_kd: Optional[float] = None
    loss_wce: Optional[float] = None
    loss_teacher: Optional[float] = None
    val_f1: Optional[float] = None
    val_iou: Optional[float] = None
    val_hd: Optional[float] = None
    teacher_checksum: str = ""
    student_checksum: str = ""


HISTORY_COLUMNS = [f.name for f in fields(HistoryRow)]


class TrainingHistory:
    """Append-only list of HistoryRow with CSV export."""

    def __init__(self, rows: Optional[Iterable[HistoryRow]] = None):
        self.rows: List[HistoryRow] = list(rows or [])

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: HistoryRow) -> None:
        self.rows.append(row)

    def for_stage(self, stage: str) -> List[HistoryRow]:
        return [r for r in self.rows if r.stage == stage]

    def to_records(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.to_records(), columns=HISTORY_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def from_records(cls, records: Iterable[Dict[str, Any]]) -> "TrainingHistory":
        return cls(HistoryRow(**record) for record in records)


def read_history(path: Union[str, Path]) -> pd.DataFrame:
    """
    Load a history CSV and check its columns.

    Raises:
        DataLoadError: unreadable file or missing columns
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataLoadError(f"Cannot read history {path}: {e}") from e
    missing = set(HISTORY_COLUMNS) - set(frame.columns)
    if missing:
        raise DataLoadError(f"History {path} lacks columns {sorted(missing)}")
    return frame


def best_per_period(frame: pd.DataFrame, period: int, stage: str = "distill", metric: str = "val_f1") -> pd.DataFrame:
    """
    Best ``metric`` within each block of ``period`` consecutive epochs.

    Returns a frame with columns ``epoch`` (last epoch of the block) and ``metric``.
    """
    rows = frame[(frame["stage"] == stage) & frame[metric].notna()]
    if rows.empty or period < 1:
        return pd.DataFrame(columns=["epoch", metric])
    block = (rows["epoch"] - 1) // period
    grouped = rows.groupby(block)
    out = pd.DataFrame({"epoch": grouped["epoch"].max().astype(int), metric: grouped[metric].max()})
    return out.reset_index(drop=True)


def load_history(path: Union[str, Path]) -> TrainingHistory:
    """Read a history CSV back into rows (missing values become None)."""
    frame = read_history(path)
    frame = frame[HISTORY_COLUMNS].astype(object).where(frame[HISTORY_COLUMNS].notna(), None)
    records = frame.to_dict("records")
    for record in records:
        record["epoch"] = int(record["epoch"])
        record["cycle"] = int(record["cycle"])
        record["teacher_checksum"] = record["teacher_checksum"] or ""
        record["student_checksum"] = record["student_checksum"] or ""
    return TrainingHistory.from_records(records)
