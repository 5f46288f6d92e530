from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from utils import utils

from .schemas import Axis, Interval, PredictionRecord


@dataclass(frozen=True, eq=False)
class RecordBatch:
    """
    Колоночное представление записей PredictionRecord одной оси.
    Все операции над большими выборками (калибровка, метрики) работают
    с массивами numpy, а не со списками моделей.
    """

    axis: Axis
    sample_ids: np.ndarray
    y_true: np.ndarray
    y_hat: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("y_true", "y_hat", "sigma"):
            column = np.asarray(getattr(self, name), dtype=float)
            column.setflags(write=False)
            object.__setattr__(self, name, column)
        ids = np.asarray(self.sample_ids, dtype=object)
        ids.setflags(write=False)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "axis", Axis(self.axis))
        utils.check_lengths(
            len(self.sample_ids), len(self.y_true), len(self.y_hat), len(self.sigma)
        )
        for name in ("y_true", "y_hat", "sigma"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise utils.NonFiniteValueException(f"{name} contains non-finite values")
        if np.any(self.sigma < 0):
            raise utils.DataException("sigma must be non-negative")

    def __len__(self) -> int:
        return len(self.y_true)

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "RecordBatch":
        if not records:
            raise utils.EmptyInputException("no records given")
        axes = {record.axis for record in records}
        if len(axes) > 1:
            raise utils.AxisMismatchException(
                f"records mix axes {sorted(axis.value for axis in axes)}"
            )
        return cls(
            axis=records[0].axis,
            sample_ids=[record.sample_id for record in records],
            y_true=[record.y_true for record in records],
            y_hat=[record.y_hat for record in records],
            sigma=[record.sigma for record in records],
        )

    def to_records(self) -> List[PredictionRecord]:
        return [
            PredictionRecord(
                sample_id=sample_id,
                axis=self.axis,
                y_true=y_true,
                y_hat=y_hat,
                sigma=sigma,
            )
            for sample_id, y_true, y_hat, sigma in zip(
                self.sample_ids, self.y_true, self.y_hat, self.sigma
            )
        ]

    def take(self, indices) -> "RecordBatch":
        indices = np.asarray(indices, dtype=int)
        return RecordBatch(
            axis=self.axis,
            sample_ids=self.sample_ids[indices],
            y_true=self.y_true[indices],
            y_hat=self.y_hat[indices],
            sigma=self.sigma[indices],
        )

    def scaled(self, factor: float) -> "RecordBatch":
        return RecordBatch(
            axis=self.axis,
            sample_ids=self.sample_ids,
            y_true=self.y_true * factor,
            y_hat=self.y_hat * factor,
            sigma=self.sigma * abs(factor),
        )


@dataclass(frozen=True, eq=False)
class IntervalBatch:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("lower", "upper"):
            column = np.asarray(getattr(self, name), dtype=float)
            column.setflags(write=False)
            object.__setattr__(self, name, column)
        utils.check_lengths(len(self.lower), len(self.upper))
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise utils.NonFiniteValueException("interval bounds must not be NaN")
        if np.any(self.lower > self.upper):
            raise utils.DataException("interval lower bound exceeds upper bound")

    def __len__(self) -> int:
        return len(self.lower)

    @classmethod
    def from_intervals(cls, intervals: Sequence[Interval]) -> "IntervalBatch":
        return cls(
            lower=[interval.lower for interval in intervals],
            upper=[interval.upper for interval in intervals],
        )

    def to_intervals(self) -> List[Interval]:
        return [
            Interval(lower=lower, upper=upper)
            for lower, upper in zip(self.lower, self.upper)
        ]

    def widths(self) -> np.ndarray:
        unbounded = np.isinf(self.lower) | np.isinf(self.upper)
        with np.errstate(invalid="ignore"):
            return np.where(unbounded, np.inf, self.upper - self.lower)

    def covers(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (self.lower <= y) & (y <= self.upper)

    def take(self, indices) -> "IntervalBatch":
        indices = np.asarray(indices, dtype=int)
        return IntervalBatch(lower=self.lower[indices], upper=self.upper[indices])


RecordsLike = Union[RecordBatch, Sequence[PredictionRecord]]
IntervalsLike = Union[IntervalBatch, Sequence[Interval]]


def as_record_batch(records: RecordsLike) -> RecordBatch:
    if isinstance(records, RecordBatch):
        return records
    return RecordBatch.from_records(list(records))


def as_interval_batch(intervals: IntervalsLike) -> IntervalBatch:
    if isinstance(intervals, IntervalBatch):
        return intervals
    return IntervalBatch.from_intervals(list(intervals))


def group_by_axis(records: Iterable[PredictionRecord]) -> Dict[Axis, RecordBatch]:
    """
    Группирует записи по осям в каноническом порядке X, Y, Z, Roll, Pitch, Yaw.
    Порядок записей внутри оси сохраняется.
    """
    grouped: Dict[Axis, List[PredictionRecord]] = {}
    for record in records:
        grouped.setdefault(record.axis, []).append(record)
    return {
        axis: RecordBatch.from_records(grouped[axis]) for axis in Axis if axis in grouped
    }
