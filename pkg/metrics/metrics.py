import logging
import math
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, PositiveInt, confloat, validator

from conformal import conformal
from uq_core.batch import (
    IntervalsLike,
    RecordBatch,
    RecordsLike,
    as_interval_batch,
    as_record_batch,
)
from uq_core.schemas import Axis
from utils import utils

logger = logging.getLogger("metrics")

DEFAULT_WINDOW = 51


class MetricsReport(BaseModel):
    axis: Axis
    alpha: confloat(gt=0.0, lt=1.0)
    picp: confloat(ge=0.0, le=1.0)
    mpiw: float
    interval_score: float
    n: PositiveInt

    class Config:
        frozen = True

    @validator("mpiw", "interval_score")
    def non_negative(cls, value):
        if math.isnan(value) or value < 0:
            raise ValueError(f"must be >= 0 or inf, got {value}")
        return value

    @property
    def target_coverage(self) -> float:
        return 1.0 - self.alpha


class CurvePoint(BaseModel):
    expected: confloat(ge=0.0, le=1.0)
    observed: confloat(ge=0.0, le=1.0)

    class Config:
        frozen = True


class PlotRow(BaseModel):
    index: int
    y_true: float
    deviation: float
    lower_dev: float
    upper_dev: float

    class Config:
        frozen = True


class AccuracySummary(BaseModel):
    group: str
    unit: str
    mae: confloat(ge=0.0)
    n: PositiveInt

    class Config:
        frozen = True


def _paired(truths, intervals: IntervalsLike):
    truths = np.asarray(truths, dtype=float).ravel()
    batch = as_interval_batch(intervals)
    utils.check_lengths(len(truths), len(batch))
    if len(truths) == 0:
        raise utils.EmptyInputException("no samples to evaluate")
    if not np.all(np.isfinite(truths)):
        raise utils.NonFiniteValueException("ground truth values must be finite")
    return truths, batch


def picp(truths: Sequence[float], intervals: IntervalsLike) -> float:
    truths, batch = _paired(truths, intervals)
    return float(np.count_nonzero(batch.covers(truths)) / len(truths))


def mpiw(intervals: IntervalsLike) -> float:
    batch = as_interval_batch(intervals)
    if len(batch) == 0:
        raise utils.EmptyInputException("no intervals to average")
    widths = batch.widths()
    if np.any(np.isinf(widths)):
        return math.inf
    return float(widths.mean())


def interval_score(
    truths: Sequence[float], intervals: IntervalsLike, alpha: float
) -> float:
    """
    Интервальная оценка: ширина плюс штраф 2/alpha за выход истинного значения
    за границы. Меньше - лучше.
    """
    utils.check_alpha(alpha)
    truths, batch = _paired(truths, intervals)
    widths = batch.widths()
    if np.any(np.isinf(widths)):
        return math.inf
    below = np.where(truths < batch.lower, batch.lower - truths, 0.0)
    above = np.where(truths > batch.upper, truths - batch.upper, 0.0)
    return float(np.mean(widths + (2.0 / alpha) * below + (2.0 / alpha) * above))


def evaluate(records: RecordsLike, intervals: IntervalsLike, alpha: float) -> MetricsReport:
    batch = as_record_batch(records)
    report = MetricsReport(
        axis=batch.axis,
        alpha=alpha,
        picp=picp(batch.y_true, intervals),
        mpiw=mpiw(intervals),
        interval_score=interval_score(batch.y_true, intervals, alpha),
        n=len(batch),
    )
    logger.debug(
        f"Axis {report.axis} alpha={alpha}: picp={report.picp} "
        f"mpiw={report.mpiw} is={report.interval_score}"
    )
    return report


def calibration_curve(
    records: RecordsLike, calib_records: RecordsLike, alphas: Sequence[float]
) -> List[CurvePoint]:
    """
    Наблюдаемое покрытие против ожидаемого: для каждого alpha калибратор
    строится на calib_records и проверяется на records.
    """
    if not alphas:
        return []
    test = as_record_batch(records)
    calibration = as_record_batch(calib_records)
    if test.axis != calibration.axis:
        raise utils.AxisMismatchException(
            f"test records are {test.axis}, calibration records are {calibration.axis}"
        )
    points = []
    for alpha in alphas:
        calibrator = conformal.fit(calibration, alpha)
        intervals = conformal.predict_intervals(calibrator, test)
        points.append(CurvePoint(expected=1.0 - alpha, observed=picp(test.y_true, intervals)))
    return points


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """
    Центрированное скользящее среднее; у краев окно усекается,
    так что длина результата всегда равна длине входа.
    Окно с +inf (или -inf) дает +inf (-inf), окно с обоими знаками - nan.
    """
    if window < 1 or window % 2 == 0:
        raise utils.ConfigException(f"window must be a positive odd integer, got {window}")
    series = pd.Series(np.asarray(values, dtype=float))
    if window == 1 or series.empty:
        return series.to_numpy(copy=True)

    def rolling(column: pd.Series):
        return column.rolling(window, center=True, min_periods=1)

    means = rolling(series.mask(np.isinf(series), 0.0)).mean()
    has_pos = rolling((series == np.inf).astype(float)).sum() > 0
    has_neg = rolling((series == -np.inf).astype(float)).sum() > 0
    means[has_pos] = np.inf
    means[has_neg] = -np.inf
    means[has_pos & has_neg] = np.nan
    return means.to_numpy()


def ordered_plot_data(
    records: RecordsLike, intervals: IntervalsLike, window: int = DEFAULT_WINDOW
) -> List[PlotRow]:
    batch = as_record_batch(records)
    bounds = as_interval_batch(intervals)
    utils.check_lengths(len(batch), len(bounds))
    order = np.argsort(batch.y_true, kind="stable")
    y_true = batch.y_true[order]
    with np.errstate(invalid="ignore"):
        deviation = moving_average(batch.y_hat[order] - y_true, window)
        lower_dev = moving_average(bounds.lower[order] - y_true, window)
        upper_dev = moving_average(bounds.upper[order] - y_true, window)
    return [
        PlotRow(
            index=int(index),
            y_true=truth,
            deviation=dev,
            lower_dev=low,
            upper_dev=up,
        )
        for index, truth, dev, low, up in zip(order, y_true, deviation, lower_dev, upper_dev)
    ]


def mean_absolute_error(records: RecordsLike) -> float:
    batch = as_record_batch(records)
    if len(batch) == 0:
        raise utils.EmptyInputException("no records")
    return float(np.mean(np.abs(batch.y_hat - batch.y_true)))


def accuracy_summary(batches: Dict[Axis, RecordBatch]) -> List[AccuracySummary]:
    """
    Средняя абсолютная ошибка по осям, затем отдельно по смещениям (см)
    и по поворотам (градусы). Группа выводится, только если есть все ее оси.
    """
    rows = [
        AccuracySummary(
            group=axis.value,
            unit=axis.unit,
            mae=mean_absolute_error(batch),
            n=len(batch),
        )
        for axis, batch in batches.items()
    ]
    for group, members in (
        ("translation", Axis.translations()),
        ("rotation", Axis.rotations()),
    ):
        if not all(axis in batches for axis in members):
            continue
        errors = np.concatenate(
            [np.abs(batches[axis].y_hat - batches[axis].y_true) for axis in members]
        )
        rows.append(
            AccuracySummary(
                group=group,
                unit=members[0].unit,
                mae=float(errors.mean()),
                n=len(errors),
            )
        )
    return rows
