"""
Сплит-конформное предсказание с нормированной на sigma мерой несоответствия.

Калибровка: s_k = |y_hat_k - y_true_k| / sigma_k на отдельной калибровочной выборке,
затем Q - порядковая статистика с номером ceil((m + 1)(1 - alpha)).
Интервал для нового предсказания: [y_hat - Q * sigma, y_hat + Q * sigma].
"""
import logging
import math
from functools import lru_cache
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, PositiveInt, confloat, validator
from scipy.optimize import bisect
from scipy.special import erfc

from uq_core.batch import IntervalBatch, RecordBatch, RecordsLike, as_record_batch
from uq_core.schemas import Axis, Interval, PredictionRecord
from utils import utils

logger = logging.getLogger("conformal")

SIGMA_FLOOR = 1e-9
INDEX_TOLERANCE = 1e-9
BISECT_TOLERANCE = 1e-10


class Calibrator(BaseModel):
    axis: Axis
    alpha: confloat(gt=0.0, lt=1.0)
    q: float
    m: PositiveInt

    class Config:
        frozen = True

    @validator("q")
    def q_non_negative(cls, q):
        if math.isnan(q) or q < 0:
            raise ValueError(f"quantile must be >= 0 or inf, got {q}")
        return q

    @property
    def is_unbounded(self) -> bool:
        return math.isinf(self.q)

    @property
    def target_coverage(self) -> float:
        return 1.0 - self.alpha

    def interval(self, y_hat: float, sigma: float) -> Interval:
        return predict_interval(self, y_hat, sigma)


def nonconformity_score(record: PredictionRecord) -> float:
    return abs(record.y_hat - record.y_true) / max(record.sigma, SIGMA_FLOOR)


def nonconformity_scores(records: RecordsLike) -> np.ndarray:
    batch = as_record_batch(records)
    return np.abs(batch.y_hat - batch.y_true) / np.maximum(batch.sigma, SIGMA_FLOOR)


def quantile_index(m: int, alpha: float) -> int:
    """
    Номер порядковой статистики (с 1): ceil((m + 1)(1 - alpha)).
    Если произведение отличается от целого меньше чем на 1e-9, берется это целое,
    чтобы 0.9 * 10 = 9.000000000000002 не превращалось в 10.
    """
    utils.check_alpha(alpha)
    raw = (m + 1) * (1.0 - alpha)
    nearest = round(raw)
    if abs(raw - nearest) < INDEX_TOLERANCE:
        return max(int(nearest), 1)
    return max(int(math.ceil(raw)), 1)


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    utils.check_alpha(alpha)
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise utils.EmptyInputException("cannot take a conformal quantile of no scores")
    if not np.all(np.isfinite(scores)):
        raise utils.NonFiniteValueException("nonconformity scores must be finite")
    if np.any(scores < 0):
        raise utils.DataException("nonconformity scores must be non-negative")
    m = scores.size
    k = quantile_index(m, alpha)
    if k > m:
        return math.inf
    return float(np.partition(scores, k - 1)[k - 1])


def fit(records: RecordsLike, alpha: float) -> Calibrator:
    batch = as_record_batch(records)
    if len(batch) == 0:
        raise utils.EmptyInputException(f"no calibration records for axis {batch.axis}")
    q = conformal_quantile(nonconformity_scores(batch), alpha)
    calibrator = Calibrator(axis=batch.axis, alpha=alpha, q=q, m=len(batch))
    if calibrator.is_unbounded:
        logger.warning(
            f"Axis {batch.axis}: quantile index exceeds m={calibrator.m} "
            f"for alpha={alpha}, interval is unbounded; "
            f"increase calibration set to at least "
            f"{minimum_calibration_size(alpha)} samples"
        )
    else:
        logger.debug(f"Axis {batch.axis}: alpha={alpha} q={q} m={calibrator.m}")
    return calibrator


def fit_all(
    records_by_axis: Dict[Axis, RecordBatch], alphas: Sequence[float]
) -> List[Calibrator]:
    """
    По калибратору на каждую пару (ось, alpha). Одна и та же калибровочная
    выборка используется для всех alpha.
    """
    return [
        fit(batch, alpha)
        for axis, batch in records_by_axis.items()
        for alpha in alphas
    ]


def minimum_calibration_size(alpha: float) -> int:
    """
    Наименьшее m, при котором квантиль конечен.
    """
    m = max(1, int((1.0 - alpha) / alpha) - 1)
    while quantile_index(m, alpha) > m:
        m += 1
    return m


def predict_interval(calibrator: Calibrator, y_hat: float, sigma: float) -> Interval:
    if sigma < 0:
        raise utils.DataException(f"sigma must be non-negative, got {sigma}")
    half_width = calibrator.q * max(sigma, SIGMA_FLOOR)
    return Interval(lower=y_hat - half_width, upper=y_hat + half_width)


def predict_intervals(calibrator: Calibrator, records: RecordsLike) -> IntervalBatch:
    batch = as_record_batch(records)
    if batch.axis != calibrator.axis:
        raise utils.AxisMismatchException(
            f"calibrator fitted for {calibrator.axis}, records are {batch.axis}"
        )
    half_width = calibrator.q * np.maximum(batch.sigma, SIGMA_FLOOR)
    return IntervalBatch(lower=batch.y_hat - half_width, upper=batch.y_hat + half_width)


def _standard_normal_sf(z: float) -> float:
    return 0.5 * erfc(z / math.sqrt(2.0))


@lru_cache(maxsize=256)
def normal_upper_quantile(tail: float) -> float:
    """
    z, для которого P(Z > z) = tail, бисекцией по erfc. Хвост считается напрямую,
    поэтому работает и для tail, при котором 1 - tail округляется до 1.
    """
    if not 0.0 < tail < 1.0:
        raise utils.ConfigException(f"probability must lie in (0, 1), got {tail}")
    return bisect(
        lambda z: _standard_normal_sf(z) - tail,
        -40.0,
        40.0,
        xtol=BISECT_TOLERANCE,
        maxiter=200,
    )


def normal_quantile(p: float) -> float:
    """
    Квантиль стандартного нормального распределения.
    """
    return -normal_upper_quantile(p)


def normal_baseline_interval(y_hat: float, sigma: float, alpha: float) -> Interval:
    utils.check_alpha(alpha)
    if sigma < 0:
        raise utils.DataException(f"sigma must be non-negative, got {sigma}")
    half_width = normal_upper_quantile(alpha / 2.0) * sigma
    return Interval(lower=y_hat - half_width, upper=y_hat + half_width)


def normal_baseline_intervals(records: RecordsLike, alpha: float) -> IntervalBatch:
    utils.check_alpha(alpha)
    batch = as_record_batch(records)
    half_width = normal_upper_quantile(alpha / 2.0) * batch.sigma
    return IntervalBatch(lower=batch.y_hat - half_width, upper=batch.y_hat + half_width)
