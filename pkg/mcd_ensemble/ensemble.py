import logging
from typing import Sequence, Tuple

import numpy as np
from pydantic import BaseModel, confloat

from uq_core.schemas import EnsemblePrediction, PredictionRecord
from utils import utils

logger = logging.getLogger("mcd_ensemble")

MIN_PASSES = 2


class AggregateResult(BaseModel):
    y_hat: float
    sigma: confloat(ge=0.0)

    class Config:
        frozen = True


def _check_passes(values: np.ndarray, n_passes: int) -> None:
    if n_passes < MIN_PASSES:
        raise utils.EnsembleTooSmallException(
            f"ensemble needs at least {MIN_PASSES} passes, got {n_passes}"
        )
    if not np.all(np.isfinite(values)):
        raise utils.NonFiniteValueException("ensemble passes must be finite")


def aggregate_passes(matrix) -> Tuple[np.ndarray, np.ndarray]:
    """
    Среднее и стандартное отклонение по строкам матрицы (образцы x N прогонов).
    Отклонение в популяционной форме (деление на N).
    Если все прогоны строки совпадают, sigma строго 0, а y_hat равно общему значению.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise utils.DataException(f"expected a 2-D array of passes, got {matrix.ndim}-D")
    _check_passes(matrix, matrix.shape[1])
    y_hat = matrix.mean(axis=1)
    sigma = matrix.std(axis=1, ddof=0)
    constant = np.all(matrix == matrix[:, :1], axis=1)
    y_hat = np.where(constant, matrix[:, 0], y_hat)
    sigma = np.where(constant, 0.0, sigma)
    return y_hat, sigma


def aggregate(passes: Sequence[float]) -> AggregateResult:
    values = np.asarray(passes, dtype=float).ravel()
    y_hat, sigma = aggregate_passes(values.reshape(1, -1))
    return AggregateResult(y_hat=y_hat[0], sigma=sigma[0])


def aggregate_record(ensemble: EnsemblePrediction, y_true: float) -> PredictionRecord:
    result = aggregate(ensemble.passes)
    logger.debug(
        f"Aggregated {ensemble.sample_id}/{ensemble.axis}: "
        f"N={ensemble.n_passes} y_hat={result.y_hat} sigma={result.sigma}"
    )
    return PredictionRecord(
        sample_id=ensemble.sample_id,
        axis=ensemble.axis,
        y_true=y_true,
        y_hat=result.y_hat,
        sigma=result.sigma,
    )
