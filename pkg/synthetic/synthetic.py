import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, PositiveInt, confloat, conint

from mcd_ensemble import ensemble
from uq_core.batch import RecordBatch
from uq_core.schemas import Axis, EnsemblePrediction
from utils import utils

logger = logging.getLogger("synthetic")

GENERATOR_NAME = "PCG64"
AXES = list(Axis)


class NoiseFamily(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"


class NoiseModel(BaseModel):
    """
    Модель ошибки стохастического предсказателя.
        family - семейство распределения шума.
        dof - число степеней свободы (только для student_t), больше 2.
        hetero_scale - насколько сильно масштаб шума меняется от образца к образцу.
        base_scale - базовый масштаб шума в единицах оси.
    """

    family: NoiseFamily = NoiseFamily.GAUSSIAN
    dof: confloat(gt=2.0) = 3.0
    hetero_scale: confloat(ge=0.0) = 1.0
    base_scale: confloat(gt=0.0) = 1.0

    class Config:
        frozen = True

    def native(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == NoiseFamily.STUDENT_T:
            return rng.standard_t(self.dof, size=size)
        return rng.standard_normal(size=size)

    def unit_variance(self, rng: np.random.Generator, size) -> np.ndarray:
        draws = self.native(rng, size)
        if self.family == NoiseFamily.STUDENT_T:
            draws = draws / np.sqrt(self.dof / (self.dof - 2.0))
        return draws


class SimConfig(BaseModel):
    seed: conint(ge=0) = 0
    n_samples: PositiveInt = 1000
    n_passes: conint(ge=ensemble.MIN_PASSES) = 25
    noise: NoiseModel = NoiseModel()
    trans_range_cm: confloat(gt=0.0) = 10.0
    rot_range_deg: confloat(gt=0.0) = 1.0
    calib_fraction: confloat(gt=0.0, lt=1.0) = 0.5
    axis_scales: Dict[Axis, confloat(gt=0.0)] = {}

    class Config:
        frozen = True

    def range_for(self, axis: Axis) -> float:
        return self.trans_range_cm if axis.is_translation else self.rot_range_deg

    def scale_for(self, axis: Axis) -> float:
        return self.noise.base_scale * self.axis_scales.get(axis, 1.0)

    def split_sizes(self) -> Tuple[int, int]:
        n_calib = int(round(self.n_samples * self.calib_fraction))
        return n_calib, self.n_samples - n_calib


@dataclass(frozen=True, eq=False)
class Trial:
    """
    Результат одного прогона симулятора.
        truths - (n_samples, 6) истинные параметры в порядке осей Axis.
        passes - (n_samples, 6, N) выходы стохастических прогонов.
        calibration, test - записи по осям, непересекающиеся по sample_id.
    """

    config: SimConfig
    sample_ids: np.ndarray
    truths: np.ndarray
    passes: np.ndarray
    calibration: Dict[Axis, RecordBatch]
    test: Dict[Axis, RecordBatch]

    def ensembles(self) -> List[EnsemblePrediction]:
        return [
            EnsemblePrediction(
                sample_id=sample_id,
                axis=axis,
                passes=tuple(self.passes[i, j]),
            )
            for i, sample_id in enumerate(self.sample_ids)
            for j, axis in enumerate(AXES)
        ]

    def truth_lookup(self) -> Dict[Tuple[str, Axis], float]:
        return {
            (sample_id, axis): float(self.truths[i, j])
            for i, sample_id in enumerate(self.sample_ids)
            for j, axis in enumerate(AXES)
        }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_ids(n: int) -> List[str]:
    digits = max(5, len(str(n - 1)))
    return [f"s{i:0{digits}d}" for i in range(n)]


def gen_ground_truth(rng: np.random.Generator, config: SimConfig) -> Dict[Axis, float]:
    """
    Искусственная декалибровка: равномерно в [-10, 10] см для смещений
    и в [-1, 1] градус для поворотов (значения по умолчанию).
    """
    return {
        axis: float(rng.uniform(-config.range_for(axis), config.range_for(axis)))
        for axis in AXES
    }


def simulate_ensemble(
    rng: np.random.Generator,
    y_true: float,
    config: SimConfig,
    axis: Axis = Axis.X,
    sample_id: str = "s00000",
) -> EnsemblePrediction:
    """
    Центр c = y_true + s * w, где w из семейства шума в его собственном масштабе,
    прогоны c + s * v_i, где v_i из того же семейства, приведенного к единичной
    дисперсии. Масштаб s = base_scale * (1 + hetero_scale * u), u ~ U[0, 1],
    наружу не выдается.
    """
    noise = config.noise
    scale = config.scale_for(axis) * (1.0 + noise.hetero_scale * rng.uniform())
    center = y_true + scale * float(noise.native(rng, None))
    passes = center + scale * noise.unit_variance(rng, config.n_passes)
    return EnsemblePrediction(sample_id=sample_id, axis=axis, passes=tuple(passes))


def run_trial(config: SimConfig) -> Trial:
    n_calib, n_test = config.split_sizes()
    if n_calib < 1 or n_test < 1:
        raise utils.SplitException(
            f"{config.n_samples} samples with calib_fraction={config.calib_fraction} "
            f"give {n_calib} calibration and {n_test} test samples, need at least 1 each"
        )
    rng = make_rng(config.seed)
    n, n_axes, n_passes = config.n_samples, len(AXES), config.n_passes
    noise = config.noise

    ranges = np.array([config.range_for(axis) for axis in AXES])
    truths = rng.uniform(-ranges, ranges, size=(n, n_axes))

    base = np.array([config.scale_for(axis) for axis in AXES])
    scales = base * (1.0 + noise.hetero_scale * rng.uniform(size=(n, n_axes)))
    centers = truths + scales * noise.native(rng, (n, n_axes))
    passes = centers[:, :, None] + scales[:, :, None] * noise.unit_variance(
        rng, (n, n_axes, n_passes)
    )

    y_hat, sigma = ensemble.aggregate_passes(passes.reshape(n * n_axes, n_passes))
    y_hat = y_hat.reshape(n, n_axes)
    sigma = sigma.reshape(n, n_axes)

    order = rng.permutation(n)
    calib_idx = np.sort(order[:n_calib])
    test_idx = np.sort(order[n_calib:])
    ids = np.array(sample_ids(n), dtype=object)

    def split(indices) -> Dict[Axis, RecordBatch]:
        return {
            axis: RecordBatch(
                axis=axis,
                sample_ids=ids[indices],
                y_true=truths[indices, j],
                y_hat=y_hat[indices, j],
                sigma=sigma[indices, j],
            )
            for j, axis in enumerate(AXES)
        }

    logger.debug(
        f"Trial seed={config.seed}: {n} samples, N={n_passes}, "
        f"noise={noise.family.value}, split {n_calib}/{n_test}"
    )
    return Trial(
        config=config,
        sample_ids=ids,
        truths=truths,
        passes=passes,
        calibration=split(calib_idx),
        test=split(test_idx),
    )
