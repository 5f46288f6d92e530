import math
from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, confloat, validator


class Axis(str, Enum):
    """
    Оси внешней калибровки: три смещения (см) и три поворота (градусы).
    """

    X = "X"
    Y = "Y"
    Z = "Z"
    ROLL = "Roll"
    PITCH = "Pitch"
    YAW = "Yaw"

    @property
    def is_translation(self) -> bool:
        return self in (Axis.X, Axis.Y, Axis.Z)

    @property
    def unit(self) -> str:
        return "cm" if self.is_translation else "deg"

    @classmethod
    def translations(cls) -> List["Axis"]:
        return [cls.X, cls.Y, cls.Z]

    @classmethod
    def rotations(cls) -> List["Axis"]:
        return [cls.ROLL, cls.PITCH, cls.YAW]

    @classmethod
    def parse(cls, label: str) -> "Axis":
        try:
            return cls(label)
        except ValueError:
            raise ValueError(
                f"unknown axis label {label!r}, "
                f"expected one of {[axis.value for axis in cls]}"
            ) from None

    def __str__(self) -> str:
        return self.value


def _finite(value: float) -> float:
    if not math.isfinite(value):
        raise ValueError(f"value must be finite, got {value}")
    return value


class EnsemblePrediction(BaseModel):
    """
    N сырых выходов стохастических прогонов для одного образца и одной оси.
    """

    sample_id: str
    axis: Axis
    passes: Tuple[float, ...]

    class Config:
        frozen = True

    @validator("passes")
    def passes_finite(cls, passes):
        if not passes:
            raise ValueError("passes must not be empty")
        for value in passes:
            _finite(value)
        return passes

    @property
    def n_passes(self) -> int:
        return len(self.passes)


class PredictionRecord(BaseModel):
    sample_id: str
    axis: Axis
    y_true: float
    y_hat: float
    sigma: confloat(ge=0.0)

    class Config:
        frozen = True

    _check_finite = validator("y_true", "y_hat", "sigma", allow_reuse=True)(_finite)


class Interval(BaseModel):
    """
    Замкнутый интервал [lower, upper]. Бесконечные границы допустимы
    (переполнение квантиля), NaN - нет.
    """

    lower: float
    upper: float

    class Config:
        frozen = True

    @validator("upper")
    def ordered(cls, upper, values):
        lower = values.get("lower")
        if math.isnan(upper) or (lower is not None and math.isnan(lower)):
            raise ValueError("interval bounds must not be NaN")
        if lower is not None and lower > upper:
            raise ValueError(f"lower {lower} exceeds upper {upper}")
        return upper


class CoverageConfig(BaseModel):
    alpha: confloat(gt=0.0, lt=1.0)

    class Config:
        frozen = True

    @property
    def target_coverage(self) -> float:
        return 1.0 - self.alpha


def width(interval: Interval) -> float:
    if math.isinf(interval.lower) or math.isinf(interval.upper):
        return math.inf
    return interval.upper - interval.lower


def covers(interval: Interval, y: float) -> bool:
    return interval.lower <= y <= interval.upper
