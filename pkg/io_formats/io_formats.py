"""
Файловые форматы: CSV с одной строкой метаданных в начале (префикс "#"),
JSON-копия только для отчета с метриками.
Вещественные числа пишутся с 6 значащими цифрами, бесконечности - как inf / -inf.
"""
import json
import logging
import math
from contextlib import contextmanager
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError, confloat

from conformal.conformal import Calibrator
from metrics.metrics import AccuracySummary, CurvePoint, MetricsReport, PlotRow
from uq_core import TOOL_NAME, __version__
from uq_core.batch import IntervalBatch, RecordBatch
from uq_core.schemas import Axis, EnsemblePrediction, Interval, PredictionRecord
from utils import utils

logger = logging.getLogger("io_formats")

FLOAT_FORMAT = "%.6g"

ENSEMBLE_COLUMNS = ["sample_id", "axis", "pass_idx", "value"]
RECORD_COLUMNS = ["sample_id", "axis", "y_true", "y_hat", "sigma"]
CALIBRATOR_COLUMNS = ["axis", "alpha", "q", "m"]
INTERVAL_COLUMNS = [
    "sample_id",
    "axis",
    "alpha",
    "y_hat",
    "sigma",
    "lower",
    "upper",
    "covered",
]
REPORT_COLUMNS = [
    "axis",
    "alpha",
    "target_coverage",
    "picp",
    "mpiw",
    "interval_score",
    "n",
]
CURVE_COLUMNS = ["axis", "expected", "observed"]
PLOT_COLUMNS = ["axis", "rank", "y_true", "deviation", "lower_dev", "upper_dev"]
ACCURACY_COLUMNS = ["group", "unit", "mae", "n"]

AXIS_ORDER = {axis.value: position for position, axis in enumerate(Axis)}


class Metadata(BaseModel):
    tool: str = TOOL_NAME
    version: str = __version__
    seed: Optional[int] = None
    alphas: List[float] = []
    generator: Optional[str] = None

    def render(self) -> str:
        seed = "none" if self.seed is None else str(self.seed)
        alphas = ",".join(f"{alpha:g}" for alpha in self.alphas) or "none"
        generator = self.generator or "none"
        return (
            f"# tool={self.tool} version={self.version} seed={seed} "
            f"alpha={alphas} generator={generator}"
        )

    @classmethod
    def parse(cls, line: str) -> Optional["Metadata"]:
        line = line.strip()
        if not line.startswith("#"):
            return None
        fields = dict(
            token.split("=", 1) for token in line.lstrip("#").split() if "=" in token
        )
        if "tool" not in fields:
            return None

        def field(name):
            value = fields.get(name)
            return None if value in (None, "none") else value

        seed = field("seed")
        alphas = field("alpha")
        return cls(
            tool=fields["tool"],
            version=fields.get("version", ""),
            seed=int(seed) if seed is not None else None,
            alphas=[float(alpha) for alpha in alphas.split(",")] if alphas else [],
            generator=field("generator"),
        )

    def with_alphas(self, alphas: Sequence[float]) -> "Metadata":
        return self.copy(update={"alphas": list(alphas), "version": __version__})


class IntervalRow(BaseModel):
    sample_id: str
    axis: Axis
    alpha: confloat(gt=0.0, lt=1.0)
    y_hat: float
    sigma: confloat(ge=0.0)
    lower: float
    upper: float
    covered: bool

    class Config:
        frozen = True

    @property
    def interval(self) -> Interval:
        return Interval(lower=self.lower, upper=self.upper)


class EnsembleData(NamedTuple):
    ensembles: List[EnsemblePrediction]
    truths: Optional[Dict[Tuple[str, Axis], float]]


def read_metadata(path) -> Optional[Metadata]:
    with open(path, encoding="utf-8") as handle:
        first = handle.readline()
    return Metadata.parse(first)


# ---- запись ----


@contextmanager
def _open_output(destination):
    if hasattr(destination, "write"):
        yield destination
    else:
        with open(destination, "w", newline="", encoding="utf-8") as handle:
            yield handle


def _write_frame(frame: pd.DataFrame, destination, metadata: Optional[Metadata]):
    metadata = metadata or Metadata()
    with _open_output(destination) as handle:
        handle.write(metadata.render() + "\n")
        frame.to_csv(
            handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
    if not hasattr(destination, "write"):
        logger.debug(f"Wrote {len(frame)} rows to {destination}")


def write_ensembles(
    ensembles: Sequence[EnsemblePrediction],
    destination,
    metadata: Optional[Metadata] = None,
    truths: Optional[Dict[Tuple[str, Axis], float]] = None,
):
    sizes = [ensemble.n_passes for ensemble in ensembles]
    columns = {
        "sample_id": np.repeat([e.sample_id for e in ensembles], sizes),
        "axis": np.repeat([e.axis.value for e in ensembles], sizes),
        "pass_idx": np.concatenate([np.arange(size) for size in sizes])
        if ensembles
        else np.array([], dtype=int),
        "value": np.concatenate([np.asarray(e.passes) for e in ensembles])
        if ensembles
        else np.array([], dtype=float),
    }
    if truths is not None:
        columns["y_true"] = np.repeat(
            [truths[(e.sample_id, e.axis)] for e in ensembles], sizes
        )
    _write_frame(pd.DataFrame(columns), destination, metadata)


def _records_frame(records) -> pd.DataFrame:
    if isinstance(records, dict):
        batches = list(records.values())
    else:
        batches = [
            RecordBatch.from_records([r for r in records if r.axis == axis])
            for axis in Axis
            if any(r.axis == axis for r in records)
        ]
    frame = pd.concat(
        [
            pd.DataFrame(
                {
                    "sample_id": batch.sample_ids,
                    "axis": batch.axis.value,
                    "y_true": batch.y_true,
                    "y_hat": batch.y_hat,
                    "sigma": batch.sigma,
                }
            )
            for batch in batches
        ],
        ignore_index=True,
    )
    order = frame["axis"].map(AXIS_ORDER)
    frame = (
        frame.assign(_order=order)
        .sort_values(["sample_id", "_order"], kind="mergesort")
        .drop(columns="_order")
    )
    return frame[RECORD_COLUMNS]


def write_records(
    records: Union[Sequence[PredictionRecord], Dict[Axis, RecordBatch]],
    destination,
    metadata: Optional[Metadata] = None,
):
    if not records:
        raise utils.EmptyInputException("no records to write")
    _write_frame(_records_frame(records), destination, metadata)


def write_calibrators(
    calibrators: Sequence[Calibrator], destination, metadata: Optional[Metadata] = None
):
    frame = pd.DataFrame(
        [calibrator.dict() for calibrator in calibrators], columns=CALIBRATOR_COLUMNS
    )
    frame["axis"] = frame["axis"].map(str)
    _write_frame(frame, destination, metadata)


def write_intervals(
    blocks: Sequence[Tuple[RecordBatch, IntervalBatch, float]],
    destination,
    metadata: Optional[Metadata] = None,
):
    """
    blocks - тройки (записи одной оси, их интервалы, alpha).
    """
    frames = []
    for batch, intervals, alpha in blocks:
        utils.check_lengths(len(batch), len(intervals))
        frames.append(
            pd.DataFrame(
                {
                    "sample_id": batch.sample_ids,
                    "axis": batch.axis.value,
                    "alpha": alpha,
                    "y_hat": batch.y_hat,
                    "sigma": batch.sigma,
                    "lower": intervals.lower,
                    "upper": intervals.upper,
                    "covered": intervals.covers(batch.y_true),
                }
            )
        )
    frame = (
        pd.concat(frames, ignore_index=True)
        if frames
        else pd.DataFrame(columns=INTERVAL_COLUMNS)
    )
    _write_frame(frame[INTERVAL_COLUMNS], destination, metadata)


def _report_rows(reports: Sequence[MetricsReport]) -> List[dict]:
    return utils.to_lists_of_dicts(
        axis=[report.axis.value for report in reports],
        alpha=[report.alpha for report in reports],
        target_coverage=[report.target_coverage for report in reports],
        picp=[report.picp for report in reports],
        mpiw=[report.mpiw for report in reports],
        interval_score=[report.interval_score for report in reports],
        n=[report.n for report in reports],
    )


def write_report(
    reports: Sequence[MetricsReport], destination, metadata: Optional[Metadata] = None
):
    frame = pd.DataFrame(_report_rows(reports), columns=REPORT_COLUMNS)
    _write_frame(frame, destination, metadata)


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def write_report_json(
    reports: Sequence[MetricsReport], destination, metadata: Optional[Metadata] = None
):
    metadata = metadata or Metadata()
    document = {
        "metadata": metadata.dict(),
        "reports": [
            {key: _json_safe(value) for key, value in row.items()}
            for row in _report_rows(reports)
        ],
    }
    with _open_output(destination) as handle:
        handle.write(json.dumps(document, indent=2) + "\n")


def write_curve(
    curves: Dict[Axis, List[CurvePoint]],
    destination,
    metadata: Optional[Metadata] = None,
):
    rows = [
        {"axis": axis.value, "expected": point.expected, "observed": point.observed}
        for axis, points in curves.items()
        for point in points
    ]
    _write_frame(pd.DataFrame(rows, columns=CURVE_COLUMNS), destination, metadata)


def write_plot_data(
    plots: Dict[Axis, List[PlotRow]],
    destination,
    metadata: Optional[Metadata] = None,
):
    rows = [
        {
            "axis": axis.value,
            "rank": rank,
            "y_true": row.y_true,
            "deviation": row.deviation,
            "lower_dev": row.lower_dev,
            "upper_dev": row.upper_dev,
        }
        for axis, plot_rows in plots.items()
        for rank, row in enumerate(plot_rows)
    ]
    _write_frame(pd.DataFrame(rows, columns=PLOT_COLUMNS), destination, metadata)


def write_accuracy(
    rows: Sequence[AccuracySummary], destination, metadata: Optional[Metadata] = None
):
    frame = pd.DataFrame([row.dict() for row in rows], columns=ACCURACY_COLUMNS)
    _write_frame(frame, destination, metadata)


# ---- чтение ----


def _read_frame(path, columns: Sequence[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    """
    Читает CSV как текст, проверяет заголовок и наличие данных.
    Числа разбираются отдельно, чтобы ошибки указывали на строку.
    """
    try:
        frame = pd.read_csv(
            path, comment="#", dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except pd.errors.EmptyDataError:
        raise utils.EmptyInputException(f"{path}: file has no header") from None
    except pd.errors.ParserError as e:
        raise utils.ParseException(str(e).strip(), path=path) from None
    for column in columns:
        if column not in frame.columns:
            raise utils.ParseException(f"missing column {column!r}", path=path)
    if frame.empty:
        raise utils.EmptyInputException(f"{path}: no data rows")
    keep = list(columns) + [column for column in optional if column in frame.columns]
    frame = frame[keep].copy()
    for column in keep:
        blank = frame[column].isna() | (frame[column].str.strip() == "")
        if blank.any():
            raise utils.ParseException(
                f"missing value in column {column!r}",
                path=path,
                row=int(np.flatnonzero(blank.to_numpy())[0]) + 1,
            )
    return frame


def _numeric(frame, column, path, finite=True, minimum=None, integer=False):
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(values)
    if finite:
        bad |= np.isinf(values)
    if minimum is not None:
        bad |= values < minimum
    if integer:
        with np.errstate(invalid="ignore"):
            bad |= values != np.floor(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise utils.ParseException(
            f"invalid value {frame[column].iloc[row]!r} in column {column!r}",
            path=path,
            row=row + 1,
        )
    return values.astype(int) if integer else values


def _axes(frame, path) -> np.ndarray:
    labels = frame["axis"].to_numpy()
    unknown = ~frame["axis"].isin(AXIS_ORDER).to_numpy()
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise utils.ParseException(
            f"unknown axis label {labels[row]!r}", path=path, row=row + 1
        )
    return labels


def _check_unique(frame, keys: List[str], path):
    duplicated = frame.duplicated(keys).to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0])
        key = "/".join(str(frame[k].iloc[row]) for k in keys)
        raise utils.ParseException(f"duplicate key {key}", path=path, row=row + 1)


def read_ensembles(path) -> EnsembleData:
    frame = _read_frame(path, ENSEMBLE_COLUMNS, optional=["y_true"])
    _axes(frame, path)
    frame["pass_idx"] = _numeric(frame, "pass_idx", path, minimum=0, integer=True)
    frame["value"] = _numeric(frame, "value", path)
    has_truth = "y_true" in frame.columns
    if has_truth:
        frame["y_true"] = _numeric(frame, "y_true", path)
    _check_unique(frame, ["sample_id", "axis", "pass_idx"], path)

    frame["_row"] = np.arange(1, len(frame) + 1)
    frame["_order"] = frame["axis"].map(AXIS_ORDER)
    frame = frame.sort_values(["sample_id", "_order", "pass_idx"], kind="mergesort")
    sizes = frame.groupby(["sample_id", "_order"], sort=False).size()
    n_passes = int(sizes.mode().iloc[0])
    ragged = sizes[sizes != n_passes]
    if len(ragged):
        sample_id, order = ragged.index[0]
        axis = list(Axis)[order]
        rows = frame.loc[(frame["sample_id"] == sample_id) & (frame["_order"] == order), "_row"]
        raise utils.ParseException(
            f"ragged ensemble {sample_id}/{axis}: {int(ragged.iloc[0])} passes, "
            f"expected {n_passes}",
            path=path,
            row=int(rows.min()),
        )

    indices = frame["pass_idx"].to_numpy().reshape(-1, n_passes)
    gaps = ~np.all(indices == np.arange(n_passes), axis=1)
    values = frame["value"].to_numpy().reshape(-1, n_passes)
    keys = frame[["sample_id", "axis"]].to_numpy()[::n_passes]
    first_rows = frame["_row"].to_numpy()[::n_passes]
    if gaps.any():
        group = int(np.flatnonzero(gaps)[0])
        raise utils.ParseException(
            f"pass indices of {keys[group][0]}/{keys[group][1]} are not 0..{n_passes - 1}",
            path=path,
            row=int(first_rows[group]),
        )

    truths = None
    if has_truth:
        y_true = frame["y_true"].to_numpy().reshape(-1, n_passes)
        varying = ~np.all(y_true == y_true[:, :1], axis=1)
        if varying.any():
            group = int(np.flatnonzero(varying)[0])
            raise utils.ParseException(
                f"y_true differs between passes of {keys[group][0]}/{keys[group][1]}",
                path=path,
                row=int(first_rows[group]),
            )
        truths = {
            (sample_id, Axis(axis)): float(truth)
            for (sample_id, axis), truth in zip(keys, y_true[:, 0])
        }

    # значения уже проверены выше, повторная валидация pydantic не нужна
    ensembles = [
        EnsemblePrediction.construct(
            sample_id=sample_id, axis=Axis(axis), passes=tuple(row.tolist())
        )
        for (sample_id, axis), row in zip(keys, values)
    ]
    logger.debug(f"Read {len(ensembles)} ensembles of {n_passes} passes from {path}")
    return EnsembleData(ensembles=ensembles, truths=truths)


def _read_record_frame(path) -> pd.DataFrame:
    frame = _read_frame(path, RECORD_COLUMNS)
    _axes(frame, path)
    frame["y_true"] = _numeric(frame, "y_true", path)
    frame["y_hat"] = _numeric(frame, "y_hat", path)
    frame["sigma"] = _numeric(frame, "sigma", path, minimum=0.0)
    _check_unique(frame, ["sample_id", "axis"], path)
    return frame


def read_records(path) -> List[PredictionRecord]:
    frame = _read_record_frame(path)
    return [
        PredictionRecord.construct(
            sample_id=sample_id,
            axis=Axis(axis),
            y_true=float(y_true),
            y_hat=float(y_hat),
            sigma=float(sigma),
        )
        for sample_id, axis, y_true, y_hat, sigma in frame[RECORD_COLUMNS].itertuples(
            index=False
        )
    ]


def read_record_batches(path) -> Dict[Axis, RecordBatch]:
    """
    То же, что read_records, но сразу по осям в колоночном виде.
    """
    frame = _read_record_frame(path)
    batches = {}
    for axis in Axis:
        part = frame[frame["axis"] == axis.value]
        if part.empty:
            continue
        batches[axis] = RecordBatch(
            axis=axis,
            sample_ids=part["sample_id"].to_numpy(),
            y_true=part["y_true"].to_numpy(),
            y_hat=part["y_hat"].to_numpy(),
            sigma=part["sigma"].to_numpy(),
        )
    return batches


def _models(frame: pd.DataFrame, model, path) -> list:
    result = []
    for row, values in enumerate(frame.to_dict("records"), start=1):
        try:
            result.append(model(**values))
        except ValidationError as e:
            raise utils.ParseException(
                "; ".join(error["msg"] for error in e.errors()), path=path, row=row
            ) from None
    return result


def read_calibrators(path) -> List[Calibrator]:
    frame = _read_frame(path, CALIBRATOR_COLUMNS)
    _axes(frame, path)
    frame["alpha"] = _numeric(frame, "alpha", path)
    frame["q"] = _numeric(frame, "q", path, finite=False, minimum=0.0)
    frame["m"] = _numeric(frame, "m", path, minimum=1, integer=True)
    _check_unique(frame, ["axis", "alpha"], path)
    return _models(frame, Calibrator, path)


def _booleans(frame, column, path) -> np.ndarray:
    mapping = {"True": True, "False": False}
    values = frame[column].map(mapping)
    bad = values.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise utils.ParseException(
            f"invalid boolean {frame[column].iloc[row]!r} in column {column!r}",
            path=path,
            row=row + 1,
        )
    return values.to_numpy(dtype=bool)


def read_intervals(path) -> List[IntervalRow]:
    frame = _read_frame(path, INTERVAL_COLUMNS)
    _axes(frame, path)
    for column in ("alpha", "y_hat", "sigma"):
        frame[column] = _numeric(frame, column, path)
    for column in ("lower", "upper"):
        frame[column] = _numeric(frame, column, path, finite=False)
    frame["covered"] = _booleans(frame, "covered", path)
    _check_unique(frame, ["sample_id", "axis", "alpha"], path)
    return _models(frame, IntervalRow, path)


def read_report(path) -> List[MetricsReport]:
    frame = _read_frame(path, REPORT_COLUMNS)
    _axes(frame, path)
    for column in ("alpha", "target_coverage", "picp"):
        frame[column] = _numeric(frame, column, path)
    for column in ("mpiw", "interval_score"):
        frame[column] = _numeric(frame, column, path, finite=False, minimum=0.0)
    frame["n"] = _numeric(frame, "n", path, minimum=1, integer=True)
    _check_unique(frame, ["axis", "alpha"], path)
    return _models(frame.drop(columns="target_coverage"), MetricsReport, path)


def read_curve(path) -> Dict[Axis, List[CurvePoint]]:
    frame = _read_frame(path, CURVE_COLUMNS)
    _axes(frame, path)
    frame["expected"] = _numeric(frame, "expected", path)
    frame["observed"] = _numeric(frame, "observed", path)
    curves: Dict[Axis, List[CurvePoint]] = {}
    points = _models(frame[["expected", "observed"]], CurvePoint, path)
    for axis, point in zip(frame["axis"], points):
        curves.setdefault(Axis(axis), []).append(point)
    return curves


def read_plot_data(path) -> pd.DataFrame:
    """
    Данные для графика упорядоченных интервалов как таблица pandas,
    в том виде, в каком ее ждут внешние средства построения графиков.
    """
    frame = _read_frame(path, PLOT_COLUMNS)
    _axes(frame, path)
    frame["rank"] = _numeric(frame, "rank", path, minimum=0, integer=True)
    frame["y_true"] = _numeric(frame, "y_true", path)
    frame["deviation"] = _numeric(frame, "deviation", path)
    frame["lower_dev"] = _numeric(frame, "lower_dev", path, finite=False)
    frame["upper_dev"] = _numeric(frame, "upper_dev", path, finite=False)
    _check_unique(frame, ["axis", "rank"], path)
    return frame.reset_index(drop=True)


def read_accuracy(path) -> List[AccuracySummary]:
    frame = _read_frame(path, ACCURACY_COLUMNS)
    frame["mae"] = _numeric(frame, "mae", path, minimum=0.0)
    frame["n"] = _numeric(frame, "n", path, minimum=1, integer=True)
    return _models(frame, AccuracySummary, path)
