import io
import logging
import logging.config
import math
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import click
from pydantic import ValidationError

from conformal import conformal
from io_formats import io_formats
from io_formats.io_formats import Metadata
from log_settings.settings import PACKAGES, LoggingContext, logger_config
from mcd_ensemble import ensemble
from metrics import metrics
from synthetic import synthetic
from uq_core import TOOL_NAME, __version__
from uq_core.batch import IntervalBatch, RecordBatch
from uq_core.schemas import Axis
from utils import utils

logging.config.dictConfig(logger_config)
logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_ALPHAS = (0.1, 0.05, 0.01)
CURVE_ALPHAS = tuple(round(0.01 * i, 2) for i in range(1, 51))
PLOT_ALPHA = 0.1
SIMULATION_FILES = ("ensembles", "calibration", "test")


class AlphaList(click.ParamType):
    """
    Список alpha через запятую: "0.1,0.05,0.01".
    """

    name = "alphas"

    def convert(self, value, param, ctx):
        if isinstance(value, tuple):
            return value
        try:
            alphas = tuple(float(item) for item in str(value).split(",") if item.strip())
        except ValueError:
            self.fail(f"{value!r} is not a comma-separated list of numbers", param, ctx)
        if not alphas:
            self.fail("at least one alpha is required", param, ctx)
        for alpha in alphas:
            if not 0.0 < alpha < 1.0:
                self.fail(f"alpha must lie in (0, 1), got {alpha}", param, ctx)
        return alphas


class AxisScale(click.ParamType):
    name = "AXIS=FACTOR"

    def convert(self, value, param, ctx):
        if isinstance(value, tuple):
            return value
        label, sep, factor = str(value).partition("=")
        if not sep:
            self.fail(f"expected AXIS=FACTOR, got {value!r}", param, ctx)
        try:
            return Axis.parse(label), float(factor)
        except ValueError as e:
            self.fail(str(e), param, ctx)


def _odd_window(ctx, param, value):
    if value < 1 or value % 2 == 0:
        raise click.BadParameter(f"window must be a positive odd integer, got {value}")
    return value


def input_option(func):
    return click.option(
        "--input",
        "input_path",
        required=True,
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        help="Входной CSV.",
    )(func)


def output_option(func):
    return click.option(
        "--output",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="Выходной CSV; без него CSV пишется в stdout.",
    )(func)


def force_option(func):
    return click.option(
        "--force", is_flag=True, help="Перезаписывать существующие файлы."
    )(func)


def alpha_option(func):
    return click.option(
        "--alpha",
        "alphas",
        type=AlphaList(),
        default=None,
        help="Уровни значимости через запятую (по умолчанию 0.1,0.05,0.01).",
    )(func)


def calibrator_option(func):
    return click.option(
        "--calibrator",
        "calibrator_path",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help="Файл калибраторов (результат calibrate).",
    )(func)


def baseline_option(func):
    return click.option(
        "--baseline",
        type=click.Choice(["conformal", "normal"]),
        default="conformal",
        show_default=True,
        help="normal - интервалы по нормальному приближению без конформной калибровки.",
    )(func)


def _guard(paths: Sequence[Optional[Path]], force: bool):
    for path in paths:
        if path is not None and path.exists() and not force:
            raise click.UsageError(f"{path} already exists, pass --force to overwrite")


def _emit(writer, payload, output: Optional[Path], metadata: Metadata):
    if output is None:
        buffer = io.StringIO()
        writer(payload, buffer, metadata)
        click.echo(buffer.getvalue(), nl=False)
    else:
        writer(payload, output, metadata)


def _inherit_metadata(path: Path, alphas: Sequence[float]) -> Metadata:
    metadata = io_formats.read_metadata(path) or Metadata()
    return metadata.with_alphas(alphas)


def _calibrator_table(
    calibrator_path: Path,
) -> Tuple[Dict[Axis, List[conformal.Calibrator]], List[float]]:
    table: Dict[Axis, List[conformal.Calibrator]] = {}
    alphas: List[float] = []
    for calibrator in io_formats.read_calibrators(calibrator_path):
        table.setdefault(calibrator.axis, []).append(calibrator)
        if not any(math.isclose(calibrator.alpha, a, rel_tol=1e-6) for a in alphas):
            alphas.append(calibrator.alpha)
    return table, alphas


def _interval_sets(
    batches: Dict[Axis, RecordBatch],
    calibrator_path: Optional[Path],
    alphas: Optional[Sequence[float]],
    baseline: str,
) -> Iterator[Tuple[Axis, float, RecordBatch, IntervalBatch]]:
    """
    Интервалы для каждой пары (ось, alpha). В режиме normal файл калибраторов
    не читается вовсе.
    """
    if baseline == "normal":
        for axis, batch in batches.items():
            for alpha in alphas or DEFAULT_ALPHAS:
                yield axis, alpha, batch, conformal.normal_baseline_intervals(batch, alpha)
        return

    if calibrator_path is None:
        raise click.UsageError("--calibrator is required unless --baseline normal")
    table, file_alphas = _calibrator_table(calibrator_path)
    for axis, batch in batches.items():
        if axis not in table:
            raise utils.AxisMismatchException(
                f"axis {axis} is present in the records but absent in {calibrator_path}"
            )
        for alpha in alphas or file_alphas:
            matches = [c for c in table[axis] if math.isclose(c.alpha, alpha, rel_tol=1e-6)]
            if not matches:
                raise utils.DataException(
                    f"{calibrator_path} has no calibrator for axis {axis}, alpha={alpha}"
                )
            calibrator = matches[0]
            yield axis, calibrator.alpha, batch, conformal.predict_intervals(calibrator, batch)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--verbose", is_flag=True, help="Подробный лог (DEBUG) в stderr.")
@click.version_option(__version__, prog_name=TOOL_NAME)
@click.pass_context
def cli(ctx, verbose):
    """
    Конформные интервалы для ансамблевых предсказаний калибровки.
    """
    if verbose:
        for name in PACKAGES:
            ctx.with_resource(LoggingContext(logging.getLogger(name), level=logging.DEBUG))


@cli.command()
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--calib-fraction", type=float, default=0.5, show_default=True)
@click.option("--passes", type=int, default=25, show_default=True)
@click.option(
    "--noise",
    type=click.Choice([family.value for family in synthetic.NoiseFamily]),
    default=synthetic.NoiseFamily.GAUSSIAN.value,
    show_default=True,
)
@click.option("--dof", type=float, default=3.0, show_default=True)
@click.option("--base-scale", type=float, default=1.0, show_default=True)
@click.option("--hetero-scale", type=float, default=1.0, show_default=True)
@click.option("--trans-range", type=float, default=10.0, show_default=True, help="см")
@click.option("--rot-range", type=float, default=1.0, show_default=True, help="градусы")
@click.option("--axis-scale", "axis_scales", type=AxisScale(), multiple=True)
@click.option(
    "--output",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Каталог для ensembles.csv, calibration.csv, test.csv.",
)
@force_option
def simulate(
    seed,
    samples,
    calib_fraction,
    passes,
    noise,
    dof,
    base_scale,
    hetero_scale,
    trans_range,
    rot_range,
    axis_scales,
    output,
    force,
):
    """
    Синтетический прогон: ансамбли, калибровочная и тестовая выборки.
    """
    try:
        config = synthetic.SimConfig(
            seed=seed,
            n_samples=samples,
            n_passes=passes,
            noise=synthetic.NoiseModel(
                family=noise, dof=dof, hetero_scale=hetero_scale, base_scale=base_scale
            ),
            trans_range_cm=trans_range,
            rot_range_deg=rot_range,
            calib_fraction=calib_fraction,
            axis_scales=dict(axis_scales),
        )
    except ValidationError as e:
        raise click.UsageError(f"invalid simulation settings: {e}") from None
    n_calib, n_test = config.split_sizes()
    if n_calib < 1 or n_test < 1:
        raise click.UsageError(
            f"--samples {samples} with --calib-fraction {calib_fraction} "
            f"leaves an empty calibration or test split"
        )
    paths = {name: output / f"{name}.csv" for name in SIMULATION_FILES}
    _guard(paths.values(), force)
    output.mkdir(parents=True, exist_ok=True)

    trial = synthetic.run_trial(config)
    metadata = Metadata(seed=config.seed, generator=synthetic.GENERATOR_NAME)
    io_formats.write_ensembles(
        trial.ensembles(), paths["ensembles"], metadata, truths=trial.truth_lookup()
    )
    io_formats.write_records(trial.calibration, paths["calibration"], metadata)
    io_formats.write_records(trial.test, paths["test"], metadata)
    n_axes = len(trial.calibration)
    click.echo(f"calibration: {n_calib} samples x {n_axes} axes -> {paths['calibration']}")
    click.echo(f"test: {n_test} samples x {n_axes} axes -> {paths['test']}")


@cli.command()
@input_option
@output_option
@force_option
def aggregate(input_path, output, force):
    """
    Ансамбли -> записи (y_true, y_hat, sigma).
    """
    _guard([output], force)
    data = io_formats.read_ensembles(input_path)
    if data.truths is None:
        raise utils.ParseException(
            "ensemble file has no y_true column, records need ground truth",
            path=input_path,
        )
    records = [
        ensemble.aggregate_record(item, data.truths[(item.sample_id, item.axis)])
        for item in data.ensembles
    ]
    _emit(io_formats.write_records, records, output, _inherit_metadata(input_path, []))


@cli.command()
@input_option
@alpha_option
@output_option
@force_option
def calibrate(input_path, alphas, output, force):
    """
    Калибраторы по калибровочной выборке: строки (axis, alpha, q, m).
    """
    _guard([output], force)
    alphas = alphas or DEFAULT_ALPHAS
    batches = io_formats.read_record_batches(input_path)
    calibrators = conformal.fit_all(batches, alphas)
    _emit(
        io_formats.write_calibrators,
        calibrators,
        output,
        _inherit_metadata(input_path, alphas),
    )


@cli.command()
@input_option
@calibrator_option
@alpha_option
@baseline_option
@output_option
@force_option
def predict(input_path, calibrator_path, alphas, baseline, output, force):
    """
    Интервалы для тестовых записей.
    """
    _guard([output], force)
    batches = io_formats.read_record_batches(input_path)
    blocks = [
        (batch, intervals, alpha)
        for _, alpha, batch, intervals in _interval_sets(
            batches, calibrator_path, alphas, baseline
        )
    ]
    used = sorted({alpha for _, _, alpha in blocks}, reverse=True)
    _emit(
        io_formats.write_intervals, blocks, output, _inherit_metadata(input_path, used)
    )


@cli.command()
@input_option
@calibrator_option
@alpha_option
@baseline_option
@output_option
@force_option
def evaluate(input_path, calibrator_path, alphas, baseline, output, force):
    """
    PICP, MPIW и интервальная оценка по осям и уровням покрытия.
    Рядом с CSV пишется JSON-копия отчета.
    """
    json_path = output.with_suffix(".json") if output is not None else None
    _guard([output, json_path], force)
    batches = io_formats.read_record_batches(input_path)
    reports = [
        metrics.evaluate(batch, intervals, alpha)
        for _, alpha, batch, intervals in _interval_sets(
            batches, calibrator_path, alphas, baseline
        )
    ]
    used = sorted({report.alpha for report in reports}, reverse=True)
    metadata = _inherit_metadata(input_path, used)
    for report in reports:
        if report.picp < report.target_coverage:
            logger.info(
                f"Axis {report.axis}: PICP {report.picp:.4f} below target "
                f"{report.target_coverage:.2f}"
            )
    _emit(io_formats.write_report, reports, output, metadata)
    if json_path is not None:
        io_formats.write_report_json(reports, json_path, metadata)


@cli.command()
@input_option
@click.option(
    "--calibration",
    "calibration_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Калибровочные записи.",
)
@alpha_option
@output_option
@force_option
def curve(input_path, calibration_path, alphas, output, force):
    """
    Калибровочная кривая: наблюдаемое покрытие против ожидаемого.
    По умолчанию alpha от 0.01 до 0.50 с шагом 0.01.
    """
    _guard([output], force)
    alphas = alphas or CURVE_ALPHAS
    test = io_formats.read_record_batches(input_path)
    calibration = io_formats.read_record_batches(calibration_path)
    curves = {}
    for axis, batch in test.items():
        if axis not in calibration:
            raise utils.AxisMismatchException(
                f"axis {axis} is present in {input_path} but absent in {calibration_path}"
            )
        curves[axis] = metrics.calibration_curve(batch, calibration[axis], alphas)
    _emit(io_formats.write_curve, curves, output, _inherit_metadata(input_path, alphas))


@cli.command()
@input_option
@calibrator_option
@alpha_option
@baseline_option
@click.option(
    "--window",
    type=int,
    default=metrics.DEFAULT_WINDOW,
    show_default=True,
    callback=_odd_window,
    help="Окно скользящего среднего (нечетное).",
)
@output_option
@force_option
def plotdata(input_path, calibrator_path, alphas, baseline, window, output, force):
    """
    Данные для графика упорядоченных интервалов (один уровень alpha).
    """
    _guard([output], force)
    alphas = alphas or (PLOT_ALPHA,)
    if len(alphas) != 1:
        raise click.BadParameter("plotdata takes exactly one alpha", param_hint="--alpha")
    batches = io_formats.read_record_batches(input_path)
    plots = {
        axis: metrics.ordered_plot_data(batch, intervals, window)
        for axis, _, batch, intervals in _interval_sets(
            batches, calibrator_path, alphas, baseline
        )
    }
    _emit(io_formats.write_plot_data, plots, output, _inherit_metadata(input_path, alphas))


@cli.command()
@input_option
@output_option
@force_option
def accuracy(input_path, output, force):
    """
    Средняя абсолютная ошибка по осям и отдельно по смещениям и поворотам.
    """
    _guard([output], force)
    rows = metrics.accuracy_summary(io_formats.read_record_batches(input_path))
    _emit(io_formats.write_accuracy, rows, output, _inherit_metadata(input_path, []))


def main(argv: Optional[List[str]] = None) -> int:
    """
    Точка входа с кодами возврата: 0 - успех, 1 - ошибка использования,
    2 - ошибка данных.
    """
    try:
        cli.main(args=argv, prog_name=TOOL_NAME, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except utils.ConfigException as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (utils.DataException, ValidationError, OSError) as e:
        logger.error(str(e))
        return EXIT_DATA
    return EXIT_OK
