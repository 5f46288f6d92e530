import numpy as np
import pytest

from cli import cli
from io_formats import io_formats
from uq_core.schemas import Axis

from .conftest import make_records


def run(*args):
    return cli.main([str(arg) for arg in args])


def simulate(directory, seed=1, samples=200, *extra):
    return run(
        "simulate", "--seed", seed, "--samples", samples, "--passes", 5,
        "--output", directory, *extra,
    )


@pytest.fixture
def simulated(tmp_path):
    directory = tmp_path / "sim"
    assert simulate(directory) == cli.EXIT_OK
    return directory


def test_simulate_writes_split(tmp_path, capsys):
    directory = tmp_path / "sim"
    assert simulate(directory, 1, 1000) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "calibration: 500 samples x 6 axes" in out
    assert "test: 500 samples x 6 axes" in out
    calibration = io_formats.read_record_batches(directory / "calibration.csv")
    test = io_formats.read_record_batches(directory / "test.csv")
    assert {len(batch) for batch in calibration.values()} == {500}
    assert not set(calibration[Axis.X].sample_ids) & set(test[Axis.X].sample_ids)
    data = io_formats.read_ensembles(directory / "ensembles.csv")
    assert len(data.ensembles) == 6000
    metadata = io_formats.read_metadata(directory / "test.csv")
    assert (metadata.seed, metadata.generator) == (1, "PCG64")


def test_simulate_rejects_full_calibration_split(tmp_path, capsys):
    assert simulate(tmp_path / "sim", 1, 100, "--calib-fraction", "1.0") == cli.EXIT_USAGE
    assert "calib_fraction" in capsys.readouterr().err
    assert not (tmp_path / "sim").exists()


def test_simulate_rejects_empty_split(tmp_path):
    assert simulate(tmp_path / "sim", 1, 1) == cli.EXIT_USAGE


def test_existing_outputs_need_force(simulated, capsys):
    assert simulate(simulated) == cli.EXIT_USAGE
    assert "--force" in capsys.readouterr().err
    assert simulate(simulated, 1, 200, "--force") == cli.EXIT_OK


def test_pipeline_is_byte_deterministic(tmp_path):
    outputs = []
    for name in ("first", "second"):
        directory = tmp_path / name
        assert simulate(directory, 17, 300) == cli.EXIT_OK
        calibrators = directory / "calibrators.csv"
        report = directory / "report.csv"
        assert run("calibrate", "--input", directory / "calibration.csv",
                   "--output", calibrators) == cli.EXIT_OK
        assert run("evaluate", "--input", directory / "test.csv",
                   "--calibrator", calibrators, "--output", report) == cli.EXIT_OK
        outputs.append(
            [(directory / f"{file}").read_bytes() for file in (
                "ensembles.csv", "calibration.csv", "test.csv",
                "calibrators.csv", "report.csv", "report.json",
            )]
        )
    assert outputs[0] == outputs[1]
    reports = io_formats.read_report(tmp_path / "first" / "report.csv")
    assert len(reports) == 18


def test_calibrate_nine_scores(tmp_path, capsys, nine_scores):
    path = tmp_path / "calibration.csv"
    io_formats.write_records(nine_scores, path)
    assert run("calibrate", "--input", path, "--alpha", "0.5") == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[1:] == ["axis,alpha,q,m", "X,0.5,5,9"]


def test_calibrate_warns_on_small_set(tmp_path, capsys):
    path = tmp_path / "calibration.csv"
    io_formats.write_records(make_records([1.0, 2.0, 3.0, 4.0]), path)
    assert run("calibrate", "--input", path, "--alpha", "0.01") == cli.EXIT_OK
    captured = capsys.readouterr()
    assert "X,0.01,inf,4" in captured.out
    assert "increase calibration set" in captured.err


def test_calibrate_missing_input(tmp_path):
    assert run("calibrate", "--input", tmp_path / "absent.csv") == cli.EXIT_USAGE


def test_calibrate_bad_alpha(tmp_path, nine_scores):
    path = tmp_path / "calibration.csv"
    io_formats.write_records(nine_scores, path)
    assert run("calibrate", "--input", path, "--alpha", "0.1,1.5") == cli.EXIT_USAGE


def test_calibrate_parse_error_is_data_error(tmp_path, capsys):
    path = tmp_path / "calibration.csv"
    path.write_text("sample_id,axis,y_true,y_hat,sigma\ns1,X,0,1,-1\n")
    assert run("calibrate", "--input", path) == cli.EXIT_DATA
    assert "row 1" in capsys.readouterr().err


def test_evaluate_missing_axis(tmp_path, capsys, nine_scores):
    calibration = tmp_path / "calibration.csv"
    test = tmp_path / "test.csv"
    calibrators = tmp_path / "calibrators.csv"
    io_formats.write_records(nine_scores, calibration)
    io_formats.write_records(make_records([1.0, 2.0], axis=Axis.YAW), test)
    assert run("calibrate", "--input", calibration, "--output", calibrators) == cli.EXIT_OK
    assert run("evaluate", "--input", test, "--calibrator", calibrators) == cli.EXIT_DATA
    assert "Yaw" in capsys.readouterr().err


def test_evaluate_empty_test_file(tmp_path, simulated):
    calibrators = tmp_path / "calibrators.csv"
    empty = tmp_path / "empty.csv"
    empty.write_text("sample_id,axis,y_true,y_hat,sigma\n")
    assert run("calibrate", "--input", simulated / "calibration.csv",
               "--output", calibrators) == cli.EXIT_OK
    assert run("evaluate", "--input", empty, "--calibrator", calibrators) == cli.EXIT_DATA


def test_evaluate_on_sample_coverage(tmp_path, capsys, nine_scores):
    path = tmp_path / "records.csv"
    calibrators = tmp_path / "calibrators.csv"
    io_formats.write_records(nine_scores, path)
    assert run("calibrate", "--input", path, "--alpha", "0.5",
               "--output", calibrators) == cli.EXIT_OK
    report = tmp_path / "report.csv"
    assert run("evaluate", "--input", path, "--calibrator", calibrators,
               "--output", report) == cli.EXIT_OK
    (row,) = io_formats.read_report(report)
    assert row.picp >= 0.5
    assert report.with_suffix(".json").exists()


def test_evaluate_synthetic_coverage(tmp_path):
    directory = tmp_path / "sim"
    assert run(
        "simulate", "--seed", 2024, "--samples", 5500, "--calib-fraction", 500 / 5500,
        "--output", directory,
    ) == cli.EXIT_OK
    calibrators = tmp_path / "calibrators.csv"
    report = tmp_path / "report.csv"
    assert run("calibrate", "--input", directory / "calibration.csv",
               "--alpha", "0.1", "--output", calibrators) == cli.EXIT_OK
    assert run("evaluate", "--input", directory / "test.csv",
               "--calibrator", calibrators, "--output", report) == cli.EXIT_OK
    rows = io_formats.read_report(report)
    assert {row.n for row in rows} == {5000}
    picps = [row.picp for row in rows]
    assert 0.88 <= np.mean(picps) <= 0.92
    assert all(0.85 <= picp <= 0.95 for picp in picps)


def test_normal_baseline_ignores_calibrators(tmp_path, simulated):
    broken = tmp_path / "calibrators.csv"
    broken.write_text("not a calibrator file\n")
    report = tmp_path / "report.csv"
    assert run("evaluate", "--input", simulated / "test.csv", "--baseline", "normal",
               "--calibrator", broken, "--output", report) == cli.EXIT_OK
    assert len(io_formats.read_report(report)) == 18
    assert run("evaluate", "--input", simulated / "test.csv",
               "--calibrator", broken) == cli.EXIT_DATA


def test_conformal_mode_needs_calibrator(simulated):
    assert run("predict", "--input", simulated / "test.csv") == cli.EXIT_USAGE


def test_predict_writes_intervals(tmp_path, simulated):
    calibrators = tmp_path / "calibrators.csv"
    intervals = tmp_path / "intervals.csv"
    assert run("calibrate", "--input", simulated / "calibration.csv",
               "--alpha", "0.1,0.05", "--output", calibrators) == cli.EXIT_OK
    assert run("predict", "--input", simulated / "test.csv", "--calibrator", calibrators,
               "--output", intervals) == cli.EXIT_OK
    rows = io_formats.read_intervals(intervals)
    assert len(rows) == 100 * 6 * 2
    assert {row.alpha for row in rows} == {0.1, 0.05}
    assert io_formats.read_metadata(intervals).alphas == [0.1, 0.05]


def test_aggregate_rebuilds_records(tmp_path, simulated):
    records = tmp_path / "records.csv"
    assert run("aggregate", "--input", simulated / "ensembles.csv",
               "--output", records) == cli.EXIT_OK
    rebuilt = io_formats.read_record_batches(records)
    original = io_formats.read_record_batches(simulated / "test.csv")
    assert {len(batch) for batch in rebuilt.values()} == {200}
    lookup = dict(zip(rebuilt[Axis.Z].sample_ids, rebuilt[Axis.Z].sigma))
    for sample_id, sigma in zip(original[Axis.Z].sample_ids, original[Axis.Z].sigma):
        assert lookup[sample_id] == pytest.approx(sigma, rel=1e-3, abs=2e-4)


def test_curve_plotdata_accuracy(tmp_path, simulated):
    curve = tmp_path / "curve.csv"
    assert run("curve", "--input", simulated / "test.csv",
               "--calibration", simulated / "calibration.csv",
               "--output", curve) == cli.EXIT_OK
    curves = io_formats.read_curve(curve)
    assert {len(points) for points in curves.values()} == {50}

    plot = tmp_path / "plot.csv"
    assert run("plotdata", "--input", simulated / "test.csv", "--baseline", "normal",
               "--window", 5, "--output", plot) == cli.EXIT_OK
    frame = io_formats.read_plot_data(plot)
    assert len(frame) == 600
    assert io_formats.read_metadata(plot).alphas == [0.1]

    accuracy = tmp_path / "accuracy.csv"
    assert run("accuracy", "--input", simulated / "test.csv",
               "--output", accuracy) == cli.EXIT_OK
    assert [row.group for row in io_formats.read_accuracy(accuracy)][-2:] == [
        "translation", "rotation",
    ]


def test_plotdata_once_per_alpha_nests_bands(tmp_path, simulated):
    frames = []
    for alpha in (0.1, 0.05, 0.01):
        plot = tmp_path / f"plot_{alpha}.csv"
        assert run("plotdata", "--input", simulated / "test.csv", "--baseline", "normal",
                   "--alpha", alpha, "--output", plot) == cli.EXIT_OK
        assert io_formats.read_metadata(plot).alphas == [alpha]
        frames.append(io_formats.read_plot_data(plot))
    narrow, middle, wide = frames
    assert len(narrow) == 600
    assert narrow["deviation"].tolist() == wide["deviation"].tolist()
    assert (narrow["upper_dev"] < middle["upper_dev"]).all()
    assert (middle["upper_dev"] < wide["upper_dev"]).all()
    assert (narrow["lower_dev"] > wide["lower_dev"]).all()


@pytest.mark.parametrize(
    "extra", [["--window", "4"], ["--alpha", "0.1,0.05"]],
)
def test_plotdata_usage_errors(simulated, extra):
    args = ["plotdata", "--input", simulated / "test.csv", "--baseline", "normal", *extra]
    assert run(*args) == cli.EXIT_USAGE


def test_verbose_logs_debug(tmp_path, capsys, nine_scores):
    path = tmp_path / "calibration.csv"
    io_formats.write_records(nine_scores, path)
    assert run("--verbose", "calibrate", "--input", path, "--alpha", "0.5") == cli.EXIT_OK
    assert "DEBUG: Axis X: alpha=0.5 q=5.0 m=9" in capsys.readouterr().err
    assert run("calibrate", "--input", path, "--alpha", "0.5") == cli.EXIT_OK
    assert "DEBUG" not in capsys.readouterr().err


def test_version(capsys):
    assert run("--version") == cli.EXIT_OK
    assert "uqcal" in capsys.readouterr().out
