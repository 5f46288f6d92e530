import numpy as np
import pytest

from synthetic import synthetic
from uq_core.batch import RecordBatch
from uq_core.schemas import Axis, PredictionRecord


def make_records(scores, axis=Axis.X, sigma=1.0):
    """
    Записи, у которых мера несоответствия равна заданным числам:
    y_true = 0, sigma фиксирована, y_hat = score * sigma.
    """
    return [
        PredictionRecord(
            sample_id=f"s{i:05d}", axis=axis, y_true=0.0, y_hat=score * sigma, sigma=sigma
        )
        for i, score in enumerate(scores)
    ]


@pytest.fixture
def nine_scores():
    return make_records(range(1, 10))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_batch(rng):
    n = 200
    y_true = rng.uniform(-10, 10, n)
    sigma = rng.uniform(0.1, 2.0, n)
    return RecordBatch(
        axis=Axis.Y,
        sample_ids=[f"s{i:05d}" for i in range(n)],
        y_true=y_true,
        y_hat=y_true + sigma * rng.standard_normal(n),
        sigma=sigma,
    )


@pytest.fixture(scope="session")
def small_trial():
    return synthetic.run_trial(
        synthetic.SimConfig(seed=7, n_samples=400, n_passes=10, calib_fraction=0.5)
    )
