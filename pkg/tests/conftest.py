import numpy as np
import pytest

from bridgediff.data import make_pointcloud_dataset
from bridgediff.denoiser import DenoiserConfig
from bridgediff.numerics import make_rng
from bridgediff.training import TrainConfig, train_loop

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def record_criterion(request):
    """Store ``(passed, detail)`` for an acceptance criterion so the summary can print it."""
    results = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, title: str, passed: bool, detail: str):
        results[number] = (title, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  [{number}] {title}: {detail}")


@pytest.fixture(scope="session")
def small_points_model():
    """A briefly trained label-conditioned model on the two-mode point task."""
    data = make_pointcloud_dataset(1000, make_rng(100))
    cfg = TrainConfig(T=20, steps=400, batch=64, lr=3e-3, model=DenoiserConfig(hidden=32, token_dim=16, attn_dim=16, time_dim=16))
    return train_loop(cfg, data), data


@pytest.fixture
def rng():
    return np.random.default_rng(0)
