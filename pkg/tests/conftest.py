import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lpsparse.data import SyntheticConfig, generate_synthetic  # noqa: E402
from lpsparse.model import TrainConfig, train  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    cfg = SyntheticConfig(height=8, width=8, channels=3, num_classes=4, samples_per_class=20, noise=0.1)
    return generate_synthetic(cfg, 3, "train"), generate_synthetic(cfg, 3, "test")


@pytest.fixture(scope="session")
def small_model(small_data):
    train_set, _ = small_data
    return train(train_set, TrainConfig(epochs=15, seed=1))


# one line per acceptance criterion, printed at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'} - {detail}")
