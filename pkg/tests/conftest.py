import numpy as np
import pytest

from napc.dataio import SyntheticConfig, synth_generate
from napc.model import ModelSpec
from napc.trainer import TrainConfig, train

DESK_TRAIN_SEED = 1
DESK_TEST_SEED = 2


def desk_spec(cumsum=True) -> ModelSpec:
    return ModelSpec(input_dim=20, lstm_layers=2, lstm_units=16, num_classes=2, cumsum=cumsum)


@pytest.fixture(scope="session")
def desk_train():
    return synth_generate(SyntheticConfig(num_sequences=200, seed=DESK_TRAIN_SEED))


@pytest.fixture(scope="session")
def desk_test():
    return synth_generate(SyntheticConfig(num_sequences=200, seed=DESK_TEST_SEED))


@pytest.fixture(scope="session")
def desk_result(desk_train):
    return train(desk_train, desk_spec(True), TrainConfig())


@pytest.fixture(scope="session")
def desk_result_nocumsum(desk_train):
    return train(desk_train, desk_spec(False), TrainConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
