"""Shared fixtures.

Training the default model takes about a minute and a half, so the result is
cached in pytest's cache directory keyed on the training configuration.
Training is deterministic, so a cached file is identical to a fresh one.
"""

import hashlib
import json

import numpy as np
import pytest

from aqcp.datagen import generate
from aqcp.model import AngleEncoder, AnsatzConfig, GridMap, TrainedModel, load_model, save_model
from aqcp.training import TrainConfig, train


def _train_default(epochs: int) -> TrainedModel:
    config = AnsatzConfig()
    data = generate(0, 1000, 0, 0)
    enc = AngleEncoder.initialise((1, 10, 10, config.num_parameters), seed=0)
    result = train(data.train, enc, config, TrainConfig(epochs=epochs))
    return TrainedModel(result.encoder, config, GridMap(), {"loss_history": result.loss_history})


@pytest.fixture(scope="session")
def trained_model(request) -> TrainedModel:
    tc = TrainConfig()
    key = hashlib.sha256(json.dumps(repr(tc)).encode()).hexdigest()[:12]
    cache_dir = request.config.cache.mkdir("aqcp-model")
    path = cache_dir / f"model-{key}.json"
    if path.is_file():
        return load_model(path)
    model = _train_default(tc.epochs)
    save_model(path, model)
    return model


@pytest.fixture
def small_config() -> AnsatzConfig:
    return AnsatzConfig(num_qubits=3, num_layers=2)


@pytest.fixture
def random_encoder(small_config) -> AngleEncoder:
    return AngleEncoder.initialise((1, 4, small_config.num_parameters), seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
