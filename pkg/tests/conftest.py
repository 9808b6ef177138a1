import os

import numpy as np
import pytest

import mepconnect
from mepconnect.classifier import MlpSpec, TrainConfig, init_model, make_dataset, train_adam
from mepconnect.diffcore import LayerParams

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
RINGS_CONFIG = os.path.join(ROOT, "configs", "rings.ini")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=mepconnect.available_backends())
def backend(request):
    previous = mepconnect.set_backend(request.param)
    yield request.param
    mepconnect.set_backend(previous)


def random_layers(rng, dims, scale=1.0):
    layers = []
    for k, (i, o) in enumerate(zip(dims[:-1], dims[1:])):
        act = "identity" if k == len(dims) - 2 else "relu"
        W = rng.normal(0.0, scale / np.sqrt(i), (o, i))
        layers.append(LayerParams(W, rng.normal(0.0, 0.1, o), act))
    return layers


@pytest.fixture(scope="session")
def rings_data():
    return make_dataset("rings", 400, seed=3)


@pytest.fixture(scope="session")
def rings_model(rings_data):
    model, trace = train_adam(init_model(MlpSpec((2, 32, 32, 2), 1)), rings_data,
                              TrainConfig(epochs=200))
    return model


@pytest.fixture(scope="session")
def blobs_data():
    return make_dataset("blobs", 200, seed=3)


@pytest.fixture(scope="session")
def blobs_model(blobs_data):
    model, _ = train_adam(init_model(MlpSpec((2, 8, 2), 1)), blobs_data, TrainConfig())
    return model
