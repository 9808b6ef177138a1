import numpy as np
import pytest

from mepconnect.checkpoint import (
    CLASSIFIER_MAGIC,
    decode_layers,
    encode_layers,
    load_model,
    save_model,
)
from mepconnect.classifier import MlpSpec, init_model
from mepconnect.errors import FormatError


@pytest.fixture
def model():
    m = init_model(MlpSpec((2, 5, 3, 2), 4))
    m.layers[0].bias[:] = np.linspace(-1, 1, 5)
    return m


def test_round_trip_is_bitwise(tmp_path, model):
    path = tmp_path / "m.cpth"
    save_model(model, path)
    assert load_model(path).same_as(model)


def test_header_layout(model):
    blob = encode_layers(CLASSIFIER_MAGIC, model.layers)
    assert blob[:4] == b"CPTH"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 3
    assert int.from_bytes(blob[12:16], "little") == 2
    assert int.from_bytes(blob[16:20], "little") == 5
    assert blob[20] == 1
    first_w = np.frombuffer(blob[21:29], "<f8")[0]
    assert first_w == model.layers[0].weights[0, 0]


def test_wrong_magic(tmp_path, model):
    path = tmp_path / "m.cpth"
    save_model(model, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="offset 0"):
        load_model(path)


def test_wrong_version(model):
    blob = bytearray(encode_layers(CLASSIFIER_MAGIC, model.layers))
    blob[4] = 9
    with pytest.raises(FormatError, match="version"):
        decode_layers(bytes(blob), CLASSIFIER_MAGIC)


@pytest.mark.parametrize("cut", [2, 6, 10, 20, 100, -1])
def test_truncated(tmp_path, model, cut):
    blob = encode_layers(CLASSIFIER_MAGIC, model.layers)
    path = tmp_path / "m.cpth"
    path.write_bytes(blob[:cut])
    with pytest.raises(FormatError, match="offset"):
        load_model(path)


def test_trailing_bytes(model):
    blob = encode_layers(CLASSIFIER_MAGIC, model.layers) + b"\0"
    with pytest.raises(FormatError, match="trailing"):
        decode_layers(blob, CLASSIFIER_MAGIC)
