import numpy as np
import pytest

from mepconnect.classifier import latent_batch, make_dataset
from mepconnect.decoder import (
    DecoderModel,
    DecoderSpec,
    DecoderTrainConfig,
    decode,
    decode_path,
    init_decoder,
    load_decoder,
    reconstruction_mse,
    save_decoder,
    train_decoder,
)
from mepconnect.diffcore import LayerParams
from mepconnect.errors import ContractError, DimensionError, FormatError
from mepconnect.pathfind import densify, straight_line_path


@pytest.fixture(scope="module")
def identity_decoder(rings_model, rings_data):
    dec, trace = train_decoder(rings_model, 0, rings_data, DecoderSpec(2, 2, ()),
                               DecoderTrainConfig.first_hidden(epochs=200))
    return dec, trace


def test_table_defaults():
    first, last = DecoderTrainConfig.first_hidden(), DecoderTrainConfig.last_layer()
    assert (first.batch_size, first.epochs, first.learning_rate, first.loss) == (32, 10, 0.001, "mse")
    assert (last.batch_size, last.epochs, last.learning_rate, last.loss) == (128, 5, 0.001, "mse")


def test_identity_decoding(identity_decoder, rings_model, rings_data):
    dec, trace = identity_decoder
    assert trace[-1] < 1e-4
    assert reconstruction_mse(dec, rings_model, rings_data.points) < 1e-4
    x = rings_data.points[7]
    assert np.mean((decode(dec, x) - x) ** 2) < 1e-4


def test_zero_learning_rate(rings_model, rings_data):
    spec = DecoderSpec(32, 2, (8,), seed=2)
    dec, _ = train_decoder(rings_model, 2, rings_data, spec, DecoderTrainConfig(learning_rate=0.0, epochs=2))
    assert dec.same_as(init_decoder(spec, 2))


def test_deterministic(rings_model, rings_data):
    spec = DecoderSpec(32, 2, (8,), seed=1)
    cfg = DecoderTrainConfig.last_layer(epochs=3, seed=4)
    a, ta = train_decoder(rings_model, 2, rings_data, spec, cfg)
    b, tb = train_decoder(rings_model, 2, rings_data, spec, cfg)
    assert a.same_as(b) and ta == tb


def test_dimension_checks(rings_model, rings_data):
    with pytest.raises(DimensionError):
        train_decoder(rings_model, 1, rings_data, DecoderSpec(2, 2, ()))
    with pytest.raises(DimensionError):
        train_decoder(rings_model, 1, rings_data, DecoderSpec(32, 3, ()))


def test_zero_weight_decoder_outputs_bias():
    dec = DecoderModel([LayerParams(np.zeros((2, 5)), [0.5, -0.25])], 1)
    np.testing.assert_array_equal(decode(dec, np.arange(5.0)), [0.5, -0.25])
    with pytest.raises(DimensionError):
        decode(dec, np.zeros(4))


def test_decode_path_shapes(rings_model, identity_decoder):
    dec, _ = identity_decoder
    path = straight_line_path([1.6, 0.2], [-0.4, 1.7], 5)
    t, X = decode_path(dec, path, 4)
    assert len(t) == len(densify(path, 4)[0]) == X.shape[0] and X.shape[1] == 2
    const = straight_line_path([0.3, 0.3], [0.3, 0.3], 3)
    _, C = decode_path(dec, const, 2)
    assert np.all(C == C[0])
    with pytest.raises(ContractError):
        decode_path(dec, straight_line_path(np.zeros(3), np.ones(3), 2), 2)


def test_identity_decoded_path_collinear(identity_decoder):
    dec, trace = identity_decoder
    a, b = np.array([1.6, 0.2]), np.array([-0.4, 1.7])
    _, X = decode_path(dec, straight_line_path(a, b, 5), 4)
    d = (b - a) / np.linalg.norm(b - a)
    off_line = (X[:, 0] - a[0]) * d[1] - (X[:, 1] - a[1]) * d[0]
    assert np.max(np.abs(off_line)) < 3 * np.sqrt(trace[-1]) + 1e-9


def test_identity_decoder_final_epochs_non_increasing(identity_decoder):
    _, trace = identity_decoder
    assert np.all(np.diff(trace[-20:]) <= 0)


@pytest.mark.xfail(strict=True, reason="mini-batch Adam at lr 1e-3 oscillates by ~1e-4 around "
                                       "MSE 2e-3 on the last-layer decoder; the tail is not monotone")
def test_last_layer_decoder_final_epochs_non_increasing(rings_model, rings_data):
    spec = DecoderSpec(32, 2, (64, 64))
    dec, trace = train_decoder(rings_model, 2, rings_data, spec, DecoderTrainConfig.last_layer(epochs=200))
    assert np.all(np.diff(trace[-20:]) <= 0)


def test_checkpoint_round_trip(tmp_path, identity_decoder):
    dec, _ = identity_decoder
    path = tmp_path / "d.cptd"
    save_decoder(dec, path)
    back = load_decoder(path)
    assert back.same_as(dec) and back.layer_index == 0
    assert path.read_bytes()[:4] == b"CPTD"
    with pytest.raises(FormatError):
        from mepconnect.checkpoint import load_model
        load_model(path)
