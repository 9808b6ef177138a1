"""The compiled and numpy kernels must agree to rounding."""
import numpy as np
import pytest

import mepconnect
from mepconnect import _pykernels

from conftest import random_layers

ckernels = pytest.importorskip("mepconnect._ckernels")


@pytest.fixture
def net():
    rng = np.random.default_rng(2)
    layers = random_layers(rng, [3, 17, 9, 4])
    W = [l.weights for l in layers]
    b = [l.bias for l in layers]
    relus = [l.relu for l in layers]
    X = np.ascontiguousarray(rng.normal(size=(23, 3)))
    t = rng.integers(0, 4, 23).astype(np.int64)
    return W, b, relus, X, t


def test_forward(net):
    W, b, relus, X, _ = net
    for a, c in zip(_pykernels.forward(W, b, relus, X), ckernels.forward(W, b, relus, X)):
        np.testing.assert_allclose(a, c, rtol=1e-13, atol=1e-14)


def test_fused_kernels(net):
    W, b, relus, X, t = net
    for name in ("ce_probs", "ce_input_grads"):
        for a, c in zip(getattr(_pykernels, name)(W, b, relus, X, t), getattr(ckernels, name)(W, b, relus, X, t)):
            np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-14)
    la, gWa, gba = _pykernels.ce_param_grads(W, b, relus, X, t)
    lc, gWc, gbc = ckernels.ce_param_grads(W, b, relus, X, t)
    assert la == pytest.approx(lc, rel=1e-13)
    for a, c in zip(gWa + gba, gWc + gbc):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-14)
    Y = np.ascontiguousarray(np.random.default_rng(0).normal(size=(23, 4)))
    la, gWa, gba = _pykernels.mse_param_grads(W, b, relus, X, Y)
    lc, gWc, gbc = ckernels.mse_param_grads(W, b, relus, X, Y)
    assert la == pytest.approx(lc, rel=1e-13)
    for a, c in zip(gWa + gba, gWc + gbc):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-14)


def test_rows_independent_of_batch(net):
    W, b, relus, X, t = net
    full = ckernels.ce_input_grads(W, b, relus, X, t)[1]
    for r in (0, 5, 22):
        one = ckernels.ce_input_grads(W, b, relus, np.ascontiguousarray(X[r:r + 1]), t[r:r + 1])[1]
        assert one.tobytes() == full[r:r + 1].tobytes()


def test_set_backend_round_trip():
    prev = mepconnect.set_backend("python")
    assert mepconnect.backend_name() == "python"
    mepconnect.set_backend(prev)
    with pytest.raises(ValueError):
        mepconnect.set_backend("fortran")
