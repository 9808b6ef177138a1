"""Fully connected decoders from a classifier layer back to input space.

Trained with Adam on mean squared reconstruction error. The defaults of
:class:`DecoderTrainConfig` are the first-hidden-layer settings (batch 32,
10 epochs, lr 1e-3); :meth:`DecoderTrainConfig.last_layer` gives batch 128,
5 epochs. Desk-scale datasets are small, so callers usually raise
``epochs``.
"""
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .checkpoint import DECODER_MAGIC, decode_layers, encode_layers
from .classifier import Adam, MlpModel, flat_grads, latent_batch
from .diffcore import (
    LayerParams,
    as_tensor,
    check_chain,
    flatten_params,
    forward_batch,
    mse_param_grads,
    unflatten_params,
)
from .errors import ContractError, DimensionError, TrainingError
from .pathfind import PathState, densify


@dataclass(frozen=True)
class DecoderSpec:
    latent_dim: int
    output_dim: int
    hidden_dims: Tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        dims = (self.latent_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ContractError(f"decoder dims must be positive, got {list(dims)}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    @property
    def layer_dims(self):
        return (self.latent_dim, *self.hidden_dims, self.output_dim)


@dataclass(frozen=True)
class DecoderTrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 10
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ContractError("decoder training needs lr >= 0 and positive batch size / epochs")
        if self.loss != "mse":
            raise ContractError(f"unsupported decoder loss {self.loss!r}")

    @classmethod
    def first_hidden(cls, **overrides):
        return replace(cls(batch_size=32, epochs=10), **overrides)

    @classmethod
    def last_layer(cls, **overrides):
        return replace(cls(batch_size=128, epochs=5), **overrides)


@dataclass(eq=False)
class DecoderModel:
    layers: list
    layer_index: int

    def __post_init__(self):
        check_chain(self.layers)

    @property
    def latent_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def same_as(self, other):
        return self.layer_index == other.layer_index and len(self.layers) == len(other.layers) \
            and all(a.same_as(b) for a, b in zip(self.layers, other.layers))


def init_decoder(spec: DecoderSpec, layer_index: int) -> DecoderModel:
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    layers = []
    for k, (i, o) in enumerate(zip(dims[:-1], dims[1:])):
        act = "identity" if k == len(dims) - 2 else "relu"
        layers.append(LayerParams(rng.standard_normal((o, i)) / np.sqrt(i), np.zeros(o), act))
    return DecoderModel(layers, layer_index)


def train_decoder(classifier: MlpModel, layer_index: int, data, spec: DecoderSpec,
                  cfg: DecoderTrainConfig = DecoderTrainConfig()):
    """Fit ``decode(latent(x, layer_index)) ~ x``; returns ``(decoder, trace)``."""
    if spec.latent_dim != classifier.latent_dim(layer_index):
        raise DimensionError(
            f"decoder latent dim {spec.latent_dim} != classifier layer {layer_index} "
            f"dim {classifier.latent_dim(layer_index)}"
        )
    if spec.output_dim != classifier.input_dim:
        raise DimensionError(
            f"decoder output dim {spec.output_dim} != classifier input dim {classifier.input_dim}"
        )
    X = as_tensor(data.points)
    Z = latent_batch(classifier, X, layer_index)
    dec = init_decoder(spec, layer_index)
    layers = list(dec.layers)
    params = flatten_params(layers)
    opt = Adam(params.size, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = mse_param_grads(layers, Z[idx], X[idx])
            params = opt.step(params, flat_grads(grads))
            layers = unflatten_params(layers, params)
            total += loss * len(idx)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingError(f"decoder training diverged at epoch {epoch}")
        trace.append(mean_loss)
    return DecoderModel(layers, layer_index), trace


def decode(decoder: DecoderModel, z) -> np.ndarray:
    z = as_tensor(z)
    if z.shape != (decoder.latent_dim,):
        raise DimensionError(f"expected latent shape [{decoder.latent_dim}], got {list(z.shape)}")
    return forward_batch(decoder.layers, z[None, :])[-1][0]


def decode_batch(decoder: DecoderModel, Z) -> np.ndarray:
    Z = as_tensor(Z)
    if Z.ndim != 2 or Z.shape[1] != decoder.latent_dim:
        raise DimensionError(f"expected latent rows of dim {decoder.latent_dim}, got {list(Z.shape)}")
    return forward_batch(decoder.layers, Z)[-1]


def reconstruction_mse(decoder: DecoderModel, classifier: MlpModel, X) -> float:
    X = as_tensor(X)
    out = decode_batch(decoder, latent_batch(classifier, X, decoder.layer_index))
    return float(np.mean((out - X) ** 2))


def decode_path(decoder: DecoderModel, path: PathState, M: int):
    """Decode every densified sample of ``path``; returns ``(t, decoded)``."""
    if path.dim != decoder.latent_dim:
        raise ContractError(
            f"path lives in dim {path.dim}, decoder expects {decoder.latent_dim}"
        )
    t, Z = densify(path, M)
    return t, decode_batch(decoder, Z)


def save_decoder(decoder: DecoderModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_layers(DECODER_MAGIC, decoder.layers, decoder.layer_index))


def load_decoder(path) -> DecoderModel:
    with open(path, "rb") as fh:
        layers, layer_index = decode_layers(fh.read(), DECODER_MAGIC)
    return DecoderModel(layers, layer_index)
