"""Small feed-forward classifiers: build, train, hook into layers, datasets.

Layer index convention: ``l = 0`` is the raw input, ``l = k`` is the
post-ReLU output of hidden layer ``k``. ``latent(x, l)`` evaluates the first
``l`` layers and ``partial_forward(z, l)`` the rest, so the two compose to
the full network.
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .diffcore import (
    LayerParams,
    as_tensor,
    check_chain,
    flatten_params,
    forward_batch,
    grad_wrt_params,
    softmax_batch,
    unflatten_params,
)
from .errors import ContractError, DimensionError, TrainingError

DATASET_KINDS = ("blobs", "rings", "moons")


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: Tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ContractError(f"invalid layer dims {list(dims)}")
        if dims[-1] < 2:
            raise ContractError(f"need at least 2 classes, got {dims[-1]}")
        if self.seed < 0:
            raise ContractError("seed must be unsigned")
        object.__setattr__(self, "layer_dims", dims)


@dataclass(eq=False)
class MlpModel:
    layers: List[LayerParams]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("model needs at least one layer")
        check_chain(self.layers)
        if self.layers[-1].out_dim < 2:
            raise ContractError("final layer must produce at least 2 logits")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_hidden(self) -> int:
        return len(self.layers) - 1

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def layer_dims(self) -> List[int]:
        return [self.input_dim] + [l.out_dim for l in self.layers]

    def latent_dim(self, layer_index: int) -> int:
        self._check_index(layer_index)
        return self.layer_dims[layer_index]

    def same_as(self, other: "MlpModel") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.same_as(b) for a, b in zip(self.layers, other.layers)
        )

    def _check_index(self, layer_index: int) -> None:
        if not 0 <= layer_index <= self.num_hidden:
            raise ContractError(
                f"layer index {layer_index} outside [0, {self.num_hidden}]"
            )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch_size and epochs must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ContractError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ContractError("adam_eps must be positive")


@dataclass(eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __len__(self):
        return len(self.labels)


def init_model(spec: MlpSpec) -> MlpModel:
    """Gaussian weights with std ``1/sqrt(in_dim)``, zero biases."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    layers = []
    for k, (i, o) in enumerate(zip(dims[:-1], dims[1:])):
        W = rng.standard_normal((o, i)) / np.sqrt(i)
        act = "identity" if k == len(dims) - 2 else "relu"
        layers.append(LayerParams(W, np.zeros(o), act))
    return MlpModel(layers)


def forward(model: MlpModel, x) -> np.ndarray:
    """Full-network logits for a single input."""
    return forward_batch(model.layers, _vector(model.input_dim, x))[-1][0]


def latent(model: MlpModel, x, layer_index: int) -> np.ndarray:
    model._check_index(layer_index)
    x = _vector(model.input_dim, x)
    return forward_batch(model.layers[:layer_index], x[None, :])[-1][0]


def partial_forward(model: MlpModel, z, layer_index: int) -> np.ndarray:
    """Logits obtained by running layers ``layer_index + 1 .. L`` on ``z``."""
    model._check_index(layer_index)
    z = _vector(model.latent_dim(layer_index), z)
    return forward_batch(model.layers[layer_index:], z[None, :])[-1][0]


def latent_batch(model: MlpModel, X, layer_index: int) -> np.ndarray:
    model._check_index(layer_index)
    return forward_batch(model.layers[:layer_index], _rows(model.input_dim, X))[-1]


def partial_forward_batch(model: MlpModel, Z, layer_index: int) -> np.ndarray:
    model._check_index(layer_index)
    Z = _rows(model.latent_dim(layer_index), Z)
    return forward_batch(model.layers[layer_index:], Z)[-1]


def predict(model: MlpModel, x):
    """``(class, probs)``; ties go to the lowest class index."""
    probs = softmax_batch(forward(model, x)[None, :])[0]
    return int(np.argmax(probs)), probs


def predict_batch(model: MlpModel, X, layer_index: int = 0):
    probs = softmax_batch(partial_forward_batch(model, X, layer_index))
    return np.argmax(probs, axis=1), probs


def accuracy(model: MlpModel, data: Dataset) -> float:
    classes, _ = predict_batch(model, data.points)
    return float(np.mean(classes == data.labels))


def _vector(dim, x) -> np.ndarray:
    x = as_tensor(x)
    if x.shape != (dim,):
        raise DimensionError(f"expected shape [{dim}], got {list(x.shape)}")
    return x


def _rows(dim, X) -> np.ndarray:
    X = as_tensor(X)
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionError(f"expected shape [n, {dim}], got {list(X.shape)}")
    return X


class Adam:
    """Adam over one flat parameter vector; each step returns a new vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def flat_grads(grad_params) -> np.ndarray:
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grad_params])


def train_adam(model: MlpModel, data: Dataset, cfg: TrainConfig = TrainConfig()):
    """Mini-batch Adam on mean cross-entropy.

    Returns ``(trained_model, trace)`` where ``trace`` holds the mean training
    loss of each epoch. The input model is not modified.
    """
    if len(data) == 0:
        raise ContractError("empty dataset")
    X = _rows(model.input_dim, data.points)
    y = np.asarray(data.labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    layers = list(model.layers)
    params = flatten_params(layers)
    opt = Adam(params.size, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    n = len(y)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            res = grad_wrt_params(layers, (X[idx], y[idx]))
            params = opt.step(params, flat_grads(res.grad_params))
            layers = unflatten_params(layers, params)
            total += res.loss * len(idx)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingError(f"training diverged at epoch {epoch}: loss {mean_loss}")
        trace.append(mean_loss)
    return MlpModel(layers), trace


def _split_counts(n, k):
    return [n // k + (1 if c < n % k else 0) for c in range(k)]


def _annulus(rng, count, r_in, r_out):
    theta = rng.uniform(0.0, 2.0 * np.pi, count)
    r = np.sqrt(rng.uniform(r_in ** 2, r_out ** 2, count))
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def make_dataset(kind: str, n: int, params=None, seed: int = 0) -> Dataset:
    """Synthetic two-class 2-D datasets; ``n`` is the total point count.

    ``blobs``: Gaussian clusters at ``(+-separation/2, 0)`` with std ``noise``.
    ``rings``: class 0 uniform in the disk ``|z| < inner``, class 1 uniform in
    the annulus ``band_low < |z| < band_high``.
    ``moons``: two interleaved half circles with Gaussian ``noise``.
    All coordinates are clipped to [-3, 3].
    """
    if kind not in DATASET_KINDS:
        raise ContractError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if n < 4:
        raise ContractError(f"need at least 2 points per class, got n={n}")
    rng = np.random.default_rng(seed)
    counts = _split_counts(n, 2)
    if kind == "blobs":
        p = {"separation": 3.0, "noise": 0.3, **(params or {})}
        half = p["separation"] / 2.0
        parts = [
            rng.normal(0.0, p["noise"], (c, 2)) + [sign * half, 0.0]
            for c, sign in zip(counts, (-1.0, 1.0))
        ]
    elif kind == "rings":
        p = {"inner": 1.0, "band_low": 1.25, "band_high": 2.0, **(params or {})}
        if not 0 < p["inner"] <= p["band_low"] < p["band_high"]:
            raise ContractError(f"inconsistent ring radii {p}")
        parts = [
            _annulus(rng, counts[0], 0.0, p["inner"]),
            _annulus(rng, counts[1], p["band_low"], p["band_high"]),
        ]
        for k, lo, hi in ((0, 0.0, p["inner"]), (1, p["band_low"], p["band_high"])):
            # open intervals; redraw the measure-zero boundary hits
            norms = np.linalg.norm(parts[k], axis=1)
            bad = (norms >= hi) | (norms <= lo) if k else norms >= hi
            while bad.any():
                parts[k][bad] = _annulus(rng, int(bad.sum()), lo, hi)
                norms = np.linalg.norm(parts[k], axis=1)
                bad = (norms >= hi) | (norms <= lo) if k else norms >= hi
    else:
        p = {"noise": 0.1, **(params or {})}
        t0 = rng.uniform(0.0, np.pi, counts[0])
        t1 = rng.uniform(0.0, np.pi, counts[1])
        upper = np.column_stack([np.cos(t0), np.sin(t0)])
        lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        parts = [
            upper - [0.5, 0.25] + rng.normal(0.0, p["noise"], upper.shape),
            lower - [0.5, 0.25] + rng.normal(0.0, p["noise"], lower.shape),
        ]
    points = np.clip(np.vstack(parts), -3.0, 3.0)
    labels = np.repeat(np.arange(2, dtype=np.int64), counts)
    return Dataset(np.ascontiguousarray(points), labels, kind, p, seed)
