"""Dense float64 arithmetic and exact reverse-mode gradients for MLPs.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. A network is a
list of :class:`LayerParams`; hidden layers use ReLU and the final layer is
the identity, producing logits.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import _backend
from .errors import ContractError, DimensionError, NumericError

ACTIVATIONS = ("identity", "relu")


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        W = as_tensor(self.weights)
        b = as_tensor(self.bias)
        if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
            raise DimensionError(
                f"weights shape {W.shape} inconsistent with bias shape {b.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def relu(self) -> bool:
        return self.activation == "relu"

    def same_as(self, other: "LayerParams") -> bool:
        """Bitwise equality of parameters and activation."""
        return (
            self.activation == other.activation
            and self.weights.shape == other.weights.shape
            and self.weights.tobytes() == other.weights.tobytes()
            and self.bias.tobytes() == other.bias.tobytes()
        )


@dataclass
class GradResult:
    loss: float
    grad_input: Optional[np.ndarray] = None
    grad_params: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None


def _unpack(layers: Sequence[LayerParams]):
    if not layers:
        raise ContractError("network needs at least one layer")
    return (
        [layer.weights for layer in layers],
        [layer.bias for layer in layers],
        [layer.relu for layer in layers],
    )


def check_chain(layers: Sequence[LayerParams]) -> None:
    for k in range(1, len(layers)):
        if layers[k].in_dim != layers[k - 1].out_dim:
            raise DimensionError(
                f"layer {k - 1} outputs {layers[k - 1].out_dim} values "
                f"but layer {k} expects {layers[k].in_dim}"
            )


def _batch(layers, X) -> np.ndarray:
    X = as_tensor(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != layers[0].in_dim:
        raise DimensionError(
            f"input shape {tuple(X.shape)} does not match layer input dim [{layers[0].in_dim}]"
        )
    return X


def forward_affine(x, layer: LayerParams) -> np.ndarray:
    """``W @ x + b`` followed by the layer activation."""
    x = as_tensor(x)
    if x.shape != (layer.in_dim,):
        raise DimensionError(
            f"input shape {list(x.shape)} does not match weights shape {list(layer.weights.shape)}"
        )
    return _backend.kernels.forward(
        [layer.weights], [layer.bias], [layer.relu], x[None, :]
    )[0][0]


def forward_batch(layers: Sequence[LayerParams], X) -> List[np.ndarray]:
    """Outputs of every layer for a batch ``X`` of shape ``(n, in_dim)``.

    An empty layer list returns ``[X]`` so callers can treat the identity
    map uniformly.
    """
    if len(layers) == 0:
        return [as_tensor(X)]
    X = _batch(layers, X)
    W, b, relus = _unpack(layers)
    return _backend.kernels.forward(W, b, relus, X)


def softmax_probs(logits) -> np.ndarray:
    logits = as_tensor(logits)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ContractError(f"softmax needs K >= 2 logits, got shape {list(logits.shape)}")
    return _backend.kernels.softmax_rows(logits[None, :])[0]


def softmax_batch(logits) -> np.ndarray:
    return _backend.kernels.softmax_rows(as_tensor(logits))


def _targets(targets, n, K) -> np.ndarray:
    t = np.ascontiguousarray(np.broadcast_to(np.asarray(targets, dtype=np.int64), (n,)))
    if t.size and (t.min() < 0 or t.max() >= K):
        raise ContractError(f"target class out of range for K={K}: {t.tolist()}")
    return t


def cross_entropy(logits, target: int) -> float:
    """``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ContractError(f"cross entropy needs K >= 2 logits, got shape {list(logits.shape)}")
    t = _targets(target, 1, logits.shape[0])
    return float(_backend.kernels.cross_entropy_rows(logits[None, :], t)[0])


def loss_and_input_grads(layers: Sequence[LayerParams], Z, targets):
    """Per-row cross-entropy losses and input gradients for a batch ``Z``."""
    Z = _batch(layers, Z)
    W, b, relus = _unpack(layers)
    t = _targets(targets, Z.shape[0], layers[-1].out_dim)
    return _backend.kernels.ce_input_grads(W, b, relus, Z, t)


def loss_and_probs(layers: Sequence[LayerParams], Z, targets):
    """Per-row cross-entropy losses and softmax probabilities for a batch ``Z``."""
    Z = _batch(layers, Z)
    W, b, relus = _unpack(layers)
    t = _targets(targets, Z.shape[0], layers[-1].out_dim)
    return _backend.kernels.ce_probs(W, b, relus, Z, t)


def grad_wrt_input(layers: Sequence[LayerParams], z, target: int) -> GradResult:
    """Exact gradient of ``cross_entropy(f(z), target)`` with respect to ``z``."""
    z = as_tensor(z)
    if z.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {list(z.shape)}")
    losses, grad = loss_and_input_grads(layers, z, target)
    return GradResult(loss=float(losses[0]), grad_input=grad[0])


def grad_wrt_params(layers: Sequence[LayerParams], batch) -> GradResult:
    """Mean-over-batch cross-entropy gradients for every weight and bias.

    ``batch`` is a sequence of ``(x, class_index)`` pairs or an ``(X, y)``
    tuple of arrays.
    """
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        X, y = batch
    else:
        if len(batch) == 0:
            raise ContractError("empty batch")
        X = np.stack([as_tensor(x) for x, _ in batch])
        y = [t for _, t in batch]
    if len(X) == 0:
        raise ContractError("empty batch")
    X = _batch(layers, X)
    W, b, relus = _unpack(layers)
    t = _targets(y, X.shape[0], layers[-1].out_dim)
    loss, gW, gb = _backend.kernels.ce_param_grads(W, b, relus, X, t)
    return GradResult(loss=float(loss), grad_params=list(zip(gW, gb)))


def mse_param_grads(layers: Sequence[LayerParams], X, Y):
    """Mean squared error over all output entries and its parameter gradients."""
    X = _batch(layers, X)
    Y = as_tensor(Y)
    if Y.shape != (X.shape[0], layers[-1].out_dim):
        raise DimensionError(f"targets shape {list(Y.shape)} does not match outputs")
    W, b, relus = _unpack(layers)
    loss, gW, gb = _backend.kernels.mse_param_grads(W, b, relus, X, Y)
    return float(loss), list(zip(gW, gb))


def flatten_params(layers: Sequence[LayerParams]) -> np.ndarray:
    return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in layers])


def unflatten_params(layers: Sequence[LayerParams], flat) -> List[LayerParams]:
    """Layers with the same shapes and activations as ``layers``, values from ``flat``."""
    flat = as_tensor(flat)
    out, pos = [], 0
    for l in layers:
        nw, nb = l.weights.size, l.bias.size
        W = flat[pos:pos + nw].reshape(l.weights.shape)
        b = flat[pos + nw:pos + nw + nb]
        pos += nw + nb
        out.append(LayerParams(W, b, l.activation))
    if pos != flat.size:
        raise DimensionError(f"parameter vector has {flat.size} entries, network needs {pos}")
    return out


def fd_gradient(f: Callable[[np.ndarray], float], z, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``z``."""
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    z = as_tensor(z)
    grad = np.empty_like(z)
    flat_z = z.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_z.size):
        zp = flat_z.copy()
        zm = flat_z.copy()
        zp[i] += eps
        zm[i] -= eps
        fp = f(zp.reshape(z.shape))
        fm = f(zm.reshape(z.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        flat_g[i] = (fp - fm) / (2.0 * eps)
    return grad
