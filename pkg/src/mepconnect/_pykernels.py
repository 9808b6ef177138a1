"""Pure numpy implementation of the dense MLP kernels.

Every function works on a batch of row vectors ``X`` of shape ``(n, d)``.
The compiled module ``_ckernels`` exposes the same functions with the
same signatures; :mod:`mepconnect._backend` picks one at import time.
Callers pass C-contiguous float64 arrays and int64 targets.
"""
import numpy as np

NAME = "python"


def forward(weights, biases, relus, X):
    """Return the list of layer outputs (post-activation) for batch ``X``."""
    acts = []
    a = X
    for W, b, relu in zip(weights, biases, relus):
        a = a @ W.T + b
        if relu:
            a = np.maximum(a, 0.0)
        acts.append(a)
    return acts


def softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_rows(logits, targets):
    m = logits.max(axis=1)
    rows = np.arange(logits.shape[0])
    # (m - l_t) + log(sum) keeps equal logits at exactly log(K)
    return (m - logits[rows, targets]) + np.log(np.exp(logits - m[:, None]).sum(axis=1))


def backprop(weights, relus, X, acts, delta, param_scale):
    """Push the output gradient ``delta`` back through the stack.

    Returns ``(grad_X, grad_W, grad_b)``. Parameter gradients are summed over
    rows and multiplied by ``param_scale``; they are skipped (empty lists)
    when ``param_scale`` is zero.
    """
    need_params = param_scale != 0.0
    grad_W = [None] * len(weights)
    grad_b = [None] * len(weights)
    for j in range(len(weights) - 1, -1, -1):
        prev = acts[j - 1] if j > 0 else X
        if need_params:
            grad_W[j] = (delta.T @ prev) * param_scale
            grad_b[j] = delta.sum(axis=0) * param_scale
        delta = delta @ weights[j]
        if j > 0 and relus[j - 1]:
            delta = delta * (prev > 0.0)
    if not need_params:
        return delta, [], []
    return delta, grad_W, grad_b


def _ce_delta(logits, targets):
    delta = softmax_rows(logits)
    delta[np.arange(len(targets)), targets] -= 1.0
    return delta


def ce_probs(weights, biases, relus, X, targets):
    logits = forward(weights, biases, relus, X)[-1]
    return cross_entropy_rows(logits, targets), softmax_rows(logits)


def ce_input_grads(weights, biases, relus, X, targets):
    acts = forward(weights, biases, relus, X)
    losses = cross_entropy_rows(acts[-1], targets)
    grad, _, _ = backprop(weights, relus, X, acts, _ce_delta(acts[-1], targets), 0.0)
    return losses, grad


def ce_param_grads(weights, biases, relus, X, targets):
    acts = forward(weights, biases, relus, X)
    n = X.shape[0]
    loss = float(cross_entropy_rows(acts[-1], targets).mean())
    _, gW, gb = backprop(weights, relus, X, acts, _ce_delta(acts[-1], targets), 1.0 / n)
    return loss, gW, gb


def mse_param_grads(weights, biases, relus, X, Y):
    acts = forward(weights, biases, relus, X)
    diff = acts[-1] - Y
    loss = float(np.mean(diff * diff))
    _, gW, gb = backprop(weights, relus, X, acts, diff * (2.0 / diff.shape[1]), 1.0 / X.shape[0])
    return loss, gW, gb
