# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense MLP kernels; same surface as ``_pykernels``.

The fused kernels walk one input row at a time through the whole stack
(forward, loss, backward) using a small scratch buffer, which avoids the
per-layer temporaries that dominate numpy at these widths.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log
from libc.stdlib cimport free, malloc
from libc.string cimport memset

cnp.import_array()

NAME = "cython"


cdef struct Net:
    int L
    double** W
    double** b
    int* relu
    Py_ssize_t* dims      # L + 1 entries
    Py_ssize_t* offs      # scratch offset of each layer output
    Py_ssize_t width      # widest layer
    Py_ssize_t total      # sum of layer output widths


cdef double* _ptr(cnp.ndarray a):
    return <double*> cnp.PyArray_DATA(a)


cdef Net _net(list weights, list biases, relus) except *:
    cdef Net net
    cdef int L = len(weights), j
    net.L = L
    net.W = <double**> malloc(L * sizeof(double*))
    net.b = <double**> malloc(L * sizeof(double*))
    net.relu = <int*> malloc(L * sizeof(int))
    net.dims = <Py_ssize_t*> malloc((L + 1) * sizeof(Py_ssize_t))
    net.offs = <Py_ssize_t*> malloc(L * sizeof(Py_ssize_t))
    net.dims[0] = (<cnp.ndarray> weights[0]).shape[1]
    net.width = net.dims[0]
    net.total = 0
    for j in range(L):
        net.W[j] = _ptr(weights[j])
        net.b[j] = _ptr(biases[j])
        net.relu[j] = 1 if relus[j] else 0
        net.dims[j + 1] = (<cnp.ndarray> weights[j]).shape[0]
        net.offs[j] = net.total
        net.total += net.dims[j + 1]
        if net.dims[j + 1] > net.width:
            net.width = net.dims[j + 1]
    return net


cdef void _free(Net* net) noexcept:
    free(net.W)
    free(net.b)
    free(net.relu)
    free(net.dims)
    free(net.offs)


cdef inline void _affine(const double* W, const double* b, const double* x, double* out,
                         Py_ssize_t d, Py_ssize_t o, int relu) noexcept nogil:
    cdef Py_ssize_t k, i
    cdef double s
    cdef const double* row
    for k in range(o):
        s = b[k]
        row = W + k * d
        for i in range(d):
            s = s + row[i] * x[i]
        if relu and s < 0.0:
            s = 0.0
        out[k] = s


cdef inline void _row_forward(Net* net, const double* x, double* scratch) noexcept nogil:
    cdef int j
    cdef const double* a = x
    for j in range(net.L):
        _affine(net.W[j], net.b[j], a, scratch + net.offs[j], net.dims[j], net.dims[j + 1], net.relu[j])
        a = scratch + net.offs[j]


cdef inline double _softmax_ce(const double* z, Py_ssize_t K, long t, double* p) noexcept nogil:
    """Fill ``p`` with softmax(z); return cross-entropy at class ``t`` (t < 0: skip)."""
    cdef Py_ssize_t k
    cdef double m = z[0], tot = 0.0
    for k in range(1, K):
        if z[k] > m:
            m = z[k]
    for k in range(K):
        p[k] = exp(z[k] - m)
        tot = tot + p[k]
    for k in range(K):
        p[k] = p[k] / tot
    if t < 0:
        return 0.0
    return (m - z[t]) + log(tot)


cdef void _row_backward(Net* net, const double* x, const double* scratch, double* delta,
                        double* spare, double* grad_x, double** gW, double** gb) noexcept nogil:
    """Backprop ``delta`` (output gradient, overwritten) down to the input.

    Accumulates parameter gradients when ``gW`` is not NULL; writes the input
    gradient when ``grad_x`` is not NULL.
    """
    cdef int j
    cdef Py_ssize_t k, i, d, o
    cdef const double* prev
    cdef const double* Wrow
    cdef double* gWrow
    cdef double* tmp
    cdef double dk
    for j in range(net.L - 1, -1, -1):
        d = net.dims[j]
        o = net.dims[j + 1]
        prev = x if j == 0 else scratch + net.offs[j - 1]
        if gW != NULL:
            for k in range(o):
                dk = delta[k]
                gb[j][k] += dk
                gWrow = gW[j] + k * d
                for i in range(d):
                    gWrow[i] += dk * prev[i]
        if j == 0 and grad_x == NULL:
            break
        tmp = grad_x if j == 0 else spare
        memset(tmp, 0, d * sizeof(double))
        for k in range(o):
            dk = delta[k]
            Wrow = net.W[j] + k * d
            for i in range(d):
                tmp[i] += dk * Wrow[i]
        if j > 0 and net.relu[j - 1]:
            for i in range(d):
                if not (prev[i] > 0.0):
                    tmp[i] = 0.0
        if j > 0:
            spare = delta
            delta = tmp


def forward(list weights, list biases, relus, cnp.ndarray X):
    cdef Net net = _net(weights, biases, relus)
    cdef Py_ssize_t n = X.shape[0], r
    cdef int j
    outs = [np.empty((n, net.dims[j + 1])) for j in range(net.L)]
    cdef double** optr = <double**> malloc(net.L * sizeof(double*))
    cdef const double* a
    cdef const double* xp = _ptr(X)
    try:
        for j in range(net.L):
            optr[j] = _ptr(outs[j])
        with nogil:
            for r in range(n):
                a = xp + r * net.dims[0]
                for j in range(net.L):
                    _affine(net.W[j], net.b[j], a, optr[j] + r * net.dims[j + 1],
                            net.dims[j], net.dims[j + 1], net.relu[j])
                    a = optr[j] + r * net.dims[j + 1]
    finally:
        free(optr)
        _free(&net)
    return outs


def softmax_rows(cnp.ndarray logits):
    cdef Py_ssize_t n = logits.shape[0], K = logits.shape[1], r
    out = np.empty((n, K))
    cdef double* p = _ptr(out)
    cdef const double* z = _ptr(logits)
    with nogil:
        for r in range(n):
            _softmax_ce(z + r * K, K, -1, p + r * K)
    return out


def cross_entropy_rows(cnp.ndarray logits, cnp.ndarray targets):
    cdef Py_ssize_t n = logits.shape[0], K = logits.shape[1], r
    out = np.empty(n)
    cdef double* o = _ptr(out)
    cdef const double* z = _ptr(logits)
    cdef const long* t = <const long*> cnp.PyArray_DATA(targets)
    cdef double* p = <double*> malloc(K * sizeof(double))
    with nogil:
        for r in range(n):
            o[r] = _softmax_ce(z + r * K, K, t[r], p)
    free(p)
    return out


def ce_probs(list weights, list biases, relus, cnp.ndarray X, cnp.ndarray targets):
    """Per-row cross-entropy and class probabilities."""
    cdef Net net = _net(weights, biases, relus)
    cdef Py_ssize_t n = X.shape[0], K = net.dims[net.L], d0 = net.dims[0], r
    losses = np.empty(n)
    probs = np.empty((n, K))
    cdef double* lp = _ptr(losses)
    cdef double* pp = _ptr(probs)
    cdef const double* xp = _ptr(X)
    cdef const long* t = <const long*> cnp.PyArray_DATA(targets)
    cdef double* scratch = <double*> malloc(net.total * sizeof(double))
    cdef double* logits = scratch + net.offs[net.L - 1]
    try:
        with nogil:
            for r in range(n):
                _row_forward(&net, xp + r * d0, scratch)
                lp[r] = _softmax_ce(logits, K, t[r], pp + r * K)
    finally:
        free(scratch)
        _free(&net)
    return losses, probs


def ce_input_grads(list weights, list biases, relus, cnp.ndarray X, cnp.ndarray targets):
    """Per-row cross-entropy and its gradient with respect to each input row."""
    cdef Net net = _net(weights, biases, relus)
    cdef Py_ssize_t n = X.shape[0], K = net.dims[net.L], d0 = net.dims[0], r, k
    losses = np.empty(n)
    grads = np.empty((n, d0))
    cdef double* lp = _ptr(losses)
    cdef double* gp = _ptr(grads)
    cdef const double* xp = _ptr(X)
    cdef const long* t = <const long*> cnp.PyArray_DATA(targets)
    cdef double* scratch = <double*> malloc((net.total + 2 * net.width) * sizeof(double))
    cdef double* delta = scratch + net.total
    cdef double* spare = delta + net.width
    cdef double* logits = scratch + net.offs[net.L - 1]
    try:
        with nogil:
            for r in range(n):
                _row_forward(&net, xp + r * d0, scratch)
                lp[r] = _softmax_ce(logits, K, t[r], delta)
                delta[t[r]] -= 1.0
                _row_backward(&net, xp + r * d0, scratch, delta, spare, gp + r * d0, NULL, NULL)
    finally:
        free(scratch)
        _free(&net)
    return losses, grads


cdef tuple _param_grads(list weights, list biases, relus, cnp.ndarray X, cnp.ndarray targets,
                        cnp.ndarray Y):
    cdef Net net = _net(weights, biases, relus)
    cdef Py_ssize_t n = X.shape[0], K = net.dims[net.L], d0 = net.dims[0], r, k, j
    cdef bint mse = Y is not None
    gWs = [np.zeros_like(w) for w in weights]
    gbs = [np.zeros_like(b) for b in biases]
    cdef double** gW = <double**> malloc(net.L * sizeof(double*))
    cdef double** gb = <double**> malloc(net.L * sizeof(double*))
    for j in range(net.L):
        gW[j] = _ptr(gWs[j])
        gb[j] = _ptr(gbs[j])
    cdef const double* xp = _ptr(X)
    cdef const long* t = NULL
    cdef const double* yp = NULL
    if mse:
        yp = _ptr(Y)
    else:
        t = <const long*> cnp.PyArray_DATA(targets)
    cdef double* scratch = <double*> malloc((net.total + 2 * net.width) * sizeof(double))
    cdef double* delta = scratch + net.total
    cdef double* spare = delta + net.width
    cdef double* out = scratch + net.offs[net.L - 1]
    cdef double total = 0.0, diff, row_loss, inv_n = 1.0 / n
    try:
        with nogil:
            for r in range(n):
                _row_forward(&net, xp + r * d0, scratch)
                if mse:
                    row_loss = 0.0
                    for k in range(K):
                        diff = out[k] - yp[r * K + k]
                        row_loss = row_loss + diff * diff
                        delta[k] = diff * (2.0 / K)
                    total = total + row_loss / K
                else:
                    total = total + _softmax_ce(out, K, t[r], delta)
                    delta[t[r]] -= 1.0
                _row_backward(&net, xp + r * d0, scratch, delta, spare, NULL, gW, gb)
            for j in range(net.L):
                for k in range(net.dims[j + 1] * net.dims[j]):
                    gW[j][k] = gW[j][k] * inv_n
                for k in range(net.dims[j + 1]):
                    gb[j][k] = gb[j][k] * inv_n
    finally:
        free(scratch)
        free(gW)
        free(gb)
        _free(&net)
    return total * inv_n, gWs, gbs


def ce_param_grads(list weights, list biases, relus, cnp.ndarray X, cnp.ndarray targets):
    """Mean cross-entropy and mean parameter gradients over the rows of ``X``."""
    return _param_grads(weights, biases, relus, X, targets, None)


def mse_param_grads(list weights, list biases, relus, cnp.ndarray X, cnp.ndarray Y):
    """Mean squared error (over all entries) and its parameter gradients."""
    return _param_grads(weights, biases, relus, X, None, Y)
