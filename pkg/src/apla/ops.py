"""Dense float64 kernels used by the model and its hand-written backward pass.

Matrix products go through a fixed-order loop (ascending inner index) rather
than BLAS, so results are bit-reproducible and every output column depends
only on the matching input column.
"""

import math

import numba
import numpy as np

from .errors import DimensionError

_GELU_C = math.sqrt(2.0 / math.pi)


@numba.njit(cache=True)
def _mm2(a, b):
    # four rows share each load of b[t]; every out[i, j] still sums t in ascending order
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    i = 0
    while i + 4 <= m:
        for t in range(k):
            a0 = a[i, t]
            a1 = a[i + 1, t]
            a2 = a[i + 2, t]
            a3 = a[i + 3, t]
            for j in range(n):
                btj = b[t, j]
                out[i, j] += a0 * btj
                out[i + 1, j] += a1 * btj
                out[i + 2, j] += a2 * btj
                out[i + 3, j] += a3 * btj
        i += 4
    for i in range(i, m):
        for t in range(k):
            ait = a[i, t]
            for j in range(n):
                out[i, j] += ait * b[t, j]
    return out


@numba.njit(cache=True)
def _mm3(a, b):
    g, m, k = a.shape
    n = b.shape[2]
    out = np.zeros((g, m, n))
    for p in range(g):
        for i in range(m):
            for t in range(k):
                ait = a[p, i, t]
                for j in range(n):
                    out[p, i, j] += ait * b[p, t, j]
    return out


def matmul(a, b):
    """``a @ b`` for 2-D operands, or batched over the leading axis for 3-D ones."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        return _mm2(a, b)
    if a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        return _mm3(a, b)
    raise DimensionError(f"matmul: unsupported ranks {a.shape} and {b.shape}")


def linear(x, w, b=None):
    """Apply ``x @ w + b`` over the last axis of ``x`` (any leading shape)."""
    lead = x.shape[:-1]
    y = matmul(x.reshape(-1, x.shape[-1]), w)
    if b is not None:
        y += b
    return y.reshape(*lead, w.shape[1])


def low_rank_delta(x, a, b, scale):
    """``(x @ a) @ b * scale`` over the last axis of ``x``."""
    return linear(linear(x, a), b) * scale


def softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(p, dp):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def layernorm(x, gamma, beta, eps=1e-6):
    return layernorm_forward(x, gamma, beta, eps)[0]


@numba.njit(cache=True)
def _ln_rows(x, gamma, beta, eps):
    rows, d = x.shape
    y = np.empty((rows, d))
    xhat = np.empty((rows, d))
    rstd = np.empty(rows)
    for i in range(rows):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            xh = (x[i, j] - mean) * r
            xhat[i, j] = xh
            y[i, j] = xh * gamma[j] + beta[j]
    return y, xhat, rstd


@numba.njit(cache=True)
def _ln_rows_backward(dy, gamma, xhat, rstd, need_input):
    rows, d = dy.shape
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    dx = np.empty((rows, d)) if need_input else np.empty((0, d))
    for i in range(rows):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
            g = dy[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat[i, j]
        if need_input:
            s1 /= d
            s2 /= d
            for j in range(d):
                dx[i, j] = rstd[i] * (dy[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


def layernorm_forward(x, gamma, beta, eps=1e-6):
    """Normalise the last axis with the biased variance. Returns ``(y, (xhat, rstd))``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    shape = x.shape
    y, xhat, rstd = _ln_rows(x.reshape(-1, shape[-1]), np.asarray(gamma, dtype=np.float64),
                             np.asarray(beta, dtype=np.float64), float(eps))
    return y.reshape(shape), (xhat, rstd)


def layernorm_backward(dy, gamma, cache, need_input=True):
    """Returns ``(dx or None, dgamma, dbeta)``; parameter grads are summed over leading axes."""
    xhat, rstd = cache
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    dx, dgamma, dbeta = _ln_rows_backward(dy.reshape(xhat.shape), gamma, xhat, rstd, need_input)
    return (dx.reshape(dy.shape) if need_input else None), dgamma, dbeta


def _gelu_fwd(x):
    # numpy's SIMD tanh is several times faster than a compiled scalar loop here
    u = x * x
    u *= 0.044715
    u += 1.0
    u *= x
    u *= _GELU_C
    t = np.tanh(u, out=u)
    y = t + 1.0
    y *= x
    y *= 0.5
    return y, t


@numba.njit(cache=True)
def _gelu_bwd(x, t):
    xf = x.ravel()
    tf = t.ravel()
    g = np.empty(xf.size)
    for i in range(xf.size):
        v = xf[i]
        th = tf[i]
        g[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
    return g.reshape(x.shape)


def gelu(x):
    """Tanh-approximation GELU, elementwise."""
    return gelu_forward(x)[0]


def gelu_forward(x):
    """Returns ``(gelu(x), tanh term)``; the latter feeds :func:`gelu_grad`."""
    return _gelu_fwd(np.ascontiguousarray(x, dtype=np.float64))


def gelu_grad(x, tanh_term=None):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if tanh_term is None:
        tanh_term = _gelu_fwd(x)[1]
    return _gelu_bwd(x, tanh_term)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy. Returns ``(loss, dlogits)``."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(logsum - shifted[rows, labels]))
    dlogits = softmax_rows(logits)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / b
