"""Pure-numpy reference implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics; ``gloss2text.kernels`` picks one at import time.
Inputs are C-contiguous arrays of float32 or float64 (int64 for ``lcs_len``).
"""

import numpy as np

BACKEND = "numpy"


def softmax_rows(x):
    """Row softmax of a 2-d array. Rows may contain -inf (masked entries),
    but each row must hold at least one finite value."""
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=1, keepdims=True)
    return e / s


def softmax_rows_backward(y, gy):
    """Gradient of softmax_rows given its output ``y`` and upstream ``gy``."""
    dot = np.sum(y * gy, axis=1, keepdims=True)
    return y * (gy - dot)


def layer_norm_rows(x, gain, bias, eps):
    """Normalize each row to zero mean / unit variance, then apply the
    affine transform. Returns (out, xhat, rstd); the latter two feed backward."""
    mean = np.mean(x, axis=1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    return xhat * gain + bias, xhat, rstd.reshape(-1)


def layer_norm_rows_backward(xhat, rstd, gain, gy):
    """Gradients of layer_norm_rows w.r.t. input, gain and bias."""
    g = gy * gain
    gmean = np.mean(g, axis=1, keepdims=True)
    gxhat = np.mean(g * xhat, axis=1, keepdims=True)
    gx = rstd.reshape(-1, 1) * (g - gmean - xhat * gxhat)
    ggain = np.sum(gy * xhat, axis=0)
    gbias = np.sum(gy, axis=0)
    return gx, ggain, gbias


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One fused in-place Adam update on flat arrays. ``bc1``/``bc2`` are the
    bias corrections 1 - beta^t for the current step."""
    one = param.dtype.type(1.0)
    b1 = param.dtype.type(beta1)
    b2 = param.dtype.type(beta2)
    m *= b1
    m += (one - b1) * grad
    v *= b2
    v += (one - b2) * grad * grad
    mhat = m / param.dtype.type(bc1)
    vhat = v / param.dtype.type(bc2)
    param -= param.dtype.type(lr) * mhat / (np.sqrt(vhat) + param.dtype.type(eps))


def lcs_len(a, b):
    """Length of the longest common subsequence of two int64 sequences."""
    n, k = len(a), len(b)
    if n == 0 or k == 0:
        return 0
    prev = [0] * (k + 1)
    cur = [0] * (k + 1)
    for i in range(n):
        ai = a[i]
        for j in range(k):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                pj = prev[j + 1]
                cj = cur[j]
                cur[j + 1] = pj if pj >= cj else cj
        prev, cur = cur, prev
    return prev[k]
