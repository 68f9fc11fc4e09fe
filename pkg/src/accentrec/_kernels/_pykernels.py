"""Pure numpy implementations of the compiled kernels.

Same signatures and tie-breaking as ``_ckernels``; selected when the extension
is not built or ``ACCENTREC_PURE_PYTHON=1`` is set.
"""

import numpy as np


def ctc_forward_backward(logp, labels, blank):
    logp = np.asarray(logp, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T, V = logp.shape
    S = 2 * len(labels) + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = labels
    # skip transitions s-2 -> s are allowed into non-blank states whose label
    # differs from the one two positions back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = logp[:, ext]

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    log_z = alpha[T - 1, S - 1]
    if S > 1:
        log_z = np.logaddexp(log_z, alpha[T - 1, S - 2])

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b

    grad = np.zeros((T, V))
    if np.isfinite(log_z):
        occ = np.exp(alpha + beta - log_z)
        for s in range(S):
            grad[:, ext[s]] -= occ[:, s]
    return -float(log_z), grad


def maxpool2x2_forward(x):
    x = np.asarray(x, dtype=np.float64)
    T, D, C = x.shape
    T2, D2 = (T + 1) // 2, (D + 1) // 2
    padded = np.full((2 * T2, 2 * D2, C), -np.inf)
    padded[:T, :D] = x
    windows = padded.reshape(T2, 2, D2, 2, C).transpose(0, 2, 4, 1, 3).reshape(T2, D2, C, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2x2_backward(g, idx, T, D):
    T2, D2, C = g.shape
    windows = np.zeros((T2, D2, C, 4))
    np.put_along_axis(windows, idx.astype(np.intp)[..., None], g[..., None], axis=-1)
    full = windows.reshape(T2, D2, C, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * T2, 2 * D2, C)
    return np.ascontiguousarray(full[:T, :D])
