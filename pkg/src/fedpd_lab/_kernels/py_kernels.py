"""Pure-numpy reference kernels for the data-backed loss families.

Mirrors the compiled extension `_core` one-to-one; the active backend is
selected in `fedpd_lab._kernels`.  Within a backend, a full-shard batch
gradient and the plain gradient follow the same code path, so they agree
bit-for-bit.
"""

import numpy as np

BACKEND_NAME = "python"


def _sigmoid(t):
    """Numerically stable 1 / (1 + exp(-t)) for array input."""
    out = np.empty_like(t)
    pos = t >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


# --- penalized logistic: F(x; (a,b)) = log(1+exp(-b a^T x)) + sum_j beta*alpha*x_j^2/(1+alpha*x_j^2)
# Z holds the label-scaled features, row k = b_k * a_k.


def penlog_value(Z, x, alpha, beta):
    z = Z @ x
    q = alpha * x * x
    pen = beta * np.sum(q / (1.0 + q))
    return float(np.mean(np.logaddexp(0.0, -z))) + float(pen)


def penlog_batch_grad(Z, idx, x, alpha, beta):
    Zb = Z[idx]
    z = Zb @ x
    coeff = -_sigmoid(-z)
    g = Zb.T @ coeff
    g /= len(idx)
    s = 1.0 + alpha * x * x
    g += (2.0 * alpha * beta) * x / (s * s)
    return g


def penlog_grad(Z, x, alpha, beta):
    return penlog_batch_grad(Z, np.arange(Z.shape[0], dtype=np.int64), x, alpha, beta)


# --- sigmoid-saturation loss: F(x; (a,b)) = 1 / (1 + exp(b - a^T x))


def siglog_value(A, b, x):
    return float(np.mean(_sigmoid(A @ x - b)))


def siglog_batch_grad(A, b, idx, x):
    Ab = A[idx]
    s = _sigmoid(Ab @ x - b[idx])
    g = Ab.T @ (s * (1.0 - s))
    g /= len(idx)
    return g


def siglog_grad(A, b, x):
    return siglog_batch_grad(A, b, np.arange(A.shape[0], dtype=np.int64), x)
