"""Pure-numpy kernels. Reference path and fallback when numba is off."""
import numpy as np


def n_params(d, h):
    return d * h + h + h * h + h + h + 1


def _unpack(theta, d, h):
    i = 0
    W1 = theta[i:i + d * h].reshape(d, h)
    i += d * h
    b1 = theta[i:i + h]
    i += h
    W2 = theta[i:i + h * h].reshape(h, h)
    i += h * h
    b2 = theta[i:i + h]
    i += h
    w3 = theta[i:i + h]
    b3 = theta[i + h]
    return W1, b1, W2, b2, w3, b3


def _hidden(theta, d, h, X):
    W1, b1, W2, b2, w3, b3 = _unpack(theta, d, h)
    z1 = X @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2 + b2
    a2 = np.maximum(z2, 0.0)
    return z1, a1, z2, a2


def forward(theta, d, h, X):
    _, _, _, a2 = _hidden(theta, d, h, X)
    return a2 @ theta[-h - 1:-1] + theta[-1]


def _output_deltas(theta, d, h, z1, z2):
    # d f / d z2 and d f / d z1 per sample; relu'(0) = 0
    _, _, W2, _, w3, _ = _unpack(theta, d, h)
    d2 = w3[None, :] * (z2 > 0.0)
    d1 = (d2 @ W2.T) * (z1 > 0.0)
    return d1, d2


def mse_value_and_grad(theta, d, h, X, y, w):
    """Loss ``mean(w * (f(X) - y)**2)`` and its gradient in theta."""
    n = X.shape[0]
    z1, a1, z2, a2 = _hidden(theta, d, h, X)
    f = a2 @ theta[-h - 1:-1] + theta[-1]
    r = f - y
    loss = float(np.sum(w * r * r) / n)
    c = 2.0 * w * r / n
    d1, d2 = _output_deltas(theta, d, h, z1, z2)
    d2 = d2 * c[:, None]
    d1 = d1 * c[:, None]
    grad = np.concatenate([
        (X.T @ d1).ravel(),
        d1.sum(axis=0),
        (a1.T @ d2).ravel(),
        d2.sum(axis=0),
        a2.T @ c,
        [c.sum()],
    ])
    return loss, grad


def input_grad(theta, d, h, X):
    """Rows of d f / d x, one per input row."""
    z1, _, z2, _ = _hidden(theta, d, h, X)
    d1, _ = _output_deltas(theta, d, h, z1, z2)
    W1 = theta[:d * h].reshape(d, h)
    return d1 @ W1.T


def sample_grad_dots(theta, d, h, X, y, G):
    """Inner products <G, d (f(x_i) - y_i)**2 / d theta> for every sample i."""
    z1, a1, z2, a2 = _hidden(theta, d, h, X)
    f = a2 @ theta[-h - 1:-1] + theta[-1]
    r = f - y
    d1, d2 = _output_deltas(theta, d, h, z1, z2)
    GW1, Gb1, GW2, Gb2, Gw3, Gb3 = _unpack(G, d, h)
    df = (
        np.sum((X @ GW1) * d1, axis=1)
        + d1 @ Gb1
        + np.sum((a1 @ GW2) * d2, axis=1)
        + d2 @ Gb2
        + a2 @ Gw3
        + Gb3
    )
    return 2.0 * r * df


def adam_update(theta, g, m, v, lr, b1, b2, eps, step):
    """One bias-corrected Adam step. Returns new (theta, m, v)."""
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** step)
    vhat = v / (1.0 - b2 ** step)
    return theta - lr * mhat / (np.sqrt(vhat) + eps), m, v


def _grad_from_cache(X, a1, a2, d1, d2, c):
    d1 = d1 * c[:, None]
    d2 = d2 * c[:, None]
    return np.concatenate([
        (X.T @ d1).ravel(), d1.sum(axis=0),
        (a1.T @ d2).ravel(), d2.sum(axis=0),
        a2.T @ c, [c.sum()],
    ])


def meta_finetune(theta, d, h, Xs, ys, w, Xo, yo, alpha, beta):
    """Reweight-then-finetune for one recipient, sharing one backward pass.

    Returns ``(w_new, theta_new)`` where ``w_new`` is the clamped meta step on
    ``w`` and ``theta_new`` the plain weighted step using ``w_new``.
    """
    K = Xs.shape[0]
    z1, a1, z2, a2 = _hidden(theta, d, h, Xs)
    r = a2 @ theta[-h - 1:-1] + theta[-1] - ys
    d1, d2 = _output_deltas(theta, d, h, z1, z2)
    tuned = theta - alpha * _grad_from_cache(Xs, a1, a2, d1, d2, 2.0 * w * r / K)
    _, G = mse_value_and_grad(tuned, d, h, Xo, yo, np.ones(Xo.shape[0]))
    GW1, Gb1, GW2, Gb2, Gw3, Gb3 = _unpack(G, d, h)
    df = (
        np.sum((Xs @ GW1) * d1, axis=1) + d1 @ Gb1
        + np.sum((a1 @ GW2) * d2, axis=1) + d2 @ Gb2
        + a2 @ Gw3 + Gb3
    )
    w_new = np.maximum(w + (alpha * beta / K) * (2.0 * r * df), 0.0)
    theta_new = theta - alpha * _grad_from_cache(Xs, a1, a2, d1, d2, 2.0 * w_new * r / K)
    return w_new, theta_new
