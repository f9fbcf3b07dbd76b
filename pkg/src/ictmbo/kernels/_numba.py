"""numba-compiled kernels. Matmuls go through BLAS; elementwise work is fused."""
import numba as nb
import numpy as np

njit = nb.njit(cache=True, nogil=True)


@njit
def _hidden(theta, d, h, X):
    W1 = theta[:d * h].reshape(d, h)
    o = d * h
    b1 = theta[o:o + h]
    o += h
    W2 = theta[o:o + h * h].reshape(h, h)
    o += h * h
    b2 = theta[o:o + h]
    n = X.shape[0]
    z1 = np.dot(X, W1)
    a1 = np.empty_like(z1)
    for i in range(n):
        for j in range(h):
            z = z1[i, j] + b1[j]
            z1[i, j] = z
            a1[i, j] = z if z > 0.0 else 0.0
    z2 = np.dot(a1, W2)
    a2 = np.empty_like(z2)
    for i in range(n):
        for j in range(h):
            z = z2[i, j] + b2[j]
            z2[i, j] = z
            a2[i, j] = z if z > 0.0 else 0.0
    return z1, a1, z2, a2


@njit
def _out(theta, h, a2):
    n = a2.shape[0]
    o = theta.shape[0] - h - 1
    f = np.empty(n)
    for i in range(n):
        s = theta[-1]
        for j in range(h):
            s += a2[i, j] * theta[o + j]
        f[i] = s
    return f


@njit
def _deltas(theta, d, h, z1, z2, c):
    # per-sample d f / d z scaled by c[i]; relu'(0) = 0
    o = d * h + h
    W2 = theta[o:o + h * h].reshape(h, h)
    w3 = theta[o + h * h + h:o + h * h + 2 * h]
    n = z1.shape[0]
    d2 = np.zeros((n, h))
    for i in range(n):
        for j in range(h):
            if z2[i, j] > 0.0:
                d2[i, j] = c[i] * w3[j]
    d1 = np.dot(d2, W2.T)
    for i in range(n):
        for j in range(h):
            if not z1[i, j] > 0.0:
                d1[i, j] = 0.0
    return d1, d2


@njit
def forward(theta, d, h, X):
    _, _, _, a2 = _hidden(theta, d, h, X)
    return _out(theta, h, a2)


@njit
def mse_value_and_grad(theta, d, h, X, y, w):
    n = X.shape[0]
    z1, a1, z2, a2 = _hidden(theta, d, h, X)
    f = _out(theta, h, a2)
    c = np.empty(n)
    loss = 0.0
    for i in range(n):
        r = f[i] - y[i]
        loss += w[i] * r * r
        c[i] = 2.0 * w[i] * r / n
    loss /= n
    d1, d2 = _deltas(theta, d, h, z1, z2, c)
    grad = np.empty(theta.shape[0])
    o = 0
    gW1 = np.dot(X.T, d1)
    for a in range(d):
        for b in range(h):
            grad[o + a * h + b] = gW1[a, b]
    o += d * h
    for j in range(h):
        s = 0.0
        for i in range(n):
            s += d1[i, j]
        grad[o + j] = s
    o += h
    gW2 = np.dot(a1.T, d2)
    for a in range(h):
        for b in range(h):
            grad[o + a * h + b] = gW2[a, b]
    o += h * h
    for j in range(h):
        s = 0.0
        t = 0.0
        for i in range(n):
            s += d2[i, j]
            t += a2[i, j] * c[i]
        grad[o + j] = s
        grad[o + h + j] = t
    o += 2 * h
    s = 0.0
    for i in range(n):
        s += c[i]
    grad[o] = s
    return loss, grad


@njit
def input_grad(theta, d, h, X):
    n = X.shape[0]
    z1, _, z2, _ = _hidden(theta, d, h, X)
    d1, _ = _deltas(theta, d, h, z1, z2, np.ones(n))
    W1 = theta[:d * h].reshape(d, h)
    return np.dot(d1, W1.T)


@njit
def sample_grad_dots(theta, d, h, X, y, G):
    n = X.shape[0]
    z1, a1, z2, a2 = _hidden(theta, d, h, X)
    f = _out(theta, h, a2)
    d1, d2 = _deltas(theta, d, h, z1, z2, np.ones(n))
    GW1 = G[:d * h].reshape(d, h)
    o = d * h
    Gb1 = G[o:o + h]
    o += h
    GW2 = G[o:o + h * h].reshape(h, h)
    o += h * h
    Gb2 = G[o:o + h]
    Gw3 = G[o + h:o + 2 * h]
    Gb3 = G[o + 2 * h]
    P1 = np.dot(X, GW1)
    P2 = np.dot(a1, GW2)
    out = np.empty(n)
    for i in range(n):
        s = Gb3
        for j in range(h):
            s += (P1[i, j] + Gb1[j]) * d1[i, j]
            s += (P2[i, j] + Gb2[j]) * d2[i, j]
            s += a2[i, j] * Gw3[j]
        out[i] = 2.0 * (f[i] - y[i]) * s
    return out


@njit
def adam_update(theta, g, m, v, lr, b1, b2, eps, step):
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    p = theta.shape[0]
    out = np.empty(p)
    m2 = np.empty(p)
    v2 = np.empty(p)
    for k in range(p):
        mk = b1 * m[k] + (1.0 - b1) * g[k]
        vk = b2 * v[k] + (1.0 - b2) * g[k] * g[k]
        m2[k] = mk
        v2[k] = vk
        out[k] = theta[k] - lr * (mk / c1) / (np.sqrt(vk / c2) + eps)
    return out, m2, v2


@njit
def _grad_from_cache(X, a1, a2, d1, d2, c):
    n, d = X.shape
    h = a1.shape[1]
    s1 = np.empty_like(d1)
    s2 = np.empty_like(d2)
    for i in range(n):
        for j in range(h):
            s1[i, j] = d1[i, j] * c[i]
            s2[i, j] = d2[i, j] * c[i]
    grad = np.empty(d * h + 2 * h + h * h + h + 1)
    gW1 = np.dot(X.T, s1)
    o = 0
    for a in range(d):
        for b in range(h):
            grad[o + a * h + b] = gW1[a, b]
    o += d * h
    for j in range(h):
        s = 0.0
        for i in range(n):
            s += s1[i, j]
        grad[o + j] = s
    o += h
    gW2 = np.dot(a1.T, s2)
    for a in range(h):
        for b in range(h):
            grad[o + a * h + b] = gW2[a, b]
    o += h * h
    for j in range(h):
        s = 0.0
        t = 0.0
        for i in range(n):
            s += s2[i, j]
            t += a2[i, j] * c[i]
        grad[o + j] = s
        grad[o + h + j] = t
    o += 2 * h
    s = 0.0
    for i in range(n):
        s += c[i]
    grad[o] = s
    return grad


@njit
def meta_finetune(theta, d, h, Xs, ys, w, Xo, yo, alpha, beta):
    K = Xs.shape[0]
    z1, a1, z2, a2 = _hidden(theta, d, h, Xs)
    f = _out(theta, h, a2)
    r = f - ys
    d1, d2 = _deltas(theta, d, h, z1, z2, np.ones(K))
    c = 2.0 * w * r / K
    tuned = theta - alpha * _grad_from_cache(Xs, a1, a2, d1, d2, c)
    _, G = mse_value_and_grad(tuned, d, h, Xo, yo, np.ones(Xo.shape[0]))
    GW1 = G[:d * h].reshape(d, h)
    o = d * h
    Gb1 = G[o:o + h]
    o += h
    GW2 = G[o:o + h * h].reshape(h, h)
    o += h * h
    Gb2 = G[o:o + h]
    Gw3 = G[o + h:o + 2 * h]
    Gb3 = G[o + 2 * h]
    P1 = np.dot(Xs, GW1)
    P2 = np.dot(a1, GW2)
    w_new = np.empty(K)
    scale = alpha * beta / K
    for i in range(K):
        s = Gb3
        for j in range(h):
            s += (P1[i, j] + Gb1[j]) * d1[i, j]
            s += (P2[i, j] + Gb2[j]) * d2[i, j]
            s += a2[i, j] * Gw3[j]
        v = w[i] + scale * (2.0 * r[i] * s)
        w_new[i] = v if v > 0.0 else 0.0
    c2 = 2.0 * w_new * r / K
    return w_new, theta - alpha * _grad_from_cache(Xs, a1, a2, d1, d2, c2)
