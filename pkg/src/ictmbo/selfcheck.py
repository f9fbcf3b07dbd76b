"""Quick numerical self-test behind ``ictmbo check``.

Each check returns ``(name, passed, detail)``. Gradients are compared with
central finite differences in double precision on small random networks.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from . import proxy as px
from .ict import PseudoBatch, SelectedBatch, meta_update_weights, reweight_and_finetune, select_small_loss


def central_diff(f, x, eps=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _instance(rng, d=None, h=None, n=None):
    d = d or int(rng.integers(1, 9))
    h = h or int(rng.integers(2, 17))
    n = n or int(rng.integers(1, 7))
    p = px.init_proxy(d, h, int(rng.integers(1 << 30)))
    # nonzero biases so relu kinks are not aligned with the origin
    p = p.with_theta(p.theta + 0.1 * rng.standard_normal(p.theta.size))
    return p, rng.standard_normal((n, d)), rng.standard_normal(n)


def check_param_grads(n=20, seed=0, tol=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p, X, y = _instance(rng)
        w = rng.uniform(0.0, 2.0, size=y.size)
        _, g = px.weighted_mse_grad(p, X, y, w)
        fd = central_diff(lambda t: px.weighted_mse_grad(p.with_theta(t), X, y, w)[0], p.theta)
        worst = max(worst, rel_err(g.theta, fd))
    return "parameter gradient vs finite differences", worst <= tol, f"max rel err {worst:.2e}"


def check_input_grads(n=20, seed=1, tol=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p, X, _ = _instance(rng, n=1)
        g = px.input_grad(p, X[0])
        fd = central_diff(lambda x: px.forward(p, x)[0], X[0])
        worst = max(worst, rel_err(g, fd))
    return "input gradient vs finite differences", worst <= tol, f"max rel err {worst:.2e}"


def check_meta_grads(n=20, seed=2, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p, Xs, ys = _instance(rng, n=int(rng.integers(2, 7)))
        Xo, yo = rng.standard_normal((8, p.input_dim)), rng.standard_normal(8)
        sel = SelectedBatch(np.arange(ys.size), Xs, ys)
        w = rng.uniform(0.5, 1.5, size=ys.size)
        alpha, beta = 0.05, 0.5
        K = ys.size

        def outer(om):
            _, g = px.weighted_mse_grad(p, Xs, ys, om)
            return px.mse(p.with_theta(p.theta - alpha * g.theta), Xo, yo)

        expected = w - beta * central_diff(outer, w)
        got = meta_update_weights(p, sel, w, Xo, yo, alpha, beta)
        # compare before clamping can bite
        if np.all(expected > 0):
            worst = max(worst, rel_err(got - w, expected - w))
    return "meta weight update vs finite differences", worst <= tol, f"max rel err {worst:.2e}"


def check_selection(n=200, seed=3):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        M = int(rng.integers(1, 65))
        K = int(rng.integers(1, M + 1))
        p, X, _ = _instance(rng, n=M)
        labels = np.round(rng.standard_normal(M), 1)
        sel = select_small_loss(p, PseudoBatch(X, labels, 0), K)
        f = px.forward(p, X)
        losses = [((f[i] - labels[i]) ** 2, i) for i in range(M)]
        expected = sorted(i for _, i in sorted(losses)[:K])
        if list(sel.indices) != expected:
            return "small-loss selection vs brute force", False, f"mismatch at M={M}, K={K}"
    return "small-loss selection vs brute force", True, f"{n} instances"


def check_fused(n=10, seed=4, tol=1e-10):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p, Xs, ys = _instance(rng, n=5)
        Xo, yo = rng.standard_normal((7, p.input_dim)), rng.standard_normal(7)
        sel = SelectedBatch(np.arange(5), Xs, ys)
        w = np.ones(5)
        w1 = meta_update_weights(p, sel, w, Xo, yo, 0.05, 0.5)
        _, g = px.weighted_mse_grad(p, Xs, ys, w1)
        w2, p2 = reweight_and_finetune(p, sel, w, Xo, yo, 0.05, 0.5)
        worst = max(worst, rel_err(w1, w2), rel_err(p.theta - 0.05 * g.theta, p2.theta))
    return "fused reweight+finetune vs composed ops", worst <= tol, f"max rel err {worst:.2e}"


def check_backends(seed=5, tol=1e-10):
    nb = kernels.numba_backend or kernels.load_numba_backend()
    if nb is None:
        return "numba vs numpy kernels", True, "numba unavailable, skipped"
    npb = kernels.numpy_backend
    rng = np.random.default_rng(seed)
    d, h = 5, 9
    th = 0.3 * rng.standard_normal(kernels.n_params(d, h))
    X, y, G = rng.standard_normal((11, d)), rng.standard_normal(11), rng.standard_normal(th.size)
    w = rng.uniform(0, 1, 11)
    errs = [
        rel_err(nb.forward(th, d, h, X), npb.forward(th, d, h, X)),
        rel_err(nb.mse_value_and_grad(th, d, h, X, y, w)[1], npb.mse_value_and_grad(th, d, h, X, y, w)[1]),
        rel_err(nb.input_grad(th, d, h, X), npb.input_grad(th, d, h, X)),
        rel_err(nb.sample_grad_dots(th, d, h, X, y, G), npb.sample_grad_dots(th, d, h, X, y, G)),
        rel_err(nb.meta_finetune(th, d, h, X[:4], y[:4], w[:4], X, y, 0.1, 0.3)[1],
                npb.meta_finetune(th, d, h, X[:4], y[:4], w[:4], X, y, 0.1, 0.3)[1]),
    ]
    return "numba vs numpy kernels", max(errs) <= tol, f"max rel err {max(errs):.2e}"


CHECKS = (check_param_grads, check_input_grads, check_meta_grads, check_selection, check_fused, check_backends)


def run_checks():
    return [c() for c in CHECKS]
