"""Three-layer ReLU proxy network with exact gradients and SGD/Adam steps.

Parameters live in one flat float64 vector laid out as
``[W1 (d x h), b1 (h), W2 (h x h), b2 (h), w3 (h), b3 (1)]``; weights are
stored fan_in x fan_out. All operations return new values and never mutate
their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

DEFAULT_HIDDEN = 64


@dataclass(frozen=True)
class ProxyParams:
    theta: np.ndarray
    input_dim: int
    hidden: int

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        if theta.shape != (kernels.n_params(self.input_dim, self.hidden),):
            raise ValueError(
                f"theta has shape {theta.shape}, expected "
                f"({kernels.n_params(self.input_dim, self.hidden)},) for "
                f"input_dim={self.input_dim}, hidden={self.hidden}"
            )

    @property
    def layer_weights(self) -> list[np.ndarray]:
        d, h = self.input_dim, self.hidden
        o = d * h + h
        return [
            self.theta[:d * h].reshape(d, h),
            self.theta[o:o + h * h].reshape(h, h),
            self.theta[o + h * h + h:-1].reshape(h, 1),
        ]

    @property
    def layer_biases(self) -> list[np.ndarray]:
        d, h = self.input_dim, self.hidden
        o = d * h
        return [
            self.theta[o:o + h],
            self.theta[o + h + h * h:o + 2 * h + h * h],
            self.theta[-1:],
        ]

    def with_theta(self, theta: np.ndarray) -> ProxyParams:
        if (
            type(theta) is np.ndarray
            and theta.dtype == np.float64
            and theta.shape == self.theta.shape
            and theta.flags.c_contiguous
        ):
            # hot path: skip dataclass re-validation
            new = object.__new__(ProxyParams)
            theta.flags.writeable = False
            object.__setattr__(new, "theta", theta)
            object.__setattr__(new, "input_dim", self.input_dim)
            object.__setattr__(new, "hidden", self.hidden)
            return new
        return replace(self, theta=theta)

    def __eq__(self, other):
        if not isinstance(other, ProxyParams):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.hidden == other.hidden
            and np.array_equal(self.theta, other.theta)
        )

    __hash__ = None


# A gradient has exactly the layout of the parameters it differentiates.
Gradient = ProxyParams


@dataclass(frozen=True)
class OptimizerState:
    kind: str = "sgd"
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def adam_state(params: ProxyParams) -> OptimizerState:
    z = np.zeros_like(params.theta)
    return OptimizerState(kind="adam", m=z, v=z.copy())


def init_proxy(input_dim: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> ProxyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if int(input_dim) != input_dim or input_dim < 1:
        raise ValueError(f"input_dim must be a positive integer, got {input_dim!r}")
    if int(hidden) != hidden or hidden < 1:
        raise ValueError(f"hidden must be a positive integer, got {hidden!r}")
    d, h = int(input_dim), int(hidden)
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in ((d, h), (h, h), (h, 1)):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return ProxyParams(np.concatenate(parts), d, h)


def _as_batch(params: ProxyParams, xs) -> np.ndarray:
    X = np.asarray(xs, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(
            f"designs must have {params.input_dim} columns, got shape {np.shape(xs)}"
        )
    return np.ascontiguousarray(X)


def forward(params: ProxyParams, xs) -> np.ndarray:
    """Predictions for a batch of designs (a single design gives a length-1 array)."""
    X = _as_batch(params, xs)
    return kernels.forward(params.theta, params.input_dim, params.hidden, X)


def weighted_mse_grad(params: ProxyParams, xs, ys, weights=None) -> tuple[float, Gradient]:
    """Value and exact gradient of ``mean(w_i * (f(x_i) - y_i)**2)``."""
    X = _as_batch(params, xs)
    y = np.ascontiguousarray(ys, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64).reshape(-1)
    if y.shape[0] != n or w.shape[0] != n:
        raise ValueError(f"batch sizes differ: {n} designs, {y.shape[0]} targets, {w.shape[0]} weights")
    if np.any(w < 0):
        raise ValueError("sample weights must be nonnegative")
    loss, g = kernels.mse_value_and_grad(params.theta, params.input_dim, params.hidden, X, y, w)
    return float(loss), params.with_theta(g)


def input_grad(params: ProxyParams, x) -> np.ndarray:
    """d f / d x. A 1-d input gives a 1-d gradient; a batch gives one row per design."""
    X = _as_batch(params, x)
    g = kernels.input_grad(params.theta, params.input_dim, params.hidden, X)
    return g[0] if np.ndim(x) == 1 else g


def sample_grad_dots(params: ProxyParams, xs, ys, direction: Gradient) -> np.ndarray:
    """``<direction, d (f(x_i) - y_i)**2 / d theta>`` for every sample, without
    materialising the per-sample gradients."""
    X = _as_batch(params, xs)
    y = np.ascontiguousarray(ys, dtype=np.float64).reshape(-1)
    return kernels.sample_grad_dots(
        params.theta, params.input_dim, params.hidden, X, y, direction.theta
    )


def apply_step(
    params: ProxyParams, grad: Gradient, lr: float, state: OptimizerState | None = None
) -> tuple[ProxyParams, OptimizerState]:
    if state is None:
        state = OptimizerState()
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    g = grad.theta
    if g.shape != params.theta.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient entries")
    if state.kind == "sgd":
        return params.with_theta(params.theta - lr * g), replace(state, step=state.step + 1)
    m = np.zeros_like(g) if state.m is None else state.m
    v = np.zeros_like(g) if state.v is None else state.v
    step = state.step + 1
    theta, m, v = kernels.adam_update(
        params.theta, g, m, v, float(lr), state.beta1, state.beta2, state.eps, float(step)
    )
    return params.with_theta(theta), replace(state, m=m, v=v, step=step)


def mse(params: ProxyParams, xs, ys) -> float:
    r = forward(params, xs) - np.asarray(ys, dtype=np.float64).reshape(-1)
    return float(np.mean(r * r))


def train_proxy(
    dataset,
    epochs: int = 200,
    batch_size: int = 128,
    lr: float = 1e-3,
    seed: int = 0,
    hidden: int = DEFAULT_HIDDEN,
    params: ProxyParams | None = None,
) -> ProxyParams:
    """Adam minibatch training on the unweighted MSE.

    ``dataset`` is anything with ``designs`` and ``scores`` arrays. Initial
    weights come from ``init_proxy(d, hidden, seed)`` unless ``params`` is
    given; minibatch order is drawn from a generator seeded with ``seed``.
    """
    X = np.ascontiguousarray(dataset.designs, dtype=np.float64)
    y = np.ascontiguousarray(dataset.scores, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if params is None:
        params = init_proxy(X.shape[1], hidden, seed)
    state = adam_state(params)
    rng = np.random.default_rng([seed, 0x7EA1])
    w = np.ones(min(batch_size, n))
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            ww = w if idx.shape[0] == w.shape[0] else np.ones(idx.shape[0])
            _, g = weighted_mse_grad(params, X[idx], y[idx], ww)
            params, state = apply_step(params, g, lr, state)
    return params
