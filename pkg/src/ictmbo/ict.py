"""Importance-aware co-teaching over a three-proxy ensemble.

One ICT iteration at the current design ``x_t`` runs three subrounds, each with a
different proxy acting as pseudo-labeler:

1. sample ``M`` points around ``x_t`` (or around the offline data) and label
   them with the labeler;
2. each of the other two proxies picks the ``K`` points it agrees with most and
   hands them to its partner (co-teaching);
3. the recipient weights its ``K`` points, adjusts the weights by one meta step
   that rewards agreement with the offline-data gradient, and takes one weighted
   SGD step.

Proxy indices are 0-based here (0, 1, 2).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from . import proxy as px
from .proxy import ProxyParams
from .tasks import OfflineDataset, OracleTask, normalize_score, oracle_audit, oracle_phase

SAMPLING_MODES = ("around-current-point", "around-offline-dataset")
# xor'ed into the trial seed to give each proxy slot its own initialisation
ROLE_SEEDS = (0x51A1, 0x52B2, 0x53C3)


@dataclass(frozen=True)
class IctConfig:
    T: int = 200
    M: int = 128
    K: int = 64
    gamma: float | None = None  # None: 0.1 x mean per-dimension std of offline designs
    eta: float = 0.05
    alpha: float = 1e-3
    beta: float = 2e-1
    sampling_mode: str = "around-current-point"
    n_starts: int = 16
    seed: int = 0
    hidden: int = px.DEFAULT_HIDDEN
    epochs: int = 200
    batch_size: int = 128
    train_lr: float = 1e-3
    meta_batch: int = 128
    proxy_seeds: tuple[int, int, int] | None = None
    diagnostics: bool = False
    record_trajectory: bool = False

    def __post_init__(self):
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if not 1 <= self.K <= self.M:
            raise ValueError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        for name in ("eta", "alpha", "beta", "train_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"sampling_mode must be one of {SAMPLING_MODES}, got {self.sampling_mode!r}")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.proxy_seeds is not None:
            object.__setattr__(self, "proxy_seeds", tuple(int(s) for s in self.proxy_seeds))
            if len(self.proxy_seeds) != 3:
                raise ValueError("proxy_seeds needs exactly three entries")

    def seeds(self) -> tuple[int, int, int]:
        if self.proxy_seeds is not None:
            return self.proxy_seeds
        return tuple(self.seed ^ r for r in ROLE_SEEDS)

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["proxy_seeds"] is not None:
            d["proxy_seeds"] = list(d["proxy_seeds"])
        return d


def default_config(task: OracleTask, **overrides) -> IctConfig:
    """Defaults for the task kind (continuous vs discrete).

    Discrete tasks use T=100 and beta=0.3. The fine-tune rate stays at 1e-3 for
    both kinds: one plain SGD step at 1e-1 wrecks a freshly fitted proxy.
    """
    if task.kind == "discrete":
        base = dict(T=100, alpha=1e-3, beta=3e-1, train_lr=1e-3)
    else:
        base = dict(T=200, alpha=1e-3, beta=2e-1, train_lr=1e-3)
    base.update(overrides)
    return IctConfig(**base)


@dataclass(frozen=True)
class EnsembleState:
    proxies: tuple[ProxyParams, ProxyParams, ProxyParams]
    seeds: tuple[int, int, int]
    opt_states: tuple = ()

    def __post_init__(self):
        if len(self.proxies) != 3 or len(self.seeds) != 3:
            raise ValueError("an ensemble holds exactly three proxies")
        shapes = {(p.input_dim, p.hidden) for p in self.proxies}
        if len(shapes) != 1:
            raise ValueError("ensemble proxies must share one architecture")

    def replace_proxy(self, i: int, params: ProxyParams) -> EnsembleState:
        proxies = list(self.proxies)
        proxies[i] = params
        return replace(self, proxies=tuple(proxies))

    def permuted(self, perm) -> EnsembleState:
        """State whose slot ``j`` holds this state's proxy ``perm[j]``."""
        return replace(
            self,
            proxies=tuple(self.proxies[p] for p in perm),
            seeds=tuple(self.seeds[p] for p in perm),
        )


@dataclass(frozen=True)
class PseudoBatch:
    points: np.ndarray
    labels: np.ndarray
    labeler_index: int


@dataclass(frozen=True)
class SelectedBatch:
    indices: np.ndarray
    xs: np.ndarray
    ys: np.ndarray

    def __len__(self):
        return self.indices.shape[0]


def fit_ensemble(dataset: OfflineDataset, cfg: IctConfig) -> EnsembleState:
    seeds = cfg.seeds()
    proxies = tuple(
        px.train_proxy(dataset, cfg.epochs, cfg.batch_size, cfg.train_lr, seed=s, hidden=cfg.hidden)
        for s in seeds
    )
    return EnsembleState(proxies, seeds)


def ensemble_input_grad(proxies, x: np.ndarray) -> np.ndarray:
    g = px.input_grad(proxies[0], x)
    for p in proxies[1:]:
        g = g + px.input_grad(p, x)
    return g / len(proxies)


def ensemble_ascend_step(state: EnsembleState, x_t: np.ndarray, eta: float, task: OracleTask | None = None):
    """x + eta * grad of the mean prediction; clipped to the task box when given."""
    g = ensemble_input_grad(state.proxies, x_t)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite ensemble gradient")
    x = x_t + eta * g
    return task.clip(x) if task is not None else x


def default_gamma(dataset: OfflineDataset) -> float:
    return 0.1 * float(np.mean(np.std(dataset.designs, axis=0)))


def sample_pseudo_points(center_source, gamma: float, M: int, rng: np.random.Generator,
                         mode: str = "around-current-point") -> np.ndarray:
    """``M`` Gaussian perturbations (scale ``gamma``) of the current design, or of
    uniformly chosen offline designs when ``mode == "around-offline-dataset"``
    (``center_source`` is then the design matrix)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if mode == "around-current-point":
        x = np.asarray(center_source, dtype=np.float64).reshape(-1)
        return x[None, :] + gamma * rng.standard_normal((M, x.shape[0]))
    if mode == "around-offline-dataset":
        D = np.asarray(center_source, dtype=np.float64)
        rows = rng.integers(0, D.shape[0], size=M)
        return D[rows] + gamma * rng.standard_normal((M, D.shape[1]))
    raise ValueError(f"unknown sampling mode {mode!r}")


def pseudo_label(labeler: ProxyParams, points: np.ndarray, labeler_index: int) -> PseudoBatch:
    return PseudoBatch(points, px.forward(labeler, points), labeler_index)


def select_small_loss(evaluator: ProxyParams, batch: PseudoBatch, K: int) -> SelectedBatch:
    """The K points where ``evaluator`` disagrees least with the pseudo-labels.

    Ties go to the smaller index; returned indices are increasing.
    """
    M = batch.points.shape[0]
    if not 1 <= K <= M:
        raise ValueError(f"need 1 <= K <= M, got K={K}, M={M}")
    losses = (px.forward(evaluator, batch.points) - batch.labels) ** 2
    idx = np.sort(np.argsort(losses, kind="stable")[:K])
    return SelectedBatch(idx, batch.points[idx], batch.labels[idx])


def _check_weights(selected: SelectedBatch, weights) -> np.ndarray:
    w = np.ascontiguousarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != len(selected):
        raise ValueError(f"{w.shape[0]} weights for {len(selected)} selected samples")
    if np.any(w < 0):
        raise ValueError("sample weights must be nonnegative")
    return w


def weighted_finetune_step(params: ProxyParams, selected: SelectedBatch, weights, alpha: float) -> ProxyParams:
    """One plain gradient step on the weighted mean squared error of the selection."""
    w = _check_weights(selected, weights)
    _, g = px.weighted_mse_grad(params, selected.xs, selected.ys, w)
    return params.with_theta(params.theta - alpha * g.theta)


def meta_update_weights(params: ProxyParams, selected: SelectedBatch, weights,
                        offline_xs, offline_ys, alpha: float, beta: float) -> np.ndarray:
    """One gradient step on the weights, descending the offline loss of the
    one-step fine-tuned proxy. Each weight moves by ``alpha*beta/K`` times the
    inner product between the offline-loss gradient (at the fine-tuned point)
    and that sample's own loss gradient (at ``params``). Clamped at zero.
    """
    w = _check_weights(selected, weights)
    if np.shape(offline_ys)[0] == 0:
        raise ValueError("offline batch is empty")
    K = w.shape[0]
    tuned = weighted_finetune_step(params, selected, w, alpha)
    _, G = px.weighted_mse_grad(tuned, offline_xs, offline_ys)
    dots = px.sample_grad_dots(params, selected.xs, selected.ys, G)
    new = w + (alpha * beta / K) * dots
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite sample weights")
    return np.maximum(new, 0.0)


def reweight_and_finetune(params: ProxyParams, selected: SelectedBatch, weights,
                          offline_xs, offline_ys, alpha: float, beta: float) -> tuple[np.ndarray, ProxyParams]:
    """``meta_update_weights`` followed by ``weighted_finetune_step`` with the new
    weights, fused into one kernel call that backpropagates the selection once."""
    w = _check_weights(selected, weights)
    Xo = np.ascontiguousarray(offline_xs, dtype=np.float64)
    yo = np.ascontiguousarray(offline_ys, dtype=np.float64)
    if yo.shape[0] == 0:
        raise ValueError("offline batch is empty")
    w_new, theta = kernels.meta_finetune(
        params.theta, params.input_dim, params.hidden,
        np.ascontiguousarray(selected.xs), np.ascontiguousarray(selected.ys), w,
        Xo, yo, float(alpha), float(beta),
    )
    if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(theta))):
        raise FloatingPointError("non-finite values in reweighted fine-tune step")
    return w_new, params.with_theta(theta)


def diagnostics_sel_ign(task: OracleTask, batch: PseudoBatch, selected: SelectedBatch,
                        y_shift: float = 0.0, y_scale: float = 1.0) -> tuple[float, float | None]:
    """MSE of pseudo-labels against ground truth over selected and ignored points.

    Pseudo-labels live in the proxies' standardized score units; ground truth is
    mapped there with ``(y - y_shift) / y_scale``. ``L_ign`` is ``None`` when
    nothing was ignored.
    """
    with oracle_phase("evaluation"):
        truth = (task.score(batch.points) - y_shift) / y_scale
    err = (batch.labels - truth) ** 2
    mask = np.zeros(err.shape[0], dtype=bool)
    mask[selected.indices] = True
    l_sel = float(err[mask].mean())
    l_ign = float(err[~mask].mean()) if (~mask).any() else None
    return l_sel, l_ign


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def ict_subround(state: EnsembleState, labeler_index: int, x_t, dataset: OfflineDataset,
                 cfg: IctConfig, rng_key=(0,), gamma: float | None = None, observer=None) -> EnsembleState:
    """One co-teaching subround with ``labeler_index`` as pseudo-labeler.

    Random streams are keyed by ``rng_key`` plus the seeds of the proxies in
    each role, so relabelling the slots of the ensemble relabels the outcome.
    """
    if labeler_index not in (0, 1, 2):
        raise ValueError(f"labeler_index must be 0, 1 or 2, got {labeler_index}")
    gamma = default_gamma(dataset) if gamma is None else gamma
    lab_seed = state.seeds[labeler_index]
    center = dataset.designs if cfg.sampling_mode == "around-offline-dataset" else x_t
    points = sample_pseudo_points(center, gamma, cfg.M, _rng(*rng_key, lab_seed, 0), cfg.sampling_mode)
    batch = pseudo_label(state.proxies[labeler_index], points, labeler_index)

    a, b = (i for i in range(3) if i != labeler_index)
    # each recipient learns from what its partner agrees with
    selections = {a: select_small_loss(state.proxies[b], batch, cfg.K),
                  b: select_small_loss(state.proxies[a], batch, cfg.K)}

    n_meta = min(len(dataset), cfg.meta_batch)
    new = state
    for r in (a, b):
        sel = selections[r]
        mb = _rng(*rng_key, lab_seed, state.seeds[r], 1).choice(len(dataset), size=n_meta, replace=False)
        w, tuned = reweight_and_finetune(state.proxies[r], sel, np.ones(cfg.K),
                                         dataset.designs[mb], dataset.scores[mb], cfg.alpha, cfg.beta)
        new = new.replace_proxy(r, tuned)
        if observer is not None:
            observer(batch=batch, recipient=r, selected=sel, weights=w)
    return new


def ict_iteration(state, x_t, dataset, cfg, rng_key=(0,), gamma=None, order=(0, 1, 2), observer=None):
    """Three subrounds, one per labeler in ``order``."""
    for lab in order:
        state = ict_subround(state, lab, x_t, dataset, cfg, rng_key, gamma, observer)
    return state


@dataclass
class IctResult:
    method: str
    starts: np.ndarray
    designs: np.ndarray
    scores: np.ndarray
    normalized: np.ndarray
    gamma: float | None
    eta: float
    counters: dict = field(default_factory=dict)
    oracle_queries: dict = field(default_factory=dict)
    diagnostics: dict | None = None
    trajectory: np.ndarray | None = None
    wall_clock: float = 0.0

    @property
    def best(self) -> float:
        return float(np.max(self.normalized))

    @property
    def median(self) -> float:
        return float(np.median(self.normalized))


def ascend(proxies, x0: np.ndarray, T: int, eta: float, task: OracleTask, mode: str = "mean",
           trace: list | None = None) -> np.ndarray:
    """``T`` clipped gradient-ascent steps on the mean or min of ``proxies``."""
    x = np.array(x0, dtype=np.float64)
    if trace is not None:
        trace.append(x.copy())
    for _ in range(T):
        if mode == "mean":
            g = ensemble_input_grad(proxies, x)
        elif mode == "min":
            preds = [px.forward(p, x)[0] for p in proxies]
            g = px.input_grad(proxies[int(np.argmin(preds))], x)
        else:
            raise ValueError(f"unknown ensemble mode {mode!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient during ascent")
        x = task.clip(x + eta * g)
        if trace is not None:
            trace.append(x.copy())
    return x


def evaluate(task: OracleTask, designs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with oracle_phase("evaluation"):
        y = task.score(designs)
    return y, normalize_score(y, task.y_min, task.y_max)


def prepare(task: OracleTask, dataset: OfflineDataset, cfg: IctConfig):
    """Standardized training view and starting designs (top scorers, best first)."""
    if dataset.dim != task.dim:
        raise ValueError(f"dataset has {dataset.dim} columns, task {task.name} needs {task.dim}")
    train, mu, sd = dataset.standardized()
    starts = dataset.designs[dataset.top(cfg.n_starts)]
    return train, mu, sd, starts


def run_ict(task: OracleTask, dataset: OfflineDataset, cfg: IctConfig, ensemble: EnsembleState | None = None) -> IctResult:
    """Full ICT: fit three proxies, co-teach along each start's ascent path, then
    ascend from each start with that start's fine-tuned ensemble.

    Every start begins from the same pretrained ensemble. The oracle is only
    touched for the final evaluation (and for diagnostics, when enabled).
    """
    t0 = time.perf_counter()
    counters = {"subrounds": 0, "interleaved_steps": 0, "final_steps": 0}
    diag = {"L_sel": [], "L_ign": []} if cfg.diagnostics else None
    trajectories = [] if cfg.record_trajectory else None
    train, mu, sd, starts = prepare(task, dataset, cfg)
    gamma = default_gamma(dataset) if cfg.gamma is None else cfg.gamma
    finals = []

    with oracle_audit() as audit:
        with oracle_phase("training"):
            base = ensemble if ensemble is not None else fit_ensemble(train, cfg)
            for s, x0 in enumerate(starts):
                state, x = base, x0.copy()
                for t in range(cfg.T):
                    step_diag = []

                    def observe(batch, recipient, selected, weights, _d=step_diag):
                        if diag is not None and batch.labeler_index == 0:
                            _d.append(diagnostics_sel_ign(task, batch, selected, mu, sd))

                    for lab in (0, 1, 2):
                        state = ict_subround(state, lab, x, train, cfg, (cfg.seed, s, t), gamma, observe)
                        counters["subrounds"] += 1
                    if step_diag:
                        diag["L_sel"].append(float(np.mean([d[0] for d in step_diag])))
                        ign = [d[1] for d in step_diag if d[1] is not None]
                        diag["L_ign"].append(float(np.mean(ign)) if ign else None)
                    x = ensemble_ascend_step(state, x, cfg.eta, task)
                    counters["interleaved_steps"] += 1
                trace = [] if trajectories is not None else None
                finals.append(ascend(state.proxies, x0, cfg.T, cfg.eta, task, "mean", trace))
                counters["final_steps"] += cfg.T
                if trace is not None:
                    trajectories.append(np.stack(trace))
        designs = np.stack(finals)
        scores, normalized = evaluate(task, designs)
        traj = None
        if trajectories is not None:
            traj = np.stack(trajectories)
            _, traj = evaluate(task, traj.reshape(-1, task.dim))
            traj = traj.reshape(len(starts), cfg.T + 1)

    if diag is not None:
        sel = np.array(diag["L_sel"])
        ign = np.array([v for v in diag["L_ign"] if v is not None])
        diag["mean_L_sel"] = float(sel.mean()) if sel.size else None
        diag["mean_L_ign"] = float(ign.mean()) if ign.size else None
    return IctResult("ict", starts, designs, scores, normalized, gamma, cfg.eta, counters,
                     audit.as_dict(), diag, traj, time.perf_counter() - t0)
