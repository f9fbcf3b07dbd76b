"""Gradient-ascent baselines: single proxy (Grad) and ensemble Mean / Min.

They share the starting-design rule, proxy training recipe, clipping and
evaluation path with :func:`ictmbo.ict.run_ict`.
"""
from __future__ import annotations

import time

import numpy as np

from . import proxy as px
from .ict import EnsembleState, IctConfig, IctResult, ascend, evaluate, fit_ensemble, prepare
from .tasks import OfflineDataset, OracleTask, oracle_audit, oracle_phase


def _run(task, dataset, cfg, method, fit, mode):
    t0 = time.perf_counter()
    train, _, _, starts = prepare(task, dataset, cfg)
    with oracle_audit() as audit:
        with oracle_phase("training"):
            proxies = fit(train)
            finals = [ascend(proxies, x0, cfg.T, cfg.eta, task, mode) for x0 in starts]
        designs = np.stack(finals)
        scores, normalized = evaluate(task, designs)
    counters = {"subrounds": 0, "interleaved_steps": 0, "final_steps": cfg.T * len(starts)}
    return IctResult(method, starts, designs, scores, normalized, None, cfg.eta, counters,
                     audit.as_dict(), wall_clock=time.perf_counter() - t0)


def run_grad(task: OracleTask, dataset: OfflineDataset, cfg: IctConfig, proxy: px.ProxyParams | None = None) -> IctResult:
    """Plain gradient ascent on one proxy trained with the first proxy seed."""
    def fit(train):
        if proxy is not None:
            return (proxy,)
        return (px.train_proxy(train, cfg.epochs, cfg.batch_size, cfg.train_lr,
                               seed=cfg.seeds()[0], hidden=cfg.hidden),)
    return _run(task, dataset, cfg, "grad", fit, "mean")


def run_ensemble(task: OracleTask, dataset: OfflineDataset, cfg: IctConfig, mode: str = "mean",
                 ensemble: EnsembleState | None = None) -> IctResult:
    """Ascent on the mean or pointwise-minimum prediction of three proxies."""
    if mode not in ("mean", "min"):
        raise ValueError(f"mode must be 'mean' or 'min', got {mode!r}")

    def fit(train):
        return (ensemble if ensemble is not None else fit_ensemble(train, cfg)).proxies
    return _run(task, dataset, cfg, mode, fit, mode)
