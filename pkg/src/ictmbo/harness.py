"""Seeded multi-trial experiments, sweeps, rank tables and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .baselines import run_ensemble, run_grad
from .ict import IctConfig, default_config, run_ict
from .tasks import get_task, load_dataset_csv, make_offline_dataset, normalize_score

METHODS = ("ict", "grad", "mean", "min")
SWEEP_PARAMS = {"K": "K", "beta": "beta", "alpha": "alpha"}
IC_FIELDS = {f.name for f in fields(IctConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    method: str = "ict"
    trials: int = 8
    seed: int = 0
    seeds: tuple[int, ...] | None = None
    overrides: dict = field(default_factory=dict)
    n_data: int = 1000
    exclude_top: float = 0.2
    data_seed: int = 0
    data_path: str | None = None
    workers: int = 1

    def validate(self) -> None:
        try:
            get_task(self.task)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r} (known: {', '.join(METHODS)})")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.trials:
            raise ConfigError(f"{len(self.seeds)} seeds given for {self.trials} trials")
        unknown = set(self.overrides) - IC_FIELDS
        if unknown:
            raise ConfigError(f"unknown ICT settings: {', '.join(sorted(unknown))}")
        default_config(get_task(self.task), **self.overrides)  # raises on bad values

    def trial_seeds(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.seed + i for i in range(self.trials)]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = self.trial_seeds()
        d["overrides"] = dict(sorted(self.overrides.items()))
        return d


@dataclass
class RunReport:
    task: str
    method: str
    config: dict
    ict_config: dict
    gamma: float | None
    eta: float
    dataset_best: float
    trials: list[dict]
    summary: dict
    wall_clock: float | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock")
            for t in d["trials"]:
                t.pop("wall_clock", None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        keys = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in keys})


def mean_se(values) -> dict:
    values = [float(v) for v in values]
    se = statistics.stdev(values) / math.sqrt(len(values)) if len(values) > 1 else None
    return {"mean": statistics.fmean(values), "se": se}


def _dataset(cfg: ExperimentConfig, task):
    if cfg.data_path:
        return load_dataset_csv(cfg.data_path, task.name)
    return make_offline_dataset(task, cfg.n_data, cfg.exclude_top, cfg.data_seed)


def run_trial(cfg: ExperimentConfig, seed: int) -> dict:
    task = get_task(cfg.task)
    data = _dataset(cfg, task)
    icfg = default_config(task, **{**cfg.overrides, "seed": seed})
    if cfg.method == "ict":
        res = run_ict(task, data, icfg)
    elif cfg.method == "grad":
        res = run_grad(task, data, icfg)
    else:
        res = run_ensemble(task, data, icfg, cfg.method)
    leaked = res.oracle_queries.get("training", 0)
    if leaked:
        raise RuntimeError(f"oracle queried {leaked} times during training")
    out = {
        "seed": seed,
        "best": res.best,
        "median": res.median,
        "exceeds_reference": bool(res.best > 1.0),
        "oracle_queries": res.oracle_queries,
        "gamma": res.gamma,
        "wall_clock": res.wall_clock,
    }
    if res.diagnostics is not None:
        out["diagnostics"] = {k: res.diagnostics[k] for k in ("mean_L_sel", "mean_L_ign")}
    if res.trajectory is not None:
        out["best_by_step"] = [float(v) for v in res.trajectory.max(axis=0)]
    return out


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """``cfg.trials`` independent seeded runs, aggregated as mean and standard error."""
    cfg.validate()
    t0 = time.perf_counter()
    task = get_task(cfg.task)
    seeds = cfg.trial_seeds()
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            trials = list(pool.map(run_trial, [cfg] * len(seeds), seeds))
    else:
        trials = [run_trial(cfg, s) for s in seeds]
    trials.sort(key=lambda t: t["seed"])

    data = _dataset(cfg, task)
    icfg = default_config(task, **cfg.overrides)
    gamma = trials[0].pop("gamma")
    for t in trials[1:]:
        t.pop("gamma")
    ict_dict = icfg.as_dict()
    ict_dict.pop("seed")
    return RunReport(
        task=cfg.task,
        method=cfg.method,
        config=cfg.as_dict(),
        ict_config=ict_dict,
        gamma=gamma if cfg.method == "ict" else None,
        eta=icfg.eta,
        dataset_best=float(normalize_score(data.scores.max(), task.y_min, task.y_max)),
        trials=trials,
        summary={
            "best": mean_se(t["best"] for t in trials),
            "median": mean_se(t["median"] for t in trials),
        },
        wall_clock=time.perf_counter() - t0,
    )


def sweep(cfg: ExperimentConfig, param: str, values) -> list[RunReport]:
    """One experiment per value of ``param`` (K, beta or alpha), sharing seeds."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    cfg.validate()
    reports = []
    for v in values:
        sub = replace(cfg, overrides={**cfg.overrides, SWEEP_PARAMS[param]: v})
        reports.append(run_experiment(sub))
    return reports


def rank_table(reports) -> dict:
    """Mean and median rank per method over tasks (1 = best mean 100th-percentile
    score; ties share the average rank)."""
    cells = {}
    for r in reports:
        cells[(r.task, r.method)] = r.summary["best"]["mean"]
    tasks = sorted({t for t, _ in cells})
    methods = sorted({m for _, m in cells})
    missing = [(t, m) for t in tasks for m in methods if (t, m) not in cells]
    if missing:
        raise ConfigError("missing task x method cells: " + ", ".join(f"{t}/{m}" for t, m in missing))
    per_task = {}
    for t in tasks:
        ranks = rankdata([-cells[(t, m)] for m in methods], method="average")
        per_task[t] = {m: float(r) for m, r in zip(methods, ranks)}
    return {
        m: {
            "mean_rank": float(np.mean([per_task[t][m] for t in tasks])),
            "median_rank": float(np.median([per_task[t][m] for t in tasks])),
            "ranks": {t: per_task[t][m] for t in tasks},
        }
        for m in methods
    }


# ---------------------------------------------------------------------------
# emission


def _fmt(ms: dict) -> str:
    if ms["se"] is None:
        return f"{ms['mean']:.3f}"
    return f"{ms['mean']:.3f} ± {ms['se']:.3f}"


def to_json(report: RunReport, include_timing: bool = False) -> str:
    return json.dumps(report.to_dict(include_timing), sort_keys=True, indent=2) + "\n"


def read_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "method", "seed", "best", "median"])
    for r in reports:
        for t in r.trials:
            w.writerow([r.task, r.method, t["seed"], repr(t["best"]), repr(t["median"])])
    return buf.getvalue()


def to_markdown(reports, label: str | None = None) -> str:
    head = ["task", "method"] + ([label] if label else []) + ["100th pct", "50th pct"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in reports:
        row = [r.task, r.method]
        if label:
            row.append(str(r.config["overrides"].get(label)))
        row += [_fmt(r.summary["best"]), _fmt(r.summary["median"])]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def rank_markdown(ranks: dict) -> str:
    lines = ["| method | mean rank | median rank |", "|---|---|---|"]
    for m, v in sorted(ranks.items(), key=lambda kv: (kv[1]["mean_rank"], kv[0])):
        lines.append(f"| {m} | {v['mean_rank']:.2f} | {v['median_rank']:.1f} |")
    return "\n".join(lines) + "\n"


def render(reports, fmt: str, label: str | None = None, include_timing: bool = False) -> str:
    reports = list(reports)
    if fmt == "json":
        if len(reports) == 1:
            return to_json(reports[0], include_timing)
        return json.dumps([r.to_dict(include_timing) for r in reports], sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return to_csv(reports)
    if fmt in ("markdown", "md", "markdown-table"):
        return to_markdown(reports, label)
    raise ConfigError(f"unknown format {fmt!r}")


def emit(report, fmt: str, path, label: str | None = None, include_timing: bool = False) -> Path:
    """Write one report (or a list of reports) to ``path`` in ``fmt``."""
    reports = report if isinstance(report, (list, tuple)) else [report]
    text = render(reports, fmt, label, include_timing)
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path
