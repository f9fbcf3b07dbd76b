"""Command-line entry point: ``ictmbo {run,sweep,rank,gen-data,check}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .harness import ConfigError, ExperimentConfig
from .tasks import get_task, make_offline_dataset, save_dataset_csv

# flag name -> (IctConfig field, type)
ICT_FLAGS = {
    "K": ("K", int),
    "M": ("M", int),
    "T": ("T", int),
    "gamma": ("gamma", float),
    "eta": ("eta", float),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "n_starts": ("n_starts", int),
    "sampling_mode": ("sampling_mode", str),
    "hidden": ("hidden", int),
    "epochs": ("epochs", int),
    "train_lr": ("train_lr", float),
    "meta_batch": ("meta_batch", int),
}
EXPERIMENT_FLAGS = {
    "task": str, "method": str, "trials": int, "seed": int, "n_data": int,
    "exclude_top": float, "data_seed": int, "data": str, "workers": int,
}


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys act as underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in ICT_FLAGS and key not in EXPERIMENT_FLAGS and key not in ("out", "format"):
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _typed(key, value):
    if key in ICT_FLAGS:
        return ICT_FLAGS[key][1](value)
    if key in EXPERIMENT_FLAGS:
        return EXPERIMENT_FLAGS[key](value)
    return value


def build_config(args) -> ExperimentConfig:
    settings = read_config_file(args.config) if args.config else {}
    settings = {k: _typed(k, v) for k, v in settings.items()}
    for key in list(ICT_FLAGS) + list(EXPERIMENT_FLAGS):
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    if "task" not in settings:
        raise ConfigError("--task is required (flag or config file)")
    overrides = {ICT_FLAGS[k][0]: settings[k] for k in ICT_FLAGS if k in settings}
    args.out = args.out or settings.get("out")
    args.format = args.format or settings.get("format") or "json"
    return ExperimentConfig(
        task=settings["task"],
        method=settings.get("method", "ict"),
        trials=settings.get("trials", 8),
        seed=settings.get("seed", 0),
        overrides=overrides,
        n_data=settings.get("n_data", 1000),
        exclude_top=settings.get("exclude_top", 0.2),
        data_seed=settings.get("data_seed", 0),
        data_path=settings.get("data"),
        workers=settings.get("workers", 1),
    )


def _write(text: str, out) -> None:
    if out:
        path = Path(out)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    else:
        sys.stdout.write(text)


def cmd_run(args):
    cfg = build_config(args)
    report = harness.run_experiment(cfg)
    _write(harness.render([report], args.format, include_timing=args.timing), args.out)


def cmd_sweep(args):
    cfg = build_config(args)
    cast = int if args.param == "K" else float
    values = [cast(v) for v in args.values.split(",") if v.strip()]
    reports = harness.sweep(cfg, args.param, values)
    _write(harness.render(reports, args.format, label=args.param, include_timing=args.timing), args.out)


def cmd_rank(args):
    reports = [harness.read_report(p) for p in args.reports]
    ranks = harness.rank_table(reports)
    fmt = args.format or "json"
    if fmt == "json":
        text = json.dumps(ranks, sort_keys=True, indent=2) + "\n"
    elif fmt in ("markdown", "md", "markdown-table"):
        text = harness.rank_markdown(ranks)
    else:
        raise ConfigError(f"rank supports json or markdown, not {fmt!r}")
    _write(text, args.out)


def cmd_gen_data(args):
    task = get_task(args.task)
    ds = make_offline_dataset(task, args.n_data, args.exclude_top, args.seed)
    if not args.out:
        raise ConfigError("gen-data needs --out")
    save_dataset_csv(ds, args.out)
    print(json.dumps({"task": task.name, "rows": len(ds), "path": str(args.out)}, sort_keys=True))


def cmd_check(args):
    from .selfcheck import run_checks
    from . import kernels

    print(f"kernel backend: {kernels.BACKEND}")
    ok = True
    for name, passed, detail in run_checks():
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    if not ok:
        raise RuntimeError("self-check failed")


def _add_experiment_flags(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--task")
    p.add_argument("--method", choices=harness.METHODS)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    for flag, (_, typ) in ICT_FLAGS.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    p.add_argument("--n-data", dest="n_data", type=int)
    p.add_argument("--exclude-top", dest="exclude_top", type=float)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--data", help="CSV dataset (x0,...,x{d-1},y) to use instead of sampling")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv", "markdown"))
    p.add_argument("--timing", action="store_true", help="include wall-clock times in the output")


def make_parser():
    parser = argparse.ArgumentParser(prog="ictmbo", description="Importance-aware co-teaching for offline MBO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per hyperparameter value")
    _add_experiment_flags(p)
    p.add_argument("--param", required=True, choices=tuple(harness.SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated, e.g. 8,16,32,64")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rank", help="mean/median rank of methods across tasks")
    p.add_argument("reports", nargs="+", help="json reports written by 'run'")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "markdown"))
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("gen-data", help="write an offline dataset as CSV")
    p.add_argument("--task", required=True)
    p.add_argument("--n-data", dest="n_data", type=int, default=1000)
    p.add_argument("--exclude-top", dest="exclude_top", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("check", help="gradient and invariant self-test")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"error": {"type": type(exc).__name__, "message": str(exc), "command": args.command}}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
