"""Synthetic ground-truth tasks, offline datasets and score normalization.

Every oracle query goes through :meth:`OracleTask.score`, which reports to the
active :class:`OracleAudit` (if any) under the current access phase. Queries made
during the ``"training"`` phase raise :class:`OracleLeakError`; that is how the
optimisation loops prove they never look at ground truth.
"""
from __future__ import annotations

import contextlib
import contextvars
import csv
import functools
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

REFERENCE_SAMPLES = 1_000_000
REFERENCE_SEED = 20240101


class OracleLeakError(RuntimeError):
    """The ground-truth oracle was queried while training or optimising."""


class DatasetFormatError(ValueError):
    pass


_PHASE: contextvars.ContextVar[str | None] = contextvars.ContextVar("oracle_phase", default=None)
_AUDITS: contextvars.ContextVar[tuple] = contextvars.ContextVar("oracle_audits", default=())

FORBIDDEN_PHASES = frozenset({"training"})


@dataclass
class OracleAudit:
    """Counts oracle queries (number of designs scored) per access phase."""

    counts: Counter = field(default_factory=Counter)

    def record(self, phase: str | None, n: int) -> None:
        self.counts[phase or "unscoped"] += n

    def as_dict(self) -> dict[str, int]:
        return {k: int(v) for k, v in sorted(self.counts.items())}


@contextlib.contextmanager
def oracle_phase(phase: str):
    token = _PHASE.set(phase)
    try:
        yield
    finally:
        _PHASE.reset(token)


@contextlib.contextmanager
def oracle_audit():
    """Collect oracle query counts made inside the block (audits nest)."""
    audit = OracleAudit()
    token = _AUDITS.set(_AUDITS.get() + (audit,))
    try:
        yield audit
    finally:
        _AUDITS.reset(token)


@dataclass(frozen=True, eq=False)
class OracleTask:
    name: str
    kind: str  # "continuous" | "discrete"
    dim: int  # design dimension seen by proxies (L * A for discrete tasks)
    objective: Callable[[np.ndarray], np.ndarray]
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    seq_len: int | None = None
    alphabet: int | None = None
    extremes: Callable[[], tuple[float, float, str]] | None = None

    def decode(self, designs) -> np.ndarray:
        """Token indices from (possibly relaxed) one-hot designs, by per-block argmax."""
        X = np.asarray(designs, dtype=np.float64).reshape(-1, self.seq_len, self.alphabet)
        return np.argmax(X, axis=2)

    def encode(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, self.seq_len)
        out = np.zeros((tokens.shape[0], self.seq_len, self.alphabet))
        np.put_along_axis(out, tokens[:, :, None], 1.0, axis=2)
        return out.reshape(tokens.shape[0], self.dim)

    def score(self, designs) -> np.ndarray:
        """Ground-truth scores for a batch of designs (audited)."""
        X = np.atleast_2d(np.asarray(designs, dtype=np.float64))
        phase = _PHASE.get()
        for audit in _AUDITS.get():
            audit.record(phase, X.shape[0])
        if phase in FORBIDDEN_PHASES:
            raise OracleLeakError(f"oracle for {self.name!r} queried during {phase!r}")
        if X.shape[1] != self.dim:
            raise ValueError(f"{self.name}: designs must have {self.dim} columns, got {X.shape[1]}")
        if self.kind == "discrete":
            return self.objective(self.decode(X))
        return self.objective(X)

    def clip(self, X: np.ndarray) -> np.ndarray:
        if self.kind != "continuous":
            return X
        return np.clip(X, self.lo, self.hi)

    @functools.cached_property
    def _extremes(self) -> tuple[float, float, str]:
        return self.extremes()

    @property
    def y_min(self) -> float:
        return self._extremes[0]

    @property
    def y_max(self) -> float:
        return self._extremes[1]

    @property
    def extremes_source(self) -> str:
        return self._extremes[2]

    def metadata(self) -> dict:
        meta = {
            "name": self.name,
            "kind": self.kind,
            "dim": self.dim,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "extremes": self.extremes_source,
        }
        if self.kind == "continuous":
            meta["bounds"] = [float(self.lo[0]), float(self.hi[0])]
        else:
            meta["seq_len"] = self.seq_len
            meta["alphabet"] = self.alphabet
        return meta


# ---------------------------------------------------------------------------
# objectives


def neg_quadratic(center: np.ndarray):
    def f(X):
        return -np.sum((X - center) ** 2, axis=1)
    return f


def neg_ackley(X):
    d = X.shape[1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(X * X, axis=1) / d))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * X), axis=1) / d)
    return -(a + b + 20.0 + np.e)


def neg_rosenbrock(X):
    return -np.sum(100.0 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (1.0 - X[:, :-1]) ** 2, axis=1)


def nk_lookup(unary: np.ndarray, pair: np.ndarray):
    """Sequence score: per-position contributions plus adjacent-pair interactions."""
    L = unary.shape[0]

    def f(tokens):
        tokens = np.asarray(tokens)
        pos = np.arange(L)
        s = unary[pos, tokens].sum(axis=1)
        s += pair[pos[:-1], tokens[:, :-1], tokens[:, 1:]].sum(axis=1)
        return s
    return f


def _reference_extremes(objective, lo, hi, dim, known_max=None, known_min=None):
    def compute():
        rng = np.random.default_rng(REFERENCE_SEED)
        ymin, ymax = math.inf, -math.inf
        chunk = 100_000
        for _ in range(REFERENCE_SAMPLES // chunk):
            y = objective(rng.uniform(lo, hi, size=(chunk, dim)))
            ymin = min(ymin, float(y.min()))
            ymax = max(ymax, float(y.max()))
        src = f"reference sample of {REFERENCE_SAMPLES} uniform points, seed {REFERENCE_SEED}"
        if known_max is not None:
            ymax = known_max
            src += "; analytic maximum"
        if known_min is not None:
            ymin = known_min
            src += "; analytic minimum"
        return ymin, ymax, src
    return compute


def _box(lo, hi, d):
    return np.full(d, float(lo)), np.full(d, float(hi))


def quadratic_bowl(d: int = 8, lo: float = -2.0, hi: float = 2.0, center: float = 0.5) -> OracleTask:
    c = np.full(d, center)
    lo_v, hi_v = _box(lo, hi, d)
    worst = float(-np.sum(np.maximum((lo_v - c) ** 2, (hi_v - c) ** 2)))
    return OracleTask(
        name=f"quadratic-bowl-{d}d", kind="continuous", dim=d,
        objective=neg_quadratic(c), lo=lo_v, hi=hi_v,
        extremes=lambda: (worst, 0.0, "analytic: farthest box corner and bowl center"),
    )


def ackley(d: int = 10, lo: float = -5.0, hi: float = 5.0) -> OracleTask:
    lo_v, hi_v = _box(lo, hi, d)
    return OracleTask(
        name=f"negated-ackley-{d}d", kind="continuous", dim=d,
        objective=neg_ackley, lo=lo_v, hi=hi_v,
        extremes=_reference_extremes(neg_ackley, lo_v, hi_v, d, known_max=0.0),
    )


def rosenbrock(d: int = 6, lo: float = -2.048, hi: float = 2.048) -> OracleTask:
    lo_v, hi_v = _box(lo, hi, d)
    return OracleTask(
        name=f"rosenbrock-valley-{d}d", kind="continuous", dim=d,
        objective=neg_rosenbrock, lo=lo_v, hi=hi_v,
        extremes=_reference_extremes(neg_rosenbrock, lo_v, hi_v, d, known_max=0.0),
    )


def seq_lookup(seq_len: int = 8, alphabet: int = 4, seed: int = 8, pair_scale: float = 1.0) -> OracleTask:
    rng = np.random.default_rng([seed, seq_len, alphabet])
    unary = rng.normal(size=(seq_len, alphabet))
    pair = pair_scale * rng.normal(size=(seq_len - 1, alphabet, alphabet))
    objective = nk_lookup(unary, pair)

    def extremes():
        y = objective(all_sequences(seq_len, alphabet))
        return float(y.min()), float(y.max()), f"exhaustive enumeration of {alphabet ** seq_len} sequences"

    return OracleTask(
        name=f"seq-lookup-{seq_len}x{alphabet}", kind="discrete", dim=seq_len * alphabet,
        objective=objective, seq_len=seq_len, alphabet=alphabet, extremes=extremes,
    )


def all_sequences(seq_len: int, alphabet: int) -> np.ndarray:
    return np.array(list(itertools.product(range(alphabet), repeat=seq_len)), dtype=np.int64)


@functools.cache
def builtin_tasks() -> tuple[OracleTask, ...]:
    return (quadratic_bowl(), ackley(), rosenbrock(), seq_lookup())


def get_task(name: str) -> OracleTask:
    for task in builtin_tasks():
        if task.name == name:
            return task
    known = ", ".join(t.name for t in builtin_tasks())
    raise KeyError(f"unknown task {name!r} (known: {known})")


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    designs: np.ndarray
    scores: np.ndarray
    task: str = ""
    seed: int | None = None
    exclude_top: float = 0.0

    def __post_init__(self):
        X = np.ascontiguousarray(self.designs, dtype=np.float64)
        y = np.ascontiguousarray(self.scores, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ValueError(f"dataset needs N >= 1 rows of designs and scores, got {X.shape} and {y.shape}")
        object.__setattr__(self, "designs", X)
        object.__setattr__(self, "scores", y)

    def __len__(self):
        return self.designs.shape[0]

    @property
    def dim(self) -> int:
        return self.designs.shape[1]

    def top(self, k: int) -> np.ndarray:
        """Indices of the k best-scoring rows, best first; ties keep row order."""
        return np.argsort(-self.scores, kind="stable")[:k]

    def standardized(self) -> tuple[OfflineDataset, float, float]:
        mu = float(self.scores.mean())
        sd = float(self.scores.std()) or 1.0
        return OfflineDataset(self.designs, (self.scores - mu) / sd, self.task, self.seed, self.exclude_top), mu, sd


def make_offline_dataset(
    task: OracleTask,
    n: int,
    exclude_top: float = 0.2,
    seed: int = 0,
    pool_size: int | None = None,
) -> OfflineDataset:
    """Uniform samples from the task domain with the top ``exclude_top`` fraction
    (by score) removed, keeping ``n`` of the remainder.

    The candidate pool has ``pool_size`` designs, by default ``ceil(n / (1 -
    exclude_top))`` plus a small margin (capped at the domain size for discrete
    tasks, which are sampled without replacement).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= exclude_top < 1.0:
        raise ValueError(f"exclude_top must lie in [0, 1), got {exclude_top}")
    if pool_size is None:
        pool_size = int(math.ceil(n / (1.0 - exclude_top))) + (16 if exclude_top > 0 else 0)
    rng = np.random.default_rng([seed, 0xDA7A])
    if task.kind == "continuous":
        pool = rng.uniform(task.lo, task.hi, size=(pool_size, task.dim))
    else:
        size = task.alphabet ** task.seq_len
        pool_size = min(pool_size, size)
        codes = rng.choice(size, size=pool_size, replace=False)
        tokens = (codes[:, None] // task.alphabet ** np.arange(task.seq_len - 1, -1, -1)) % task.alphabet
        pool = task.encode(tokens)
    with oracle_phase("data"):
        y = task.score(pool)
    if exclude_top > 0:
        keep = y < np.quantile(y, 1.0 - exclude_top)
    else:
        keep = np.ones(pool_size, dtype=bool)
    idx = np.flatnonzero(keep)
    if idx.shape[0] < n:
        raise ValueError(
            f"only {idx.shape[0]} designs survive truncation of a {pool_size}-design pool; {n} requested"
        )
    idx = np.sort(rng.choice(idx, size=n, replace=False))
    return OfflineDataset(pool[idx], y[idx], task.name, seed, exclude_top)


def normalize_score(y, y_min: float, y_max: float):
    if not y_max > y_min:
        raise ValueError(f"y_max ({y_max}) must exceed y_min ({y_min})")
    out = (np.asarray(y, dtype=np.float64) - y_min) / (y_max - y_min)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# CSV


def save_dataset_csv(dataset: OfflineDataset, path) -> None:
    path = Path(path)
    d = dataset.dim
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["y"])
        for x, y in zip(dataset.designs, dataset.scores):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def load_dataset_csv(path, task: str = "") -> OfflineDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: no rows")
    header = rows[0]
    ncol = len(header)
    expected = [f"x{i}" for i in range(ncol - 1)] + ["y"]
    if ncol < 2 or [h.strip() for h in header] != expected:
        raise DatasetFormatError(f"{path}: row 1: header must be x0,...,x{{d-1}},y")
    body = [(i + 1, r) for i, r in enumerate(rows) if i > 0 and r]
    if not body:
        raise DatasetFormatError(f"{path}: no rows")
    data = np.empty((len(body), ncol))
    for i, (lineno, row) in enumerate(body):
        if len(row) != ncol:
            raise DatasetFormatError(f"{path}: row {lineno}: expected {ncol} columns, got {len(row)}")
        try:
            data[i] = [float(c) for c in row]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: row {lineno}: non-numeric cell ({exc})") from None
    return OfflineDataset(data[:, :-1], data[:, -1], task)
