"""Reproducible Monte Carlo over trajectories.

Trajectory ``i`` draws only from ``derive_stream(master_seed, i)``, a
Philox generator keyed by the pair ``(master_seed, i)``.  Records are
merged in index order, so results do not depend on the number of worker
threads or on completion order.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np
from scipy import stats as sps

from .errors import ConfigError, TrajectoryError

BOOTSTRAP_RESAMPLES = 1000
ALPHA = 0.01
CONFIDENCE = 0.95
# reserved stream index for bootstrap resampling; trajectories never reach it
BOOTSTRAP_INDEX = 2**63


def derive_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream: a pure function of ``(master_seed, index)``."""
    key = np.array([int(master_seed) % 2**64, int(index) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class EnsembleSpec:
    n_trajectories: int = 1000
    master_seed: int = 20240601
    threads: int = 1

    def __post_init__(self):
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be a positive integer", "ensemble.n_trajectories")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must fit in 64 bits", "ensemble.master_seed")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ConfigError("threads must be a positive integer", "ensemble.threads")


@dataclass
class TrajectoryRecord:
    index: int
    outcome: str
    time: float | None = None
    probabilities: dict[str, float] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)


class Experiment(Protocol):
    """What :func:`run_ensemble` needs from an experiment."""

    name: str
    alphabet: tuple[str, ...]
    csv_columns: tuple[str, ...]

    def prepare(self) -> None: ...

    def trajectory(self, index: int, rng: np.random.Generator) -> TrajectoryRecord: ...

    def observable(self, records: Sequence[TrajectoryRecord], rng: np.random.Generator) -> dict: ...

    def csv_row(self, record: TrajectoryRecord) -> list: ...


# --------------------------------------------------------------------------
# statistics


def wilson_interval(k: int, n: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    z = float(sps.norm.ppf(0.5 + confidence / 2))
    p = k / n
    den = 1 + z**2 / n
    centre = (p + z**2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return (lo, hi)


def grouped_mean(values) -> float:
    """Mean as a sum over distinct values weighted by ``count / n``; exact for constant input."""
    uniq, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
    return float(np.sum(uniq * (counts / counts.sum())))


def grouped_mean_rows(rows: np.ndarray) -> np.ndarray:
    """Row-wise version of :func:`grouped_mean`; identical members give their own row back exactly."""
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    w = np.bincount(inv.ravel(), minlength=len(uniq)) / len(rows)
    return (w[:, None] * uniq).sum(axis=0)


def bootstrap_stderr(statistic: Callable[[np.ndarray], float], n: int, rng: np.random.Generator,
                     resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    """Standard deviation of ``statistic(indices)`` over index resamples with replacement."""
    vals = np.array([statistic(rng.integers(0, n, size=n)) for _ in range(resamples)])
    return float(vals.std(ddof=1))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int
    passed: bool
    diagnostic: str = ""


def channel_frequency_test(records: Sequence[TrajectoryRecord] | dict[str, int], expected: dict[str, float],
                           alpha: float = ALPHA) -> ChiSquareResult:
    """Pearson chi-square of observed outcome counts against ``expected`` probabilities."""
    counts = dict(records) if isinstance(records, dict) else Counter(r.outcome for r in records)
    n = sum(counts.values())
    if n < 100:
        raise ValueError(f"need at least 100 records, got {n}")
    unknown = set(counts) - set(expected)
    if unknown:
        return ChiSquareResult(math.inf, 0.0, 0, False, f"outcomes {sorted(unknown)} have no expected probability")
    obs, exp = [], []
    for label, p in expected.items():
        k = counts.get(label, 0)
        if p == 0:
            if k:
                return ChiSquareResult(math.inf, 0.0, 0, False,
                                       f"outcome {label!r} has probability 0 but {k} counts")
            continue
        obs.append(k)
        exp.append(p * n)
    obs, exp = np.array(obs, dtype=float), np.array(exp)
    exp *= n / exp.sum()
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(obs) - 1
    p_value = float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return ChiSquareResult(stat, p_value, dof, p_value > alpha)


@dataclass
class EnsembleStats:
    n: int
    master_seed: int
    frequencies: dict[str, float]
    intervals: dict[str, tuple[float, float]]
    event_time_mean: float | None
    event_time_std: float | None
    n_events: int
    observable: dict
    methods: dict = field(default_factory=lambda: {"intervals": f"Wilson {CONFIDENCE:.0%}",
                                                   "observable_error": f"bootstrap, {BOOTSTRAP_RESAMPLES} resamples"})

    def to_json(self) -> dict:
        d = asdict(self)
        d["intervals"] = {k: list(v) for k, v in self.intervals.items()}
        return d


def summarize(records: Sequence[TrajectoryRecord], alphabet: Sequence[str], master_seed: int,
              observable: dict) -> EnsembleStats:
    n = len(records)
    counts = Counter(r.outcome for r in records)
    labels = list(alphabet) + sorted(set(counts) - set(alphabet))
    freqs = {k: counts.get(k, 0) / n for k in labels}
    times = np.array([r.time for r in records if r.time is not None], dtype=float)
    mean = grouped_mean(times) if times.size else None
    return EnsembleStats(
        n=n,
        master_seed=master_seed,
        frequencies=freqs,
        intervals={k: wilson_interval(counts.get(k, 0), n) for k in labels},
        event_time_mean=mean,
        event_time_std=float(np.sqrt(np.sum((times - mean) ** 2) / (times.size - 1))) if times.size > 1
        else (0.0 if times.size else None),
        n_events=int(times.size),
        observable=observable,
    )


# --------------------------------------------------------------------------
# running


@dataclass
class EnsembleResult:
    stats: EnsembleStats
    records: list[TrajectoryRecord]


def run_ensemble(experiment: Experiment, spec: EnsembleSpec) -> EnsembleResult:
    """Run ``spec.n_trajectories`` members; any failure aborts with the lowest failing index."""
    experiment.prepare()

    def one(i: int):
        try:
            return experiment.trajectory(i, derive_stream(spec.master_seed, i))
        except Exception as exc:  # noqa: BLE001 - re-raised with the index attached
            return TrajectoryError(i, exc)

    indices = range(spec.n_trajectories)
    if spec.threads == 1:
        results = [one(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            results = list(pool.map(one, indices))
    for r in results:
        if isinstance(r, TrajectoryError):
            raise r from r.cause
    obs = experiment.observable(results, derive_stream(spec.master_seed, BOOTSTRAP_INDEX))
    return EnsembleResult(summarize(results, experiment.alphabet, spec.master_seed, obs), results)


# --------------------------------------------------------------------------
# output


def fmt(value) -> str:
    """Shortest round-trip text for numbers; empty for ``None``."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_trajectories_csv(path, experiment: Experiment, records: Sequence[TrajectoryRecord]) -> None:
    write_csv(path, experiment.csv_columns, (experiment.csv_row(r) for r in records))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_stats_json(path, stats: EnsembleStats, extra: dict | None = None) -> None:
    """stats.json: frequencies, intervals, observable, seeds and any ``extra`` sections."""
    doc = stats.to_json()
    doc["seeds"] = {"master_seed": stats.master_seed, "stream": "Philox(key=[master_seed, index])",
                    "bootstrap_stream_index": BOOTSTRAP_INDEX}
    doc.update(extra or {})
    write_json(path, doc)
