"""Scan of the collapse threshold epsilon.

For each epsilon an ensemble is run and compared with the unitary
prediction.  The smallest epsilon whose deviation exceeds a detectability
threshold is the bound an experiment of that sensitivity would set.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from ..channels import CollapseConfig
from ..ensemble import EnsembleResult, EnsembleSpec, grouped_mean, run_ensemble
from ..errors import ConfigError
from .adapters import DecayExperiment, ScatteringExperiment
from .decay import DecayConfig, FriedrichsModel
from .scattering import ScatteringConfig, ScatteringSimulation

SCAN_COLUMNS = ("epsilon", "n", "n_collapses", "mean_collapse_time", "observable", "observable_stderr",
                "oqt_observable", "deviation", "detectable")


@dataclass
class ScanRow:
    epsilon: float
    n: int
    n_collapses: int
    mean_collapse_time: float | None
    observable: float
    observable_stderr: float | None
    oqt_observable: float
    deviation: float
    detectable: bool

    def as_list(self) -> list:
        return [getattr(self, c) for c in SCAN_COLUMNS]


@dataclass
class ScanResult:
    kind: str
    threshold: float
    rows: list[ScanRow]
    results: list[EnsembleResult]

    @property
    def smallest_detectable(self) -> float | None:
        return next((r.epsilon for r in self.rows if r.detectable), None)


def _check_grid(eps: Sequence[float]) -> list[float]:
    eps = [float(e) for e in eps]
    if not eps:
        raise ConfigError("epsilon grid is empty", "scan.epsilons")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("epsilon grid must be strictly ascending", "scan.epsilons")
    if eps[0] < 0 or eps[-1] >= 1:
        raise ConfigError("epsilon values must lie in [0, 1)", "scan.epsilons")
    return eps


def _row(eps: float, res: EnsembleResult, value: float, stderr, oqt: float, deviation: float,
         threshold: float) -> ScanRow:
    times = [r.time for r in res.records if r.time is not None]
    return ScanRow(eps, res.stats.n, len(times), grouped_mean(times) if times else None, value, stderr, oqt,
                   deviation, bool(deviation > threshold))


def epsilon_scan(cfg: ScatteringConfig | DecayConfig, epsilons: Sequence[float], n: int, master_seed: int,
                 threshold: float = 0.05, threads: int = 1,
                 simulation: ScatteringSimulation | None = None) -> ScanResult:
    """Run one pqt ensemble per epsilon, all with the same ``master_seed``.

    The observable is the fringe visibility for scattering and the largest
    relative exponential-fit residual for decay; ``deviation`` is its
    distance from the unitary value (for decay, the largest absolute gap
    between the ensemble and unitary survival curves).  A scattering
    ``simulation`` built from a pqt config may be passed in to reuse its
    unitary run.
    """
    eps = _check_grid(epsilons)
    spec = EnsembleSpec(n, master_seed, threads)
    rows, results = [], []
    if isinstance(cfg, ScatteringConfig):
        base = replace(cfg, mode="pqt", collapse=cfg.collapse or CollapseConfig())
        sim = simulation if simulation is not None else ScatteringSimulation(base)
        sim.prefix(watch=eps)
        for e in eps:
            res = run_ensemble(ScatteringExperiment(base, sim, e), spec)
            o = res.stats.observable
            rows.append(_row(e, res, o["value"], o["stderr"], o["oqt_value"], o["deviation"], threshold))
            results.append(res)
        return ScanResult("scattering", threshold, rows, results)
    if isinstance(cfg, DecayConfig):
        model = FriedrichsModel(cfg)
        oqt = run_ensemble(DecayExperiment(replace(cfg, mode="oqt"), model), EnsembleSpec(1, master_seed))
        oqt_res = oqt.stats.observable["max_abs_residual"]
        collapse = cfg.collapse or CollapseConfig(window_steps=2)
        for e in eps:
            res = run_ensemble(DecayExperiment(replace(cfg, mode="pqt", collapse=replace(collapse, epsilon=e)),
                                               model), spec)
            o = res.stats.observable
            rows.append(_row(e, res, o["max_abs_residual"], o.get("max_abs_residual_stderr"), oqt_res,
                             o["deviation_from_oqt"], threshold))
            results.append(res)
        return ScanResult("decay", threshold, rows, results)
    raise ConfigError("the epsilon scan supports scattering and decay configs", "experiment")
