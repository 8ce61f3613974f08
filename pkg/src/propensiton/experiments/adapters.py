"""Experiment adapters for :func:`propensiton.ensemble.run_ensemble`.

Each adapter does its deterministic work once in ``prepare`` and keeps
per-trajectory work down to the random draws that distinguish members.
"""
from __future__ import annotations

import threading
from typing import Sequence

import numpy as np
from scipy import stats as sps

from ..ensemble import TrajectoryRecord, bootstrap_stderr, channel_frequency_test, grouped_mean_rows
from .decay import DecayConfig, FriedrichsModel, _within_cycle, deviation_onset, ensemble_survival, \
    first_trigger, fit_exponential, sample_decay_time
from .plate import PlateConfig, draw_site, site_probabilities
from .scattering import ScatteringConfig, ScatteringSimulation, fringe_moments, readout_amplitudes, \
    trajectory_outcome, visibility_from_moments
from .spheres import SphereToyConfig, run_sphere_toy


class ScatteringExperiment:
    """Ensemble over collapse draws of one scattering config.

    A shared :class:`ScatteringSimulation` (with a prefix that watches
    ``epsilon``) may be passed in so several epsilons reuse one unitary run.
    """

    name = "scattering"
    alphabet = ("A", "B", "none")
    csv_columns = ("traj", "outcome", "t_collapse", "cA2", "cB2", "V_contribution",
                   "alpha_A_re", "alpha_A_im", "alpha_B_re", "alpha_B_im")

    def __init__(self, cfg: ScatteringConfig, sim: ScatteringSimulation | None = None,
                 epsilon: float | None = None):
        self.cfg = cfg
        self.sim = sim
        self.epsilon = epsilon
        self.run = None
        self._lock = threading.Lock()

    def prepare(self) -> None:
        with self._lock:
            if self.sim is None:
                self.sim = ScatteringSimulation(self.cfg)
            eps = self.sim.collapse.epsilon if self.epsilon is None else self.epsilon
            self.epsilon = eps
            self.run = self.sim.prefix(watch=(eps,))
            _, ref = self.sim.readout_point(self.run, eps)
            self.reference_amplitudes = readout_amplitudes(ref, ref)
            self.reference_visibility = visibility_from_moments(fringe_moments(self.reference_amplitudes),
                                                                self.cfg.readout)

    @property
    def triggers(self) -> bool:
        return self.cfg.mode == "pqt" and self.epsilon in self.run.triggers

    def trajectory(self, index: int, rng: np.random.Generator) -> TrajectoryRecord:
        # oqt members and members that never trigger consume no draws
        u = float(rng.random()) if self.triggers else None
        out = trajectory_outcome(self.sim, self.run, u, self.epsilon, self.cfg.mode)
        amps = out["amplitudes"]
        v = visibility_from_moments(fringe_moments(amps), self.cfg.readout)
        return TrajectoryRecord(index, out["outcome"], out["t_collapse"],
                                {"A": float(out["cA2"]), "B": float(out["cB2"])},
                                {"amplitudes": amps, "V": v, "u": u, "F_A": out["F_A"], "F_B": out["F_B"]})

    def observable(self, records: Sequence[TrajectoryRecord], rng: np.random.Generator) -> dict:
        moments = fringe_moments(np.array([r.diagnostics["amplitudes"] for r in records]))
        ro = self.cfg.readout

        # grouped mean: a collapse-free ensemble reproduces the single-state value exactly
        def vis(idx):
            return visibility_from_moments(grouped_mean_rows(moments[idx])[None, :], ro)

        V = vis(np.arange(len(records)))
        return {"name": "visibility", "value": V, "stderr": bootstrap_stderr(vis, len(records), rng),
                "oqt_value": self.reference_visibility, "deviation": abs(V - self.reference_visibility),
                "epsilon": self.epsilon}

    def csv_row(self, r: TrajectoryRecord) -> list:
        a = r.diagnostics["amplitudes"]
        return [r.index, r.outcome, r.time, r.probabilities["A"], r.probabilities["B"], r.diagnostics["V"],
                a[0].real, a[0].imag, a[1].real, a[1].imag]


class DecayExperiment:
    """Ensemble of decay trajectories; oqt members are identical and draw nothing."""

    name = "decay"
    alphabet = ("decayed", "undecayed", "none")
    csv_columns = ("traj", "outcome", "t_decay", "p_decay_per_trigger")

    def __init__(self, cfg: DecayConfig, model: FriedrichsModel | None = None):
        self.cfg = cfg
        self.model = model
        self.cycle = None
        self._lock = threading.Lock()

    def prepare(self) -> None:
        with self._lock:
            if self.model is None:
                self.model = FriedrichsModel(self.cfg)
            if self.cfg.mode == "pqt" and self.cycle is None:
                self.cycle = first_trigger(self.cfg, self.model)
        self.oqt_curve = self.model.survival(self.cfg.times)

    def trajectory(self, index: int, rng: np.random.Generator) -> TrajectoryRecord:
        if self.cfg.mode == "oqt":
            return TrajectoryRecord(index, "none")
        c = self.cycle
        t = sample_decay_time(c, self.cfg.t_max, rng)
        return TrajectoryRecord(index, "undecayed" if t is None else "decayed", t,
                                {"decayed": c.p_decay, "undecayed": 1.0 - c.p_decay},
                                {"tau": c.tau})

    def survival(self, records: Sequence[TrajectoryRecord]) -> np.ndarray:
        if self.cfg.mode == "oqt":
            return self.oqt_curve
        return ensemble_survival(self.cfg, self.model, self.cycle, [r.time for r in records])

    def observable(self, records: Sequence[TrajectoryRecord], rng: np.random.Generator) -> dict:
        cfg = self.cfg
        times = cfg.times
        S = self.survival(records)
        full = (0.0, cfg.t_max)
        rate, res = fit_exponential(times, S, full)
        out = {"name": "survival", "golden_rule_rate": cfg.golden_rule_rate, "rate_full_horizon": rate,
               "max_abs_residual": float(np.max(np.abs(res))),
               "deviation_from_oqt": float(np.max(np.abs(S - self.oqt_curve)))}
        early_rate, early_res = fit_exponential(times, S, cfg.fit_window)
        out["rate_fit_window"] = early_rate
        out["t_star"] = deviation_onset(times, early_res, cfg.deviation_threshold, cfg.fit_window[1])
        if cfg.mode == "pqt":
            out["tau_trigger"] = self.cycle.tau
            out["p_decay_per_trigger"] = self.cycle.p_decay
            dec = np.array([np.inf if r.time is None else r.time for r in records])
            within = _within_cycle(self.model, self.cycle, times)

            def max_res(idx):
                d = np.sort(dec[idx])
                alive = 1.0 - np.searchsorted(d, times + 1e-12, side="right") / len(d)
                return float(np.max(np.abs(fit_exponential(times, alive * within, full)[1])))

            out["max_abs_residual_stderr"] = bootstrap_stderr(max_res, len(records), rng)
        return out

    def csv_row(self, r: TrajectoryRecord) -> list:
        return [r.index, r.outcome, r.time, r.probabilities.get("decayed")]


class PlateExperiment:
    name = "plate"
    csv_columns = ("traj", "site")

    def __init__(self, cfg: PlateConfig):
        self.cfg = cfg
        self.alphabet = tuple(str(i) for i in range(len(cfg.cells))) + ("none",)
        self.probs = None

    def prepare(self) -> None:
        if self.probs is None:
            self.probs = site_probabilities(self.cfg)
        self.expected = dict(zip(self.alphabet, map(float, self.probs)))

    def trajectory(self, index: int, rng: np.random.Generator) -> TrajectoryRecord:
        site = draw_site(self.probs, float(rng.random()))
        label = "none" if site is None else str(site)
        return TrajectoryRecord(index, label, None, {label: self.expected[label]}, {"site": site})

    def observable(self, records: Sequence[TrajectoryRecord], rng: np.random.Generator) -> dict:
        out = {"name": "site_frequencies", "expected": self.expected}
        if len(records) >= 100:
            chi = channel_frequency_test(records, self.expected)
            out.update(chi_square=chi.statistic, dof=chi.dof, p_value=chi.p_value, passed=chi.passed,
                       diagnostic=chi.diagnostic)
        return out

    def csv_row(self, r: TrajectoryRecord) -> list:
        return [r.index, r.diagnostics["site"]]


class SphereExperiment:
    """Independent runs of the sphere toy; the outcome is the first colliding pair."""

    name = "sphere_toy"
    csv_columns = ("traj", "n_events", "first_t", "first_pair")

    def __init__(self, cfg: SphereToyConfig):
        self.cfg = cfg
        n = len(cfg.centers)
        self.alphabet = tuple(f"{i}-{j}" for i in range(n) for j in range(i + 1, n)) + ("none",)

    def prepare(self) -> None:
        pass

    def trajectory(self, index: int, rng: np.random.Generator) -> TrajectoryRecord:
        run = run_sphere_toy(self.cfg, rng)
        if not run.events:
            return TrajectoryRecord(index, "none", None, {}, {"events": []})
        e = run.events[0]
        return TrajectoryRecord(index, f"{e.pair[0]}-{e.pair[1]}", e.t, {}, {"events": run.events})

    def observable(self, records: Sequence[TrajectoryRecord], rng: np.random.Generator) -> dict:
        disp, scaled = [], []
        for r in records:
            for e in r.diagnostics["events"]:
                for old, rad, new in zip(e.old_centers, e.old_radii, e.new_centers):
                    d = np.subtract(new, old)
                    disp.append(d)
                    if rad > 0:
                        scaled.append((np.linalg.norm(d) / rad) ** 3)
        out = {"name": "relocation", "n_relocations": len(disp)}
        if disp:
            disp = np.array(disp)
            out["mean_displacement"] = disp.mean(axis=0)
            out["mean_displacement_stderr"] = disp.std(axis=0, ddof=1) / np.sqrt(len(disp)) if len(disp) > 1 \
                else np.zeros(3)
        if self.cfg.relocation == "uniform" and len(scaled) >= 2:
            # uniform in a ball <=> (|d| / R)^3 uniform on [0, 1]
            ks = sps.kstest(scaled, "uniform")
            out["ks_statistic"], out["ks_p_value"] = float(ks.statistic), float(ks.pvalue)
        return out

    def csv_row(self, r: TrajectoryRecord) -> list:
        ev = r.diagnostics["events"]
        return [r.index, len(ev), r.time, r.outcome]

    @staticmethod
    def event_rows(records: Sequence[TrajectoryRecord]):
        for r in records:
            for e in r.diagnostics["events"]:
                yield [r.index, e.t, e.pair[0], e.pair[1], *e.new_centers[0], *e.new_centers[1]]

    event_columns = ("traj", "t", "i", "j", "xi", "yi", "zi", "xj", "yj", "zj")


def make_experiment(kind: str, cfg):
    return {"scattering": ScatteringExperiment, "decay": DecayExperiment, "plate": PlateExperiment,
            "sphere_toy": SphereExperiment}[kind](cfg)
