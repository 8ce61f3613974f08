"""Decay of a discrete level into a discretized continuum (Friedrichs model).

    H = E_d |d><d| + sum_j w_j |j><j| + sum_j g_j (|d><j| + |j><d|),   w_j = j dw,  j = 1..N_c

Unitary evolution is exact through one dense diagonalization.  In pqt
mode the channels are the undecayed level (an isolated level plays the
role of the bound channel) and the decayed continuum (free evolution,
diagonal in the mode basis).  A trigger resets the state to ``|d>`` or
ends the trajectory as decayed.

Because every reset restarts from the same state, one unitary cycle fixes
the trigger time ``tau_c`` and the per-cycle decay probability; the
trajectories then differ only in their draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from ..channels import ChannelDecomposition, CollapseConfig, CollapseEngine
from ..errors import ConfigError

MODES = ("oqt", "pqt")


@dataclass(frozen=True)
class DecayConfig:
    """Level-plus-continuum model and its sampling.

    Parameters
    ----------
    E_d
        Energy of the discrete level.
    n_modes
        Number of continuum modes ``N_c``; mode ``j`` sits at ``j * cutoff / n_modes``.
    cutoff
        Upper band edge ``Omega``.
    coupling
        Coupling scale ``g``.
    family
        ``"constant"``: ``g_j = g``; ``"semicircle"``: ``g_j = g (1 - x_j^2)^(1/4)``
        with ``x_j`` the mode energy relative to the band centre in units of
        the half-width.
    t_max
        Horizon of the survival curve.
    sample_dt
        Spacing of the output curve.
    dt
        Trigger-evaluation step in pqt mode.
    fit_window
        Early window for the exponential fit of the unitary curve.
    """

    E_d: float = 1.0
    n_modes: int = 1024
    cutoff: float = 4.0
    coupling: float = 0.011
    family: str = "constant"
    t_max: float = 80.0
    sample_dt: float = 0.1
    dt: float = 5e-3
    mode: str = "oqt"
    collapse: CollapseConfig | None = None
    fit_window: tuple[float, float] = (2.0, 20.0)
    deviation_threshold: float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be 'oqt' or 'pqt', got {self.mode!r}", "mode")
        if self.mode == "pqt" and self.collapse is None:
            raise ConfigError("pqt mode requires a collapse section", "collapse")
        if int(self.n_modes) != self.n_modes or self.n_modes < 256:
            raise ConfigError(f"n_modes must be an integer >= 256, got {self.n_modes!r}", "decay.n_modes")
        if self.family not in ("constant", "semicircle"):
            raise ConfigError(f"unknown coupling family {self.family!r}", "decay.family")
        if not self.cutoff > 0:
            raise ConfigError("cutoff must be positive", "decay.cutoff")
        if not self.coupling >= 0:
            raise ConfigError("coupling must be nonnegative", "decay.coupling")
        for name in ("t_max", "sample_dt", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", f"decay.{name}")
        n = self.t_max / self.sample_dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError("t_max must be a multiple of sample_dt", "decay.sample_dt")
        if self.recurrence_time <= self.t_max:
            raise ConfigError(f"recurrence time 2 pi / dw = {self.recurrence_time:.4g} does not exceed "
                              f"t_max = {self.t_max}; use more modes", "decay.n_modes")
        lo, hi = self.fit_window
        if not 0 <= lo < hi <= self.t_max:
            raise ConfigError("fit_window must be an increasing interval inside [0, t_max]", "decay.fit_window")

    @property
    def spacing(self) -> float:
        return self.cutoff / self.n_modes

    @property
    def recurrence_time(self) -> float:
        return 2 * np.pi / self.spacing

    @property
    def energies(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n_modes + 1)

    def coupling_at(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.family == "constant":
            return np.where((w > 0) & (w <= self.cutoff), self.coupling, 0.0)
        x = (w - 0.5 * self.cutoff) / (0.5 * self.cutoff)
        return self.coupling * np.clip(1 - x**2, 0.0, None) ** 0.25

    @property
    def couplings(self) -> np.ndarray:
        return self.coupling_at(self.energies)

    @property
    def golden_rule_rate(self) -> float:
        """2 pi g(E_d)^2 rho(E_d) with the mode density rho = 1/dw."""
        return float(2 * np.pi * self.coupling_at(self.E_d) ** 2 / self.spacing)

    @property
    def times(self) -> np.ndarray:
        n = int(round(self.t_max / self.sample_dt))
        return self.sample_dt * np.arange(n + 1)


def reference_decay_config(mode: str = "oqt", epsilon: float = 1e-2, **overrides) -> DecayConfig:
    collapse = CollapseConfig(epsilon=epsilon, window_steps=2) if mode == "pqt" else None
    return DecayConfig(mode=mode, collapse=collapse, **overrides)


class FriedrichsModel:
    """Dense diagonalization of the level-plus-continuum Hamiltonian; index 0 is ``|d>``."""

    def __init__(self, cfg: DecayConfig):
        self.cfg = cfg
        n = cfg.n_modes + 1
        H = np.zeros((n, n))
        H[0, 0] = cfg.E_d
        H[np.arange(1, n), np.arange(1, n)] = cfg.energies
        H[0, 1:] = H[1:, 0] = cfg.couplings
        self.H = H
        self.evals, self.evecs = sla.eigh(H)
        self.weights = self.evecs[0] ** 2
        self._ket = self.evecs[0].copy()

    def amplitude(self, t) -> np.ndarray:
        """<d|exp(-iHt)|d>."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(-1j * np.outer(t, self.evals)) @ self.weights

    def survival(self, t) -> np.ndarray:
        return np.abs(self.amplitude(t)) ** 2

    def state(self, t: float) -> np.ndarray:
        return self.evecs @ (np.exp(-1j * self.evals * t) * self._ket)


class DecayChannelModel:
    """Channel split for the decay model: B = span{|d>}, A = the continuum."""

    def __init__(self, cfg: DecayConfig, window_steps: int, p_min: float):
        self.cfg = cfg
        self.dt = cfg.dt
        self.p_min = p_min
        tw = window_steps * cfg.dt
        self.phase_A = np.exp(-1j * cfg.energies * tw)
        self.phase_B = np.exp(-1j * cfg.E_d * tw)
        self.g = cfg.couplings

    def decompose(self, a: np.ndarray, t: float) -> ChannelDecomposition:
        comp_b = np.zeros_like(a)
        comp_b[0] = a[0]
        comp_a = a.copy()
        comp_a[0] = 0.0
        return ChannelDecomposition(comp_a, comp_b, 1.0, t, self.p_min)

    @staticmethod
    def _overlap2(x, y) -> float:
        return float(min(abs(np.vdot(x, y)) ** 2 / (np.vdot(x, x).real * np.vdot(y, y).real), 1.0))

    def fidelity(self, channel: str, lagged: ChannelDecomposition, current: ChannelDecomposition) -> float:
        if channel == "A":
            return self._overlap2(lagged.comp_A[1:] * self.phase_A, current.comp_A[1:])
        return self._overlap2(lagged.comp_B[:1] * self.phase_B, current.comp_B[:1])

    def interaction_energies(self, a: np.ndarray) -> tuple[float, float]:
        # both channel Hamiltonians drop the level-continuum coupling
        v = float(2 * np.real(np.conj(a[0]) * np.dot(self.g, a[1:])))
        return v, v


@dataclass
class DecayCycle:
    """One unitary stretch from ``|d>`` up to the first trigger (or the horizon)."""

    tau: float | None
    p_decay: float
    F_A: float | None
    F_B: float | None
    rows: list = field(default_factory=list)


def first_trigger(cfg: DecayConfig, model: FriedrichsModel | None = None) -> DecayCycle:
    """Run the collapse engine on the unitary evolution from ``|d>``."""
    model = model or FriedrichsModel(cfg)
    ccfg = cfg.collapse
    W = ccfg.window_steps
    engine = CollapseEngine(ccfg, DecayChannelModel(cfg, W, ccfg.p_min), log_stride=None)
    n = int(np.floor(cfg.t_max / cfg.dt + 1e-9))
    for k in range(n + 1):
        t = k * cfg.dt
        dec, d = engine.observe(k, t, model.state(t), lambda: model.state(t - W * cfg.dt))
        if dec.fired:
            _, fa, fb = engine.fidelity_trace[-1]
            return DecayCycle(t, d.p_A, fa, fb)
    return DecayCycle(None, 0.0, None, None)


@dataclass
class DecayResult:
    times: np.ndarray
    survival: np.ndarray
    mode: str
    decay_time: float | None = None
    cycle: DecayCycle | None = None


def _within_cycle(model: FriedrichsModel, cycle: DecayCycle, times: np.ndarray) -> np.ndarray:
    """Undecayed probability of a surviving trajectory: reset at every multiple of ``tau``."""
    if cycle.tau is None:
        return model.survival(times)
    return model.survival(times - cycle.tau * np.floor(times / cycle.tau + 1e-9))


def run_decay(cfg: DecayConfig, rng: np.random.Generator | None = None,
              model: FriedrichsModel | None = None, cycle: DecayCycle | None = None) -> DecayResult:
    """Survival curve; in pqt mode also one trajectory's decay time.

    A pqt trajectory's curve is ``|<d|Phi(t)>|^2``, which is zero after it
    has decayed.  The ensemble average of these curves is the survival
    probability.
    """
    model = model or FriedrichsModel(cfg)
    times = cfg.times
    if cfg.mode == "oqt":
        return DecayResult(times, model.survival(times), "oqt")
    cycle = cycle or first_trigger(cfg, model)
    t_dec = sample_decay_time(cycle, cfg.t_max, rng)
    curve = _within_cycle(model, cycle, times)
    if t_dec is not None:
        curve = np.where(times < t_dec, curve, 0.0)
    return DecayResult(times, curve, "pqt", t_dec, cycle)


def sample_decay_time(cycle: DecayCycle, t_max: float, rng: np.random.Generator | None) -> float | None:
    """Draw one ``u`` per trigger; the first ``u < |c_A|^2`` ends the trajectory."""
    if cycle.tau is None or cycle.p_decay == 0.0:
        return None
    if rng is None:
        raise ValueError("a pqt decay trajectory needs a random stream")
    n = int(np.floor(t_max / cycle.tau + 1e-9))
    u = rng.random(n)
    hits = np.flatnonzero(u < cycle.p_decay)
    return None if hits.size == 0 else float((hits[0] + 1) * cycle.tau)


def ensemble_survival(cfg: DecayConfig, model: FriedrichsModel, cycle: DecayCycle,
                      decay_times) -> np.ndarray:
    times = cfg.times
    dec = np.array([np.inf if t is None else t for t in decay_times])
    alive = (dec[None, :] > times[:, None] + 1e-12).mean(axis=1)
    return alive * _within_cycle(model, cycle, times)


# --------------------------------------------------------------------------
# fitting


def _loglinear(times, P, window) -> tuple[float, float]:
    times = np.asarray(times, dtype=float)
    P = np.asarray(P, dtype=float)
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    if sel.sum() < 2:
        raise ValueError("fit window holds fewer than two samples")
    if np.any(P[sel] <= 0):
        raise ValueError("survival must be strictly positive on the fit window")
    slope, intercept = np.polyfit(times[sel], np.log(P[sel]), 1)
    return float(slope), float(intercept)


def fit_exponential(times, P, window: tuple[float, float]) -> tuple[float, np.ndarray]:
    """Least squares on ``log P`` over ``window``.

    Returns the fitted rate and the relative residuals ``P / fit - 1`` at
    every input time.
    """
    slope, intercept = _loglinear(times, P, window)
    fit = np.exp(intercept + slope * np.asarray(times, dtype=float))
    return -slope, np.asarray(P, dtype=float) / fit - 1.0


def fitted_curve(times, P, window: tuple[float, float]) -> np.ndarray:
    """The exponential fitted by :func:`fit_exponential`, evaluated at ``times``."""
    slope, intercept = _loglinear(times, P, window)
    return np.exp(intercept + slope * np.asarray(times, dtype=float))


def deviation_onset(times, residuals, threshold: float = 0.05, after: float = 0.0) -> float | None:
    """First sample time ``t* >= after`` at which ``|residual|`` exceeds ``threshold``."""
    times = np.asarray(times)
    hit = np.flatnonzero((times >= after) & (np.abs(np.asarray(residuals)) > threshold))
    return float(times[hit[0]]) if hit.size else None


@dataclass
class DecayAnalysis:
    rate: float
    residuals: np.ndarray
    t_star: float | None


def analyze_oqt(cfg: DecayConfig, times, P) -> DecayAnalysis:
    rate, res = fit_exponential(times, P, cfg.fit_window)
    return DecayAnalysis(rate, res, deviation_onset(times, res, cfg.deviation_threshold, cfg.fit_window[1]))


def with_mode(cfg: DecayConfig, mode: str, epsilon: float | None = None) -> DecayConfig:
    collapse = cfg.collapse
    if mode == "pqt":
        collapse = replace(collapse or CollapseConfig(window_steps=2),
                           **({} if epsilon is None else {"epsilon": epsilon}))
    return replace(cfg, mode=mode, collapse=collapse)
