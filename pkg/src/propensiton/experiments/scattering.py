"""Inelastic three-body scattering with an interference readout.

Particle ``a`` hits the bound pair ``(bc)``.  Afterwards the state is a
superposition of the elastic channel B (pair still bound) and the breakup
channel A.  In unitary (``oqt``) mode the superposition persists and the two
channels interfere at the recombiner; in ``pqt`` mode the collapse engine
picks one channel as soon as a channel fidelity passes ``1 - epsilon``.

The recombiner is an idealized two-port interferometer whose input ports
are mode-matched to the unitary run's channel states at the readout instant.
A state with channel amplitudes ``alpha_A, alpha_B`` on those ports
produces the fringe pattern

    I(x) = |alpha_A exp(i k x / 2) + alpha_B exp(-i k x / 2)|^2

on the common output axis.  The free legs to the recombiner evolve each
channel with its own Hamiltonian, which is unitary within the channel and
so leaves the mode-matched amplitudes unchanged; it is not simulated.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..channels import (
    CHANNELS,
    ChannelDecomposition,
    CollapseConfig,
    CollapseEngine,
    CollapseEvent,
    JacobiChannelModel,
    collapse_apply,
    collapse_check,
)
from ..dynamics import (
    HamiltonianSpec,
    ParticleSet,
    Potential,
    PotentialSet,
    ground_state_imaginary_time,
    make_stepper,
)
from ..errors import ConfigError, PQTError, ReadoutError
from ..numerics import BOUNDARY_FRACTION, BOUNDARY_TOL, Grid, WaveFunction, boundary_mass, check_boundary, product_state
from ..numerics import gaussian_profile

MODES = ("oqt", "pqt")


@dataclass(frozen=True)
class GridSpec:
    n_R: int = 256
    L_R: float = 180.0
    n_r: int = 256
    L_r: float = 120.0

    def __post_init__(self):
        self.build()

    def build(self) -> Grid:
        try:
            return Grid.plane(self.n_R, self.L_R, self.n_r, self.L_r)
        except ValueError as exc:
            raise ConfigError(str(exc), "grid") from exc


@dataclass(frozen=True)
class PacketSpec:
    """Incoming Gaussian in R: centre ``x0``, mean momentum ``p0``, density width ``sigma``."""

    x0: float = -11.0
    p0: float = 1.632993161855452
    sigma: float = 3.0


@dataclass(frozen=True)
class ReadoutSpec:
    """Fringe readout on the recombiner's output axis.

    ``at = "trigger"`` reads the state at the instant the collapse condition
    first holds, while both channels are still superposed, and falls back
    to the end of the run when it never holds; ``at = "end"`` always uses
    the final state.
    """

    wavenumber: float = float(np.pi)
    region: tuple[float, float] = (-2.0, 2.0)
    samples: int = 401
    at: str = "trigger"

    def __post_init__(self):
        if self.at not in ("trigger", "end"):
            raise ConfigError(f"readout.at must be 'trigger' or 'end', got {self.at!r}", "readout.at")
        if not self.wavenumber > 0:
            raise ConfigError("readout.wavenumber must be positive", "readout.wavenumber")
        if self.samples < 3:
            raise ConfigError("readout.samples must be at least 3", "readout.samples")
        if not self.region[1] > self.region[0]:
            raise ConfigError("readout.region must be an increasing interval", "readout.region")

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(self.region[0], self.region[1], self.samples)


def reference_potentials(particles: ParticleSet = ParticleSet(), barrier: float = 1.5) -> PotentialSet:
    bar = Potential("gaussian_barrier", {"height": barrier, "width": 1.5})
    return PotentialSet(V_ab=bar, V_bc=Potential.single_bound_poschl_teller(1.0, particles.mu_r), V_ac=bar)


@dataclass(frozen=True)
class ScatteringConfig:
    particles: ParticleSet = field(default_factory=ParticleSet)
    potentials: PotentialSet = field(default_factory=reference_potentials)
    grid: GridSpec = field(default_factory=GridSpec)
    packet: PacketSpec = field(default_factory=PacketSpec)
    dt: float = 1.5e-3
    t_end: float = 15.6
    mode: str = "oqt"
    collapse: CollapseConfig | None = None
    readout: ReadoutSpec = field(default_factory=ReadoutSpec)
    scheme: str = "split"
    log_stride: int = 10
    guard_stride: int = 50
    guard_tol: float = BOUNDARY_TOL
    hbar: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be 'oqt' or 'pqt', got {self.mode!r}", "mode")
        if self.mode == "pqt" and self.collapse is None:
            raise ConfigError("pqt mode requires a collapse section", "collapse")
        if self.scheme not in ("split", "cn"):
            raise ConfigError(f"scheme must be 'split' or 'cn', got {self.scheme!r}", "scheme")
        if self.collapse is not None and self.scheme != "split":
            raise ConfigError("collapse evaluation requires the split-operator scheme", "scheme")
        if not self.dt > 0:
            raise ConfigError("dt must be positive", "dt")
        n = self.t_end / self.dt
        if not self.t_end > 0 or abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"t_end/dt = {n!r} must be a positive integer", "t_end")
        for name in ("log_stride", "guard_stride"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer", name)
        if self.potentials.V_bc.is_zero:
            raise ConfigError("channel B needs a binding potential V_bc", "potentials.V_bc")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def spec(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.particles, self.potentials, "full", self.hbar)

    def with_epsilon(self, epsilon: float) -> "ScatteringConfig":
        base = self.collapse or CollapseConfig()
        return replace(self, collapse=replace(base, epsilon=epsilon))


def reference_config(mode: str = "oqt", epsilon: float | None = 1e-2, **overrides) -> ScatteringConfig:
    """The reference run: equal masses, a single-bound-state pair, Gaussian a-b and a-c barriers.

    The collapse window of 2.5 time units (1667 steps) makes the channel
    fidelities dip well below ``1 - 1e-2`` during the collision.
    """
    collapse = None if epsilon is None else CollapseConfig(epsilon=epsilon, window_steps=1667)
    return ScatteringConfig(mode=mode, collapse=collapse, **overrides)


# --------------------------------------------------------------------------
# readout


def readout_amplitudes(decomp: ChannelDecomposition, reference: ChannelDecomposition) -> np.ndarray:
    """Port amplitudes ``(alpha_A, alpha_B)`` of ``decomp`` with ports matched to ``reference``.

    Absent channels (mass below ``p_min``) contribute no amplitude.
    """
    out = np.zeros(2, dtype=complex)
    for i, ch in enumerate(CHANNELS):
        mode = reference.unit(ch)
        if mode is None:
            raise ReadoutError(f"readout misconfigured: reference has no channel-{ch} mode, "
                               "so the two ports never overlap")
        if decomp.present(ch):
            out[i] = np.vdot(mode, decomp.component(ch)) * decomp.weight
    return out


def fringe_moments(amplitudes: np.ndarray) -> np.ndarray:
    """Per-member ``(|a_A|^2 + |a_B|^2, a_A conj(a_B))``; intensities are linear in these."""
    a = np.atleast_2d(amplitudes)
    return np.stack([np.abs(a[:, 0]) ** 2 + np.abs(a[:, 1]) ** 2, a[:, 0] * np.conj(a[:, 1])], axis=1)


def _check_region(readout: ReadoutSpec):
    span = readout.region[1] - readout.region[0]
    if span * readout.wavenumber < 2 * np.pi:
        raise ReadoutError("readout misconfigured: the region holds less than one fringe period")
    if readout.samples < 8 * span * readout.wavenumber / (2 * np.pi):
        raise ReadoutError("readout misconfigured: fewer than 8 samples per fringe")


def fringe_intensity(moments: np.ndarray, readout: ReadoutSpec) -> np.ndarray:
    """Ensemble-mean intensity on the readout axis from per-member moments."""
    m = np.mean(np.atleast_2d(moments), axis=0)
    x = readout.axis
    return m[0].real + 2.0 * np.real(m[1] * np.exp(1j * readout.wavenumber * x))


def visibility_from_moments(moments: np.ndarray, readout: ReadoutSpec) -> float:
    _check_region(readout)
    I = fringe_intensity(moments, readout)
    hi, lo = float(I.max()), float(I.min())
    if hi + lo <= 0:
        raise ReadoutError("readout misconfigured: no intensity in the readout region")
    return (hi - lo) / (hi + lo)


def interference_visibility(states: ChannelDecomposition | Sequence[ChannelDecomposition],
                            readout: ReadoutSpec, reference: ChannelDecomposition | None = None) -> float:
    """Fringe contrast of one state or of the ensemble mean over several.

    Ports are matched to ``reference`` (default: the first state).
    """
    states = [states] if isinstance(states, ChannelDecomposition) else list(states)
    if not states:
        raise ReadoutError("readout misconfigured: no states")
    ref = states[0] if reference is None else reference
    amps = np.array([readout_amplitudes(d, ref) for d in states])
    return visibility_from_moments(fringe_moments(amps), readout)


# --------------------------------------------------------------------------
# simulation


@dataclass
class TriggerPoint:
    """Where the collapse condition first holds for one epsilon."""

    epsilon: float
    step: int
    t: float
    F_A: float | None
    F_B: float | None
    conditions: tuple[str, ...]
    decomposition: ChannelDecomposition
    E_int: tuple[float, float]


@dataclass
class UnitaryRun:
    final: np.ndarray
    final_decomposition: ChannelDecomposition
    rows: list
    triggers: dict
    diagnostics: dict


@dataclass
class ScatteringRecord:
    """One trajectory: the outcome, the collapse, the final state and the channel log."""

    mode: str
    outcome: str  # "A", "B" or "none"
    event: CollapseEvent | None
    final: WaveFunction
    final_decomposition: ChannelDecomposition
    readout_decomposition: ChannelDecomposition
    readout_time: float
    channel_log: list
    diagnostics: dict

    @property
    def t_collapse(self) -> float | None:
        return None if self.event is None else self.event.t


class ScatteringSimulation:
    """Grid, Hamiltonians and bound state for one config, with the time loop.

    The unitary run (``prefix``) is deterministic, so ensembles reuse it:
    every pqt trajectory follows it up to the trigger and differs only in
    the outcome drawn there.
    """

    def __init__(self, cfg: ScatteringConfig):
        self.cfg = cfg
        self.grid = grid = cfg.grid.build()
        spec = cfg.spec
        self.spec = spec
        r_grid = Grid((grid.axis("r"),))
        self.bound = ground_state_imaginary_time(spec.pair(r_grid))
        self.E0 = self.bound.energy
        mu_R = cfg.particles.mu_R
        ke = (cfg.packet.p0**2 + cfg.hbar**2 / (4 * cfg.packet.sigma**2)) / (2 * mu_R)
        if not ke > abs(self.E0):
            raise ConfigError(f"breakup channel closed: mean kinetic energy {ke:.4g} <= |E0| = {abs(self.E0):.4g}",
                              "packet.p0")
        self.H = spec.on(grid)
        self.stepper = make_stepper(self.H, cfg.dt, cfg.scheme)
        self.collapse = cfg.collapse if cfg.collapse is not None else CollapseConfig(epsilon=0.0)
        W = self.collapse.window_steps
        self.model = JacobiChannelModel(spec, grid, self.bound, cfg.dt, W, self.collapse.p_min)
        self._lock = threading.Lock()
        self._prefix: UnitaryRun | None = None
        self._prefix_watch: tuple = ()

    # -- pieces ---------------------------------------------------------

    def initial_state(self) -> np.ndarray:
        p = self.cfg.packet
        g = gaussian_profile(self.grid.axis("R"), p.x0, p.p0, p.sigma, self.cfg.hbar)
        return product_state(self.grid, g, self.bound.profile).amplitudes

    def energy(self, a: np.ndarray) -> float:
        return float(np.vdot(a, self.H.apply(a)).real * self.grid.weight)

    def _engine(self) -> CollapseEngine:
        return CollapseEngine(self.collapse, self.model, log_stride=self.cfg.log_stride, track_invariants=True)

    # -- the time loop --------------------------------------------------

    def _loop(self, a: np.ndarray, k0: int, engine: CollapseEngine, watch: Sequence[float] = (),
              stop_on_trigger: bool = False, fidelities: bool = True):
        """Step from ``k0`` to the end; returns ``(amplitudes, step reached, trigger points, diagnostics)``."""
        cfg = self.cfg
        dt, n = cfg.dt, cfg.n_steps
        step = self.stepper
        W = self.collapse.window_steps
        lag = {"a": None, "k": None}

        def lagged():
            # the state W steps back, advanced in lockstep from the superposition onset
            target = k - W
            while lag["k"] < target:
                lag["a"] = step(lag["a"])
                lag["k"] += 1
            return lag["a"]

        pending = sorted(set(watch), reverse=True)
        triggers: dict[float, TriggerPoint] = {}
        diag = {"norm_drift": 0.0, "energy_drift": 0.0, "boundary_mass": 0.0}
        e_ref = self.energy(a)
        norm0 = 1.0
        for k in range(k0, n + 1):
            t = k * dt
            use_lag = fidelities and engine.armed and engine.started_step is not None
            dec, d = engine.observe(k, t, a, lagged if use_lag else None)
            if fidelities and engine.started_step is not None and lag["a"] is None:
                lag["a"], lag["k"] = a.copy(), k
            if k % cfg.log_stride == 0 or k == n:
                nrm = float(np.sqrt(np.vdot(a, a).real * self.grid.weight))
                diag["norm_drift"] = max(diag["norm_drift"], abs(nrm - norm0))
                diag["energy_drift"] = max(diag["energy_drift"], abs(self.energy(a) - e_ref) / abs(e_ref))
            if pending and engine.fidelity_trace and engine.fidelity_trace[-1][0] == t:
                _, fa, fb = engine.fidelity_trace[-1]
                for eps in list(pending):
                    hit = collapse_check(d, fa, fb, replace(self.collapse, epsilon=eps), engine.interaction_started)
                    if hit.fired:
                        triggers[eps] = TriggerPoint(eps, k, t, fa, fb, hit.conditions, d,
                                                     self.model.interaction_energies(a))
                        pending.remove(eps)
            if dec.fired and stop_on_trigger:
                return a, k, triggers, diag, d, dec
            if k % cfg.guard_stride == 0 or k == n:
                diag["boundary_mass"] = max(diag["boundary_mass"], boundary_mass(WaveFunction(self.grid, a)))
                check_boundary(WaveFunction(self.grid, a), cfg.guard_tol, BOUNDARY_FRACTION, t=t)
            if k < n:
                a = step(a)
        return a, n, triggers, diag, d, None

    def prefix(self, watch: Sequence[float] = ()) -> UnitaryRun:
        """The unitary run to ``t_end`` with trigger points for every epsilon in ``watch``.

        Cached; a later call asking for epsilons not seen before recomputes.
        """
        watch = tuple(sorted(set(watch) | {self.collapse.epsilon}))
        with self._lock:
            if self._prefix is not None and set(watch) <= set(self._prefix_watch):
                return self._prefix
            engine = self._engine()
            a, _, triggers, diag, d, _ = self._loop(self.initial_state(), 0, engine, watch,
                                                    fidelities=self.cfg.collapse is not None)
            diag.update(self._engine_diagnostics(engine))
            run = UnitaryRun(a, d, engine.rows, triggers, diag)
            self._prefix, self._prefix_watch = run, watch
            return run

    def _engine_diagnostics(self, engine: CollapseEngine) -> dict:
        out = {f"max_{k}_residual": v for k, v in engine.worst.items()}
        out["bound_energy"] = self.E0
        out["bound_residual"] = self.bound.residual
        out["interaction_started"] = None if engine.started_step is None else engine.started_step * self.cfg.dt
        trace = [f for _, fa, fb in engine.fidelity_trace for f in (fa, fb) if f is not None]
        out["min_fidelity"] = min(trace) if trace else None
        return out

    def readout_point(self, run: UnitaryRun, epsilon: float | None = None) -> tuple[float, ChannelDecomposition]:
        """Time and unitary decomposition at which the readout is taken."""
        eps = self.collapse.epsilon if epsilon is None else epsilon
        if self.cfg.readout.at == "trigger" and eps in run.triggers:
            tp = run.triggers[eps]
            return tp.t, tp.decomposition
        return self.cfg.t_end, run.final_decomposition

    # -- single trajectory ----------------------------------------------

    def run(self, rng: np.random.Generator | None = None) -> ScatteringRecord:
        """One trajectory from t = 0, sampling the collapse outcome from ``rng``."""
        cfg = self.cfg
        engine = self._engine()
        pqt = cfg.mode == "pqt"
        a, k, triggers, diag, d, dec = self._loop(self.initial_state(), 0, engine,
                                                  watch=(self.collapse.epsilon,),
                                                  stop_on_trigger=pqt,
                                                  fidelities=cfg.collapse is not None)
        event, outcome = None, "none"
        readout_t, readout_d = cfg.t_end, d
        if cfg.readout.at == "trigger" and self.collapse.epsilon in triggers:
            tp = triggers[self.collapse.epsilon]
            readout_t, readout_d = tp.t, tp.decomposition
        if dec is not None:
            if rng is None:
                raise PQTError("a pqt trajectory needs a random stream")
            F = engine.fidelity_trace[-1]
            outcome, new, event = collapse_apply(d, float(rng.random()), F[1], F[2], dec.conditions)
            engine.record_collapse(event)
            readout_d = self.model.decompose(new.amplitudes, d.t)
            a = new.amplitudes
            if k < cfg.n_steps:
                a, _, _, diag2, d, _ = self._loop(self.stepper(a), k + 1, engine, fidelities=False)
                diag = {key: max(v, diag2[key]) for key, v in diag.items()}
            else:
                d = readout_d
            # mass regenerated in the discarded channel by the interaction tail
            diag["leak"] = d.mass("B" if outcome == "A" else "A")
        diag.update(self._engine_diagnostics(engine))
        return ScatteringRecord(cfg.mode, outcome, event, WaveFunction(self.grid, a), d, readout_d, readout_t,
                                engine.rows, diag)


def run_scattering(cfg: ScatteringConfig, rng: np.random.Generator | None = None) -> ScatteringRecord:
    """Evolve ``phi_bc(r) g(R)`` under the full Hamiltonian, collapsing at most once in pqt mode."""
    return ScatteringSimulation(cfg).run(rng)


def trajectory_outcome(sim: ScatteringSimulation, run: UnitaryRun, u: float | None,
                       epsilon: float | None = None, mode: str | None = None) -> dict:
    """Outcome of one ensemble member that shares the unitary ``run`` up to its trigger.

    Equivalent to :meth:`ScatteringSimulation.run` with the same draw, minus
    the post-collapse propagation, which no recorded quantity depends on.
    ``epsilon`` and ``mode`` default to the simulation's own; other epsilons
    need to have been watched by ``run``.
    """
    mode = sim.cfg.mode if mode is None else mode
    eps = sim.collapse.epsilon if epsilon is None else epsilon
    _, ref = sim.readout_point(run, eps)
    tp = run.triggers.get(eps)
    if mode == "oqt" or tp is None:
        return {"outcome": "none", "t_collapse": None, "cA2": ref.p_A, "cB2": ref.p_B,
                "amplitudes": readout_amplitudes(ref, ref), "F_A": None, "F_B": None, "conditions": ()}
    outcome, new, event = collapse_apply(tp.decomposition, u, tp.F_A, tp.F_B, tp.conditions)
    collapsed = sim.model.decompose(new.amplitudes, tp.t)
    return {"outcome": outcome, "t_collapse": tp.t, "cA2": event.p_A, "cB2": event.p_B,
            "amplitudes": readout_amplitudes(collapsed, ref), "F_A": tp.F_A, "F_B": tp.F_B,
            "conditions": tp.conditions, "u": u}
