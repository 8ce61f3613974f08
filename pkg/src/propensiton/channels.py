"""Channel decomposition, asymptotic fidelities and probabilistic collapse.

The full state is split at every instant by orthogonal projection onto the
bound-pair subspace,

    Phi = c_A phi_A + c_B phi_B,   c_B phi_B = P_B Phi,   P_B = |phi_bc><phi_bc| (x) 1_R,

with ``c_X >= 0`` real and the phases carried by ``phi_X``.  The asymptotic
reference state of channel X at time t is the channel component at
``t - T_w`` propagated over the window ``T_w`` with the channel Hamiltonian
only.  The collapse trigger compares the two by their squared overlap.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.fft as sfft

from .dynamics import BoundState, HamiltonianSpec, make_stepper, realize
from .errors import ConfigError, GridMismatchError, NormalizationError, PQTError
from .numerics import Grid, WaveFunction, inner_product, norm

CHANNELS = ("A", "B")
CHANNEL_VARIANT = {"A": "free_A", "B": "bound_B"}
LOG_COLUMNS = ("t", "cA2", "cB2", "F_A", "F_B", "E_int_A", "E_int_B", "triggered", "outcome")


@dataclass(frozen=True)
class CollapseConfig:
    """Trigger parameters.

    Parameters
    ----------
    epsilon
        Collapse threshold: a channel triggers when its fidelity exceeds
        ``1 - epsilon``.  ``epsilon = 0`` never triggers.
    window_steps
        Look-back window ``T_w / dt`` used to build the asymptotic references.
    p_min
        Channel-mass floor below which a channel is treated as absent.
    p_active
        Both channel masses must reach this value once before the trigger
        is armed (the superposition has formed).
    check_stride
        Steps between trigger evaluations.
    """

    epsilon: float = 1e-2
    window_steps: int = 64
    p_min: float = 1e-12
    p_active: float = 1e-6
    check_stride: int = 1

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon!r}", "collapse.epsilon")
        if int(self.window_steps) != self.window_steps or self.window_steps < 1:
            raise ConfigError(f"window_steps must be a positive integer, got {self.window_steps!r}",
                              "collapse.window_steps")
        if not 0.0 < self.p_min < self.p_active < 1.0:
            raise ConfigError(f"need 0 < p_min < p_active < 1, got p_min={self.p_min!r}, "
                              f"p_active={self.p_active!r}", "collapse.p_active")
        if int(self.check_stride) != self.check_stride or self.check_stride < 1:
            raise ConfigError(f"check_stride must be a positive integer, got {self.check_stride!r}",
                              "collapse.check_stride")


# --------------------------------------------------------------------------
# projection and decomposition


class BoundProjector:
    """P_B for a bound-pair profile along one axis of a 2D Jacobi grid."""

    def __init__(self, bound: BoundState | WaveFunction, grid: Grid, axis: str = "r"):
        phi = bound.wavefunction if isinstance(bound, BoundState) else bound
        if phi.grid.dims != 1:
            raise GridMismatchError("the bound-state profile must live on a 1D grid")
        i = grid.axis_index(axis)
        if grid.dims != 2 or phi.grid.axes[0] != grid.axes[i]:
            raise GridMismatchError(f"bound-state axis does not match axis {axis!r} of the 2D grid")
        if abs(norm(phi) - 1.0) > 1e-10:
            raise NormalizationError("bound-state profile must be normalized")
        self.grid = grid
        self.axis = i
        self.phi = phi.amplitudes
        self.dx = grid.axes[i].dx
        self.weight = grid.weight

    def overlap(self, a: np.ndarray) -> np.ndarray:
        """f = integral of conj(phi_bc) Phi along the bound axis."""
        if self.axis == 1:
            return (a @ self.phi.conj()) * self.dx
        return (self.phi.conj() @ a) * self.dx

    def lift(self, f: np.ndarray) -> np.ndarray:
        if self.axis == 1:
            return np.multiply.outer(f, self.phi)
        return np.multiply.outer(self.phi, f)

    def _check(self, psi: WaveFunction):
        if psi.grid != self.grid:
            raise GridMismatchError("state and projector live on different grids")

    def __call__(self, psi: WaveFunction) -> WaveFunction:
        self._check(psi)
        return WaveFunction(self.grid, self.lift(self.overlap(psi.amplitudes)))

    def complement(self, psi: WaveFunction) -> WaveFunction:
        self._check(psi)
        return WaveFunction(self.grid, psi.amplitudes - self.lift(self.overlap(psi.amplitudes)))


def bound_projector(bound: BoundState | WaveFunction, grid: Grid, axis: str = "r") -> BoundProjector:
    return BoundProjector(bound, grid, axis)


@dataclass
class ChannelDecomposition:
    """``Phi = c_A phi_A + c_B phi_B`` at time ``t``.

    The unnormalized components ``comp_A = c_A phi_A`` and ``comp_B`` are
    stored so that reconstruction stays exact even for absent channels.  A
    channel whose mass is below ``p_min`` has no normalized state.
    """

    comp_A: np.ndarray
    comp_B: np.ndarray
    weight: float
    t: float = 0.0
    p_min: float = 1e-12
    grid: Grid | None = None
    aux: dict = field(default_factory=dict, repr=False)
    _unit: dict = field(default_factory=dict, repr=False)

    def component(self, channel: str) -> np.ndarray:
        return self.comp_A if channel == "A" else self.comp_B

    def mass(self, channel: str) -> float:
        a = self.component(channel)
        return float(np.vdot(a, a).real * self.weight)

    @property
    def p_A(self) -> float:
        return self.mass("A")

    @property
    def p_B(self) -> float:
        return self.mass("B")

    @property
    def c_A(self) -> float:
        return float(np.sqrt(self.p_A))

    @property
    def c_B(self) -> float:
        return float(np.sqrt(self.p_B))

    def present(self, channel: str) -> bool:
        return self.mass(channel) >= self.p_min

    def unit(self, channel: str) -> np.ndarray | None:
        """Amplitudes of the normalized phi_X, or None for an absent channel."""
        if channel not in self._unit:
            m = self.mass(channel)
            self._unit[channel] = self.component(channel) / np.sqrt(m) if m >= self.p_min else None
        return self._unit[channel]

    def state(self, channel: str) -> WaveFunction | np.ndarray | None:
        u = self.unit(channel)
        if u is None or self.grid is None:
            return u
        return WaveFunction(self.grid, u, normalized=True)

    @property
    def phi_A(self):
        return self.state("A")

    @property
    def phi_B(self):
        return self.state("B")

    def reconstruct(self) -> np.ndarray:
        return self.comp_A + self.comp_B

    def residuals(self, amplitudes: np.ndarray) -> dict[str, float]:
        """Deviations from the three decomposition invariants."""
        diff = self.reconstruct() - amplitudes
        ov = 0.0
        if self.present("A") and self.present("B"):
            ov = abs(np.vdot(self.unit("A"), self.unit("B")) * self.weight)
        return {
            "probability_sum": abs(self.p_A + self.p_B - 1.0),
            "overlap": float(ov),
            "reconstruction": float(np.sqrt(np.vdot(diff, diff).real * self.weight)),
        }


def split_components(a: np.ndarray, overlap: Callable, lift: Callable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project ``a`` onto the bound subspace with one reorthogonalization pass.

    Returns ``(comp_A, comp_B, f)`` where ``comp_B = lift(f)``.
    """
    f = overlap(a)
    comp_a = a - lift(f)
    f2 = overlap(comp_a)
    f = f + f2
    comp_a = comp_a - lift(f2)
    return comp_a, lift(f), f


def decompose(psi: WaveFunction, projector: BoundProjector, p_min: float = 1e-12,
              t: float | None = None) -> ChannelDecomposition:
    """Split a normalized 2D state into its breakup (A) and bound (B) channels."""
    projector._check(psi)
    if abs(norm(psi) - 1.0) > 1e-8:
        raise NormalizationError(f"decompose expects a normalized state (norm = {norm(psi)!r})")
    comp_a, comp_b, _ = split_components(psi.amplitudes, projector.overlap, projector.lift)
    t = psi.meta.get("t", 0.0) if t is None else t
    return ChannelDecomposition(comp_a, comp_b, psi.grid.weight, t, p_min, psi.grid)


# --------------------------------------------------------------------------
# asymptotic references and fidelities


@dataclass
class AsymptoticReference:
    """psi_X: a channel component propagated with the channel Hamiltonian only."""

    channel: str
    psi: WaveFunction
    window: float = 0.0
    source_time: float = 0.0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be 'A' or 'B', got {self.channel!r}")
        if abs(norm(self.psi) - 1.0) > 1e-10:
            raise NormalizationError("asymptotic reference must be normalized")


def channel_of(H_X) -> str:
    """Channel id for a channel Hamiltonian (spec variant or realized grid Hamiltonian name)."""
    variant = H_X.variant if isinstance(H_X, HamiltonianSpec) else getattr(H_X, "name", "")
    for ch, v in CHANNEL_VARIANT.items():
        if variant == v:
            return ch
    raise ValueError(f"not a channel Hamiltonian (variant {variant!r}); use 'free_A' or 'bound_B'")


def advance_asymptotic(ref: AsymptoticReference, H_X, dt: float, n: int,
                       scheme: str = "split") -> AsymptoticReference:
    """Propagate ``ref`` by ``n`` steps of the channel Hamiltonian with the run's scheme."""
    if channel_of(H_X) != ref.channel:
        raise ValueError(f"variant mismatch: channel {ref.channel} needs a "
                         f"{CHANNEL_VARIANT[ref.channel]!r} Hamiltonian")
    Hg = realize(H_X, ref.psi.grid)
    a = ref.psi.amplitudes.copy()
    if n:
        step = make_stepper(Hg, dt, scheme)
        for _ in range(n):
            a = step(a)
    return AsymptoticReference(ref.channel, WaveFunction(ref.psi.grid, a, normalized=True),
                               ref.window + n * dt, ref.source_time)


@dataclass(frozen=True)
class FidelityResult:
    value: float | None
    status: str  # "ok", "warming_up" or "excluded"


def asymptotic_fidelity(history: Sequence[ChannelDecomposition], H_X, config: CollapseConfig,
                        dt: float | None = None, scheme: str = "split") -> FidelityResult:
    """F_X(t) = |<psi_X(t)|phi_X(t)>|^2 from a per-step decomposition history.

    ``history`` is ordered oldest first with one entry per time step; the
    last entry is the current instant.  This is the direct construction and
    costs ``window_steps`` propagation steps per call.
    """
    ch = channel_of(H_X)
    W = config.window_steps
    if len(history) < W + 1:
        return FidelityResult(None, "warming_up")
    window = list(history)[-(W + 1):]
    if any(d.mass(ch) < config.p_min for d in window):
        return FidelityResult(None, "excluded")
    first, last = window[0], window[-1]
    if dt is None:
        dt = (last.t - first.t) / W
    ref = AsymptoticReference(ch, first.state(ch), 0.0, first.t)
    ref = advance_asymptotic(ref, H_X, dt, W, scheme)
    value = abs(inner_product(ref.psi, last.state(ch))) ** 2
    return FidelityResult(float(min(value, 1.0)), "ok")


# --------------------------------------------------------------------------
# trigger and collapse


@dataclass(frozen=True)
class TriggerDecision:
    fired: bool
    conditions: tuple[str, ...] = ()


def collapse_check(decomp: ChannelDecomposition | None, F_A: float | None, F_B: float | None,
                   config: CollapseConfig, interaction_started: bool) -> TriggerDecision:
    """Fire when the superposition has formed and some channel fidelity exceeds ``1 - epsilon``."""
    if not interaction_started or config.epsilon == 0.0:
        return TriggerDecision(False)
    threshold = 1.0 - config.epsilon
    fired = tuple(ch for ch, F in (("A", F_A), ("B", F_B)) if F is not None and F > threshold)
    return TriggerDecision(bool(fired), fired)


@dataclass(frozen=True)
class CollapseEvent:
    t: float
    F_A: float | None
    F_B: float | None
    p_A: float
    p_B: float
    outcome: str
    u: float
    conditions: tuple[str, ...] = ()

    def __post_init__(self):
        if (self.outcome == "A") != (self.u < self.p_A):
            raise PQTError("collapse outcome inconsistent with its draw")


def collapse_apply(decomp: ChannelDecomposition, u: float, F_A: float | None = None,
                   F_B: float | None = None, conditions: tuple[str, ...] = ()):
    """Replace the state by one normalized channel component.

    Returns ``(outcome, new_state, event)``; channel A is chosen iff
    ``u < |c_A|^2``.  ``new_state`` is a :class:`WaveFunction` when the
    decomposition carries a grid and a plain array otherwise.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError(f"draw u must lie in [0, 1), got {u!r}")
    p_a, p_b = decomp.p_A, decomp.p_B
    outcome = "A" if u < p_a else "B"
    if not decomp.present(outcome):
        raise PQTError(f"sampled absent channel {outcome} (mass {decomp.mass(outcome):.3e})")
    event = CollapseEvent(decomp.t, F_A, F_B, p_a, p_b, outcome, float(u), tuple(conditions))
    return outcome, decomp.state(outcome), event


def interaction_energy(psi: WaveFunction, H_full, H_X) -> float:
    """<Phi|(H - H_X)|Phi>: the expectation of the terms a channel Hamiltonian drops."""
    Hf = realize(H_full, psi.grid)
    Hx = realize(H_X, psi.grid)
    if Hf.masses != Hx.masses or Hf.hbar != Hx.hbar:
        raise ValueError("Hamiltonians differ in their kinetic terms")
    a = psi.amplitudes
    return float(np.vdot(a, (Hf.potential - Hx.potential) * a).real * psi.grid.weight)


# --------------------------------------------------------------------------
# the per-trajectory engine


class ChannelModel(Protocol):
    """What the engine needs from an experiment."""

    def decompose(self, a: np.ndarray, t: float) -> ChannelDecomposition: ...

    def fidelity(self, channel: str, lagged: ChannelDecomposition,
                 current: ChannelDecomposition) -> float: ...

    def interaction_energies(self, a: np.ndarray) -> tuple[float, float]: ...


class JacobiChannelModel:
    """Channel model for the three-body Jacobi grid with a split-operator run.

    Propagation over the window with the channel Hamiltonians is done in
    closed form: ``H_A`` is purely kinetic, so its Strang steps are exact
    kinetic phases, and the ``H_B`` Strang step factorizes into a free step
    in R times the pair step in r, which leaves the bound profile's overlap
    ``eta = <S_r^W phi_bc|phi_bc>`` as a constant factor.
    """

    def __init__(self, spec: HamiltonianSpec, grid: Grid, bound: BoundState, dt: float,
                 window_steps: int, p_min: float = 1e-12):
        self.grid = grid
        self.projector = BoundProjector(bound, grid)
        self.p_min = p_min
        self.dt = dt
        self.window_steps = W = int(window_steps)
        H = spec.with_variant("full").on(grid)
        HA = spec.with_variant("free_A").on(grid)
        HB = spec.with_variant("bound_B").on(grid)
        self.v_int_A = H.potential - HA.potential
        self.v_int_B = H.potential - HB.potential
        hbar = H.hbar
        self.phase_A = np.exp(-1j * HA.kinetic * W * dt / hbar)
        axR = grid.axis("R")
        self.phase_R = np.exp(-1j * hbar * axR.k**2 / (2 * spec.particles.mu_R) * W * dt)
        pair = spec.pair(Grid((grid.axis("r"),)))
        step = make_stepper(pair, dt, "split")
        v = bound.profile.copy()
        for _ in range(W):
            v = step(v)
        self.eta2 = float(abs(np.vdot(v, bound.profile) * grid.axis("r").dx) ** 2)

    def decompose(self, a: np.ndarray, t: float) -> ChannelDecomposition:
        comp_a, comp_b, f = split_components(a, self.projector.overlap, self.projector.lift)
        d = ChannelDecomposition(comp_a, comp_b, self.grid.weight, t, self.p_min, self.grid)
        d.aux["f"] = f
        return d

    @staticmethod
    def _overlap2(x: np.ndarray, y: np.ndarray) -> float:
        num = np.vdot(x, y)
        den = np.vdot(x, x).real * np.vdot(y, y).real
        return float(min(abs(num) ** 2 / den, 1.0))

    def fidelity(self, channel: str, lagged: ChannelDecomposition, current: ChannelDecomposition) -> float:
        if channel == "A":
            x = sfft.fft2(lagged.comp_A) * self.phase_A
            return self._overlap2(x, sfft.fft2(current.comp_A))
        x = sfft.fft(lagged.aux["f"]) * self.phase_R
        return min(self._overlap2(x, sfft.fft(current.aux["f"])) * self.eta2, 1.0)

    def interaction_energies(self, a: np.ndarray) -> tuple[float, float]:
        rho = (a.real**2 + a.imag**2) * self.grid.weight
        return float(np.sum(self.v_int_A * rho)), float(np.sum(self.v_int_B * rho))


class CollapseEngine:
    """Trigger bookkeeping for one trajectory.

    Call :meth:`observe` once per time step with the current decomposition.
    Fidelities are only evaluated when the full window lies after the
    moment the superposition formed and both the window's end points carry
    channel mass above ``p_min`` at every step in between; otherwise the
    channel is reported as warming up or excluded.
    """

    def __init__(self, config: CollapseConfig, model: ChannelModel, log_stride: int | None = 1,
                 track_invariants: bool = False):
        self.config = config
        self.model = model
        self.log_stride = log_stride
        self.track_invariants = track_invariants
        W = config.window_steps
        self._masses = {ch: deque(maxlen=W + 1) for ch in CHANNELS}
        self.started_step: int | None = None
        self.trigger_step: int | None = None
        self.armed = True
        self.event: CollapseEvent | None = None
        self.rows: list[tuple] = []
        self.worst = {"probability_sum": 0.0, "overlap": 0.0, "reconstruction": 0.0}
        self.fidelity_trace: list[tuple[float, float | None, float | None]] = []

    @property
    def interaction_started(self) -> bool:
        return self.started_step is not None

    def _window_ok(self, channel: str, step: int) -> str:
        W = self.config.window_steps
        if self.started_step is None or step - W < self.started_step:
            return "warming_up"
        m = self._masses[channel]
        if len(m) < W + 1 or min(m) < self.config.p_min:
            return "excluded"
        return "ok"

    def observe(self, step: int, t: float, amplitudes: np.ndarray,
                lagged: Callable[[], np.ndarray] | None = None) -> tuple[TriggerDecision, ChannelDecomposition]:
        """Process one step; ``lagged()`` returns the state ``window_steps`` earlier."""
        cfg = self.config
        d = self.model.decompose(amplitudes, t)
        pa, pb = d.p_A, d.p_B
        self._masses["A"].append(pa)
        self._masses["B"].append(pb)
        if self.track_invariants:
            for k, v in d.residuals(amplitudes).items():
                self.worst[k] = max(self.worst[k], v)
        if self.started_step is None and min(pa, pb) >= cfg.p_active:
            self.started_step = step
        F = {"A": None, "B": None}
        decision = TriggerDecision(False)
        if self.armed and step % cfg.check_stride == 0 and lagged is not None:
            status = {ch: self._window_ok(ch, step) for ch in CHANNELS}
            if "ok" in status.values():
                lag = self.model.decompose(lagged(), t - cfg.window_steps * getattr(self.model, "dt", 0.0))
                for ch in CHANNELS:
                    if status[ch] == "ok":
                        F[ch] = self.model.fidelity(ch, lag, d)
                self.fidelity_trace.append((t, F["A"], F["B"]))
            decision = collapse_check(d, F["A"], F["B"], cfg, self.interaction_started)
            # only the first instant counts; a unitary run keeps evaluating afterwards
            if decision.fired:
                if self.trigger_step is not None:
                    decision = TriggerDecision(False)
                else:
                    self.trigger_step = step
        if self.log_stride and (step % self.log_stride == 0 or decision.fired):
            ea, eb = self.model.interaction_energies(amplitudes)
            self.rows.append([t, pa, pb, F["A"], F["B"], ea, eb, int(decision.fired), ""])
        return decision, d

    def record_collapse(self, event: CollapseEvent):
        self.event = event
        self.armed = False
        if self.rows and self.rows[-1][7]:
            self.rows[-1][8] = event.outcome
