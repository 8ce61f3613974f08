from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from propensiton.channels import CollapseConfig, bound_projector, decompose
from propensiton.dynamics import PotentialSet
from propensiton.ensemble import bootstrap_stderr, derive_stream
from propensiton.errors import ConfigError, ReadoutError
from propensiton.experiments.decay import (
    DecayConfig,
    FriedrichsModel,
    analyze_oqt,
    ensemble_survival,
    first_trigger,
    fit_exponential,
    fitted_curve,
    reference_decay_config,
    run_decay,
    sample_decay_time,
)
from propensiton.experiments.plate import PacketComponent, PlateConfig, draw_site, run_plate, site_probabilities
from propensiton.experiments.scan import epsilon_scan
from propensiton.experiments.scattering import (
    GridSpec,
    PacketSpec,
    ReadoutSpec,
    ScatteringConfig,
    ScatteringSimulation,
    fringe_moments,
    interference_visibility,
    readout_amplitudes,
    reference_potentials,
    run_scattering,
    trajectory_outcome,
    visibility_from_moments,
)
from propensiton.experiments.spheres import SphereToyConfig, contact_time, replay, run_sphere_toy, sample_in_ball
from propensiton.numerics import WaveFunction, gaussian_profile, normalize, product_state

P0 = 1.632993161855452


def small_config(mode="oqt", epsilon=None, barrier=1.5, **kw):
    """A 64 x 64 grid version of the reference collision, about a second per run."""
    collapse = None if epsilon is None else CollapseConfig(epsilon=epsilon, window_steps=60)
    pots = reference_potentials(barrier=barrier) if barrier else PotentialSet(V_bc=reference_potentials().V_bc)
    base = dict(grid=GridSpec(64, 40.0, 64, 24.0), packet=PacketSpec(-8.0, P0, 2.0), dt=1e-2, t_end=6.0,
                mode=mode, collapse=collapse, potentials=pots, log_stride=5, guard_tol=1.0)
    return ScatteringConfig(**{**base, **kw})


class FixedDraw:
    """Stands in for a generator whose next uniform draw is known."""

    def __init__(self, u):
        self.u = u
        self.calls = 0

    def random(self):
        self.calls += 1
        return self.u


@pytest.fixture(scope="module")
def small_sim():
    sim = ScatteringSimulation(small_config("pqt", 0.03))
    sim.prefix(watch=(1e-3, 3e-2, 0.5))
    return sim


# --------------------------------------------------------------------------
# scattering


def _decoupled_leak(dt, t_end=3.0):
    cfg = small_config("pqt", 1e-2, barrier=0.0, dt=dt, t_end=t_end, log_stride=10)
    rec = run_scattering(cfg, derive_stream(1, 0))
    assert rec.event is None and rec.outcome == "none"
    return max(max(abs(row[2] - 1.0) for row in rec.channel_log), abs(rec.final_decomposition.p_B - 1.0))


def test_decoupled_channel_stays_bound():
    assert _decoupled_leak(2e-3) < 1e-10


def test_decoupled_leak_is_splitting_error():
    # the Strang propagator's eigenvector is O(dt^2) off the exact bound state
    coarse, fine = _decoupled_leak(1e-2), _decoupled_leak(5e-3)
    assert 10 < coarse / fine < 22


def test_oqt_never_collapses():
    rec = run_scattering(small_config("oqt", 0.5))
    plain = run_scattering(small_config("oqt"))
    assert rec.event is None and rec.outcome == "none"
    # the would-fire instant is flagged in the log but nothing is applied
    assert not any(row[8] for row in rec.channel_log)
    assert rec.final.amplitudes.tobytes() == plain.final.amplitudes.tobytes()


def test_epsilon_zero_is_bitwise_unitary():
    oqt = run_scattering(small_config("oqt"))
    draw = FixedDraw(0.5)
    pqt = run_scattering(small_config("pqt", 0.0), draw)
    assert draw.calls == 0
    assert pqt.event is None
    assert pqt.final.amplitudes.tobytes() == oqt.final.amplitudes.tobytes()


def test_single_collapse_and_outcome_from_draw(small_sim):
    tp = small_sim.prefix().triggers[0.03]
    for u, want in ((0.0, "A"), (0.999, "B")):
        rec = small_sim.run(FixedDraw(u))
        assert rec.outcome == want
        assert rec.event is not None and rec.event.t == tp.t
        assert sum(row[7] for row in rec.channel_log) == 1


def test_trajectory_outcome_matches_full_run(small_sim):
    run = small_sim.prefix()
    for u in (0.0, 0.7):
        full = small_sim.run(FixedDraw(u))
        short = trajectory_outcome(small_sim, run, u)
        assert short["outcome"] == full.outcome
        assert short["t_collapse"] == full.t_collapse
        assert short["cA2"] == full.event.p_A


def test_oqt_mode_override_does_not_collapse(small_sim):
    out = trajectory_outcome(small_sim, small_sim.prefix(), None, 0.03, mode="oqt")
    assert out["outcome"] == "none" and out["t_collapse"] is None


def test_config_checks():
    with pytest.raises(ConfigError) as e:
        ScatteringConfig(mode="pqt")
    assert e.value.field == "collapse"
    with pytest.raises(ConfigError) as e:
        small_config("pqt", 1e-2, scheme="cn")
    assert e.value.field == "scheme"
    with pytest.raises(ConfigError) as e:
        ScatteringSimulation(small_config(packet=PacketSpec(-8.0, 0.5, 2.0)))
    assert e.value.field == "packet.p0"
    with pytest.raises(ConfigError):
        small_config(t_end=6.005)


# --------------------------------------------------------------------------
# interference readout


@pytest.fixture(scope="module")
def two_channel():
    sim = ScatteringSimulation(small_config())
    grid = sim.grid
    proj = bound_projector(sim.bound, grid)
    g = gaussian_profile(grid.axis("R"), 0.0, 0.0, 2.0)
    r = grid.axis("r")
    h = np.exp(-(r.coords - 4.0) ** 2) + 0j
    h -= sim.bound.profile * (np.vdot(sim.bound.profile, h) * r.dx)
    h /= np.sqrt(np.vdot(h, h).real * r.dx)

    def state(cA, cB):
        a = cA * product_state(grid, g, h).amplitudes + cB * product_state(grid, g, sim.bound.profile).amplitudes
        return decompose(normalize(WaveFunction(grid, a)), proj)

    return state


def test_equal_split_visibility_is_one(two_channel):
    d = two_channel(1 / np.sqrt(2), 1 / np.sqrt(2))
    assert abs(interference_visibility(d, ReadoutSpec()) - 1.0) < 0.02


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(0.05, np.pi / 2 - 0.05), phase=st.floats(0, 2 * np.pi))
def test_visibility_two_beam_formula(two_channel, theta, phase):
    cA, cB = np.cos(theta), np.sin(theta) * np.exp(1j * phase)
    d = two_channel(cA, cB)
    assert interference_visibility(d, ReadoutSpec()) == pytest.approx(2 * abs(cA) * abs(cB), abs=1e-10)


def test_collapsed_ensemble_shows_no_fringes(two_channel):
    ref = two_channel(np.sqrt(0.3), np.sqrt(0.7))
    pureA, pureB = two_channel(1.0, 0.0), two_channel(0.0, 1.0)
    rng = np.random.default_rng(3)
    members = [pureA if u < 0.3 else pureB for u in rng.random(400)]
    moments = fringe_moments(np.array([readout_amplitudes(m, ref) for m in members]))
    V = visibility_from_moments(moments, ReadoutSpec())
    sV = bootstrap_stderr(lambda idx: visibility_from_moments(moments[idx], ReadoutSpec()), len(members), rng)
    assert V <= 3 * sV and V < 1e-12


def test_identical_ensemble_matches_single_state(two_channel):
    d = two_channel(np.sqrt(0.2), np.sqrt(0.8))
    single = interference_visibility(d, ReadoutSpec())
    assert abs(interference_visibility([d] * 50, ReadoutSpec()) - single) < 0.02 * single


def test_readout_misconfigured(two_channel):
    pureB = two_channel(0.0, 1.0)
    with pytest.raises(ReadoutError, match="readout misconfigured"):
        interference_visibility(pureB, ReadoutSpec())
    d = two_channel(0.6, 0.8)
    with pytest.raises(ReadoutError, match="readout misconfigured"):
        interference_visibility(d, ReadoutSpec(region=(0.0, 1.0)))
    with pytest.raises(ReadoutError, match="readout misconfigured"):
        interference_visibility(d, ReadoutSpec(samples=10))


# --------------------------------------------------------------------------
# decay


@pytest.fixture(scope="module")
def decay_ref():
    cfg = reference_decay_config("oqt")
    return cfg, FriedrichsModel(cfg)


def test_zero_coupling_never_decays():
    for mode in ("oqt", "pqt"):
        cfg = reference_decay_config(mode, coupling=0.0)
        res = run_decay(cfg, derive_stream(0, 0))
        assert np.max(np.abs(res.survival - 1.0)) < 1e-12
        assert res.decay_time is None


def test_golden_rule_rate(decay_ref):
    cfg, model = decay_ref
    an = analyze_oqt(cfg, cfg.times, model.survival(cfg.times))
    assert abs(an.rate / cfg.golden_rule_rate - 1) < 0.10


def test_oqt_departs_from_exponential(decay_ref):
    cfg, model = decay_ref
    an = analyze_oqt(cfg, cfg.times, model.survival(cfg.times))
    assert an.t_star is not None and an.t_star >= cfg.fit_window[1]
    early = (cfg.times >= cfg.fit_window[0]) & (cfg.times <= cfg.fit_window[1])
    assert np.max(np.abs(an.residuals[early])) < 0.05
    assert np.max(np.abs(an.residuals[cfg.times >= an.t_star])) > 0.05


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(0.5, 50.0))
def test_fit_exact_exponential(tau):
    t = np.linspace(0, 40, 401)
    rate, res = fit_exponential(t, np.exp(-t / tau), (0.0, 40.0))
    assert abs(rate - 1 / tau) < 1e-10
    assert np.max(np.abs(res)) < 1e-12
    assert np.allclose(fitted_curve(t, np.exp(-t / tau), (0.0, 40.0)), np.exp(-t / tau), rtol=1e-12)


def test_fit_rejects_nonpositive():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        fit_exponential(t, np.where(t > 0.5, 0.0, 1.0), (0.0, 1.0))


def test_recurrence_guard():
    with pytest.raises(ConfigError) as e:
        DecayConfig(n_modes=256, cutoff=40.0)
    assert e.value.field == "decay.n_modes"
    with pytest.raises(ConfigError):
        DecayConfig(n_modes=128)


def test_pqt_epsilon_zero_reproduces_unitary_curve(decay_ref):
    _, model = decay_ref
    cfg = reference_decay_config("pqt", 0.0)
    cycle = first_trigger(cfg, model)
    assert cycle.tau is None
    S = ensemble_survival(cfg, model, cycle, [sample_decay_time(cycle, cfg.t_max, derive_stream(1, i))
                                               for i in range(10)])
    assert np.array_equal(S, model.survival(cfg.times))


def test_pqt_decay_times_on_trigger_lattice(decay_ref):
    _, model = decay_ref
    cfg = reference_decay_config("pqt")
    cycle = first_trigger(cfg, model)
    # the window needs W steps of history after the onset, checked on the next step
    assert cycle.tau == pytest.approx((cfg.collapse.window_steps + 1) * cfg.dt)
    times = [sample_decay_time(cycle, cfg.t_max, derive_stream(2, i)) for i in range(300)]
    for t in filter(None, times):
        k = t / cycle.tau
        assert abs(k - round(k)) < 1e-9 and t <= cfg.t_max


# --------------------------------------------------------------------------
# plate


def test_packet_inside_one_cell_always_fires_there():
    cfg = PlateConfig(packet=(PacketComponent(0.5, 0.0, 0.1),))
    probs = site_probabilities(cfg)
    assert probs[8] > 1 - 1e-6
    assert {run_plate(cfg, derive_stream(5, i), probs) for i in range(1000)} == {8}


def test_symmetric_two_cell_split():
    cfg = PlateConfig(packet=(PacketComponent(-2.0, 0.0, 0.5), PacketComponent(2.0, 0.0, 0.5)),
                      cells=((-2.0, 3.0), (2.0, 3.0)))
    probs = site_probabilities(cfg)
    assert abs(probs[0] - probs[1]) < 1e-12
    n = 10_000
    hits = sum(run_plate(cfg, derive_stream(9, i), probs) == 0 for i in range(n))
    assert abs(hits / n - 0.5) < 4 * np.sqrt(0.25 / n)


def test_efficiency_and_none_channel():
    full = site_probabilities(PlateConfig())
    half = site_probabilities(PlateConfig(efficiency=0.5))
    assert np.allclose(half[:-1], 0.5 * full[:-1], rtol=0, atol=1e-15)
    assert half[-1] == pytest.approx(1 - half[:-1].sum(), abs=1e-15)


def test_draw_site_boundaries():
    probs = np.array([0.25, 0.5, 0.25, 0.0])
    assert draw_site(probs, 0.0) == 0
    assert draw_site(probs, 0.2499) == 0
    assert draw_site(probs, 0.25) == 1
    assert draw_site(probs, 0.9999) == 2
    assert draw_site(np.array([0.5, 0.5]), 0.7) is None


def test_plate_config_checks():
    with pytest.raises(ConfigError) as e:
        PlateConfig(cells=((0.0, 2.0), (1.0, 2.0)))
    assert e.value.field == "plate.cells"
    with pytest.raises(ConfigError) as e:
        PlateConfig(efficiency=1.5)
    assert e.value.field == "plate.efficiency"


# --------------------------------------------------------------------------
# sphere toy


@settings(max_examples=50, deadline=None)
@given(d=st.floats(0.5, 50.0), v=st.floats(0.01, 10.0))
def test_first_contact_time_closed_form(d, v):
    cfg = SphereToyConfig(centers=((0, 0, 0), (d, 0, 0)), radii=(0.0, 0.0), speed=v, r_min=1e-4,
                          horizon=d / (2 * v) * 1.0001)
    run = run_sphere_toy(cfg, derive_stream(0, 0))
    assert abs(run.events[0].t - d / (2 * v)) <= 1e-12 * max(1.0, d / (2 * v))


def test_uniform_relocation_is_centred():
    rng = derive_stream(21, 0)
    x = np.array([sample_in_ball(rng, np.zeros(3), 1.0) for _ in range(10_000)])
    assert np.all(np.linalg.norm(x, axis=1) <= 1.0)
    mean, se = x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(len(x))
    assert np.all(np.abs(mean) < 4 * se)


def test_gaussian_relocation_stays_inside():
    rng = derive_stream(22, 0)
    x = np.array([sample_in_ball(rng, np.ones(3), 0.7, "gaussian", 0.5) for _ in range(2000)])
    assert np.all(np.linalg.norm(x - 1.0, axis=1) <= 0.7)


@settings(max_examples=40, deadline=None)
@given(g1=st.floats(0.5, 5.0), g2=st.floats(0.5, 5.0), seed=st.integers(0, 2**32))
def test_collinear_closest_pair_first(g1, g2, seed):
    if abs(g1 - g2) < 1e-6:
        return
    cfg = SphereToyConfig(centers=((0, 0, 0), (g1, 0, 0), (g1 + g2, 0, 0)), radii=(0.0, 0.0, 0.0),
                          r_min=1e-4, horizon=10.0)
    run = run_sphere_toy(cfg, derive_stream(seed, 0))
    assert run.events[0].pair == ((0, 1) if g1 < g2 else (1, 2))


def test_replay_reproduces_state():
    cfg = SphereToyConfig(centers=((0, 0, 0), (1, 0, 0), (3, 0.5, 0), (0, 2, 1)), radii=(0.1, 0.0, 0.2, 0.0),
                          horizon=6.0)
    run = run_sphere_toy(cfg, derive_stream(4, 0))
    assert len(run.events) > 3
    c, r = replay(cfg, run.events, cfg.horizon)
    assert np.array_equal(c, run.final.centers)
    want = [run.final.radius(i, cfg.horizon, cfg.speed) for i in range(4)]
    assert np.allclose(r, want, rtol=0, atol=1e-15)
    # between events the spheres only grow
    mid = 0.5 * (run.events[0].t + run.events[1].t)
    c1, r1 = replay(cfg, run.events, mid)
    c2, r2 = replay(cfg, run.events, mid + 1e-9)
    assert np.array_equal(c1, c2) and np.all(r2 > r1)


def test_sphere_config_checks():
    with pytest.raises(ConfigError):
        SphereToyConfig(centers=((0, 0, 0), (1, 0, 0)), radii=(0.6, 0.6))
    with pytest.raises(ConfigError):
        SphereToyConfig(r_min=0.1)
    with pytest.raises(ConfigError):
        SphereToyConfig(speed=0.0)
    assert contact_time((0, 0, 0), (1, 0, 0), 0.2, 0.3, 0.25, now=1.0) == pytest.approx(2.0, abs=1e-15)


# --------------------------------------------------------------------------
# epsilon scan


def test_scattering_scan_rows(small_sim):
    scan = epsilon_scan(small_sim.cfg, [0.0, 1e-3, 3e-2, 0.5], 200, 13, simulation=small_sim)
    zero = scan.rows[0]
    assert zero.n_collapses == 0 and zero.deviation == 0.0 and zero.mean_collapse_time is None
    times = [np.inf if r.mean_collapse_time is None else r.mean_collapse_time for r in scan.rows]
    assert all(b <= a for a, b in zip(times, times[1:]))
    assert scan.rows[2].n_collapses == 200


def test_decay_scan_zero_row():
    cfg = reference_decay_config("pqt")
    scan = epsilon_scan(cfg, [0.0, 1e-2], 500, 3)
    assert scan.rows[0].n_collapses == 0 and scan.rows[0].deviation == 0.0
    row = scan.rows[1]
    # event times are decay instants, multiples of the trigger period
    assert 0 < row.n_collapses < 500 and 0.0 < row.mean_collapse_time <= cfg.t_max
    assert scan.smallest_detectable == 1e-2


def test_scan_grid_checks():
    cfg = reference_decay_config("pqt")
    for bad in ([1e-2, 1e-3], [0.5, 1.0], []):
        with pytest.raises(ConfigError):
            epsilon_scan(cfg, bad, 10, 0)


def test_decay_config_mode_checks():
    with pytest.raises(ConfigError) as e:
        DecayConfig(mode="pqt")
    assert e.value.field == "collapse"
    with pytest.raises(ConfigError):
        replace(reference_decay_config(), fit_window=(5.0, 1.0))
