from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from propensiton.dynamics import (
    CrankNicolsonStepper,
    GridHamiltonian,
    HamiltonianSpec,
    Observer,
    ParticleSet,
    Potential,
    PotentialSet,
    SplitOperatorStepper,
    apply_hamiltonian,
    dense_ground_state,
    dense_hamiltonian,
    dense_oracle_evolve,
    evolve,
    ground_state_imaginary_time,
    step_crank_nicolson,
    step_split_operator,
)
from propensiton.errors import (
    BoundaryMassError,
    BoundStateError,
    GridMismatchError,
    ResolutionError,
)
from propensiton.numerics import (
    Grid,
    WaveFunction,
    gaussian_packet,
    inner_product,
    norm,
    normalize,
    observable_expectation,
)


def random_state(grid, seed=0):
    rng = np.random.default_rng(seed)
    return normalize(WaveFunction(grid, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)))


def jacobi_spec(variant="full", height=1.5, width=1.5, alpha=0.5):
    pots = PotentialSet(
        V_ab=Potential("gaussian_barrier", {"height": height, "width": width}),
        V_bc=Potential.single_bound_poschl_teller(alpha, 0.5),
        V_ac=Potential("gaussian_barrier", {"height": height, "width": width}),
    )
    return HamiltonianSpec(ParticleSet(1.0, 1.0, 1.0), pots, variant)


# -- potentials and Hamiltonians ---------------------------------------------

def test_reduced_masses():
    p = ParticleSet(1.0, 2.0, 3.0)
    assert p.mu_R == pytest.approx(1.0 * 5.0 / 6.0)
    assert p.mu_r == pytest.approx(6.0 / 5.0)
    with pytest.raises(ValueError):
        ParticleSet(1.0, 0.0, 1.0)


def test_potential_validation():
    with pytest.raises(ValueError):
        Potential("gaussian_well", {"V0": 1.0, "width": 1.0})
    with pytest.raises(ValueError):
        Potential("square_well", {})
    with pytest.raises(ResolutionError):
        Potential("gaussian_barrier", {"height": 1.0, "width": 0.1}).check_resolution(0.1)


def test_single_bound_poschl_teller_depth():
    v = Potential.single_bound_poschl_teller(alpha=1.3, mu=0.5)
    assert v.params["V0"] == pytest.approx(-(1.3**2) / 0.5)


def test_jacobi_pair_arguments():
    # with unequal masses the barriers must sit at x_a - x_b = 0 and x_a - x_c = 0
    spec = HamiltonianSpec(
        ParticleSet(1.0, 1.0, 3.0),
        PotentialSet(V_ab=Potential("harmonic", {"stiffness": 1.0}),
                     V_ac=Potential("harmonic", {"stiffness": 2.0})),
    )
    g = Grid.plane(16, 8.0, 16, 8.0)
    terms = spec.potential_terms(g)
    R, r = g.mesh()
    assert np.allclose(terms["V_ab"], 0.5 * (R + 0.75 * r) ** 2)
    assert np.allclose(terms["V_ac"], 1.0 * (R - 0.25 * r) ** 2)


def test_variants_realize_the_right_terms():
    g = Grid.plane(32, 16.0, 32, 16.0)
    terms = jacobi_spec().potential_terms(g)
    assert np.all(jacobi_spec("free_A").on(g).potential == 0)
    assert np.allclose(jacobi_spec("bound_B").on(g).potential, terms["V_bc"])
    assert np.allclose(jacobi_spec("full").on(g).potential, terms["V_ab"] + terms["V_bc"] + terms["V_ac"])


def test_jacobi_needs_labelled_axes():
    with pytest.raises(GridMismatchError):
        jacobi_spec().on(Grid.plane(16, 8.0, 16, 8.0, labels=("x", "y")))


def test_free_channel_plane_wave_eigenvalue():
    g = Grid.plane(32, 16.0, 32, 12.0)
    spec = jacobi_spec("free_A")
    (kR, kr) = (g.axes[0].k[3], g.axes[1].k[-5])
    R, r = g.mesh()
    psi = normalize(WaveFunction(g, np.exp(1j * (kR * R + kr * r))))
    hpsi = apply_hamiltonian(spec, psi)
    e = kR**2 / (2 * spec.particles.mu_R) + kr**2 / (2 * spec.particles.mu_r)
    assert np.max(np.abs(hpsi.amplitudes - e * psi.amplitudes)) < 1e-10


def test_bound_channel_on_bound_product():
    g = Grid.plane(64, 32.0, 128, 32.0)
    spec = jacobi_spec("bound_B", alpha=1.0)
    bs = ground_state_imaginary_time(spec.pair(Grid((g.axes[1],))))
    # narrow R factor: H_B (f phi) = (T_R f) phi + E0 f phi up to the bound-state residual
    f = np.zeros(64, complex)
    f[32] = 1.0 / np.sqrt(g.axes[0].dx)
    psi = WaveFunction(g, np.multiply.outer(f, bs.profile))
    TR = GridHamiltonian.one_body(Grid((g.axes[0],)), spec.particles.mu_R)
    resid = (apply_hamiltonian(spec, psi).amplitudes
             - np.multiply.outer(TR.apply(f), bs.profile) - bs.energy * psi.amplitudes)
    assert np.sqrt(np.sum(np.abs(resid) ** 2) * g.weight) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_hermiticity(seed):
    g = Grid.plane(32, 16.0, 32, 16.0)
    a, b = random_state(g, seed), random_state(g, seed + 1)
    for variant in ("full", "free_A", "bound_B"):
        H = jacobi_spec(variant)
        lhs = inner_product(a, apply_hamiltonian(H, b))
        rhs = np.conj(inner_product(b, apply_hamiltonian(H, a)))
        assert abs(lhs - rhs) < 1e-10


# -- split operator -----------------------------------------------------------

def test_split_free_bin_phase():
    g = Grid.line(64, 20.0)
    H = GridHamiltonian.one_body(g, 1.3)
    k = g.axes[0].k[9]
    psi = normalize(WaveFunction(g, np.exp(1j * k * g.axes[0].coords)))
    out = step_split_operator(psi, H, 0.01)
    assert np.max(np.abs(out.amplitudes - np.exp(-1j * k**2 * 0.01 / (2 * 1.3)) * psi.amplitudes)) < 1e-13


def test_split_coherent_state_returns_after_period():
    g = Grid.line(256, 40.0)
    m, omega = 1.0, 0.5
    H = GridHamiltonian.one_body(g, m, Potential("harmonic", {"stiffness": m * omega**2}))
    sigma = np.sqrt(1 / (2 * m * omega))
    psi0 = gaussian_packet(g, 4.0, 0.0, sigma)
    period = 2 * np.pi / omega
    psi, _ = evolve(psi0, H, 0.0, period, period / 4000)
    x = observable_expectation(psi, "position")
    assert abs(x - 4.0) < 0.01 * sigma


def test_split_norm_over_many_steps():
    g = Grid.line(128, 30.0)
    H = GridHamiltonian.one_body(g, 1.0, Potential("gaussian_well", {"V0": -2.0, "width": 1.0}))
    step = SplitOperatorStepper(H, 0.01)
    a = gaussian_packet(g, 0.0, 1.0, 1.5).amplitudes
    for _ in range(10_000):
        a = step(a)
    assert abs(norm(WaveFunction(g, a)) - 1) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_propagators_are_linear(seed, alpha, beta):
    g = Grid.plane(16, 10.0, 16, 10.0)
    H = GridHamiltonian(g, (2 / 3, 0.5), np.random.default_rng(seed).normal(size=(16, 16)))
    a, b = random_state(g, seed).amplitudes, random_state(g, seed + 7).amplitudes
    for stepper in (SplitOperatorStepper(H, 0.05), CrankNicolsonStepper(H, 0.05)):
        lhs = stepper(alpha * a + beta * b)
        rhs = alpha * stepper(a) + beta * stepper(b)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


# -- Crank-Nicolson -----------------------------------------------------------

def test_cn_norm_per_step_1d_and_2d():
    g1 = Grid.line(128, 30.0)
    H1 = GridHamiltonian.one_body(g1, 1.0, Potential("gaussian_well", {"V0": -2.0, "width": 1.0}))
    g2 = Grid.plane(32, 16.0, 32, 16.0)
    H2 = jacobi_spec().on(g2)
    for g, H in ((g1, H1), (g2, H2)):
        step = CrankNicolsonStepper(H, 0.02)
        a = random_state(g, 4).amplitudes
        for _ in range(50):
            b = step(a)
            assert abs(norm(WaveFunction(g, b)) - norm(WaveFunction(g, a))) < 1e-10
            a = b


def test_cn_free_bin_phase_is_cayley():
    g = Grid.line(64, 20.0)
    m, dt = 1.0, 0.01
    H = GridHamiltonian.one_body(g, m)
    ax = g.axes[0]
    k = ax.k[5]
    psi = normalize(WaveFunction(g, np.exp(1j * k * ax.coords)))
    out = step_crank_nicolson(psi, H, dt)
    # finite-difference dispersion, Cayley phase
    e_fd = (1 - np.cos(k * ax.dx)) / (m * ax.dx**2)
    cayley = (1 - 0.5j * e_fd * dt) / (1 + 0.5j * e_fd * dt)
    assert np.max(np.abs(out.amplitudes - cayley * psi.amplitudes)) < 1e-12
    # and the Cayley phase is within O(dt^3) of the exact one for that energy
    assert abs(cayley - np.exp(-1j * e_fd * dt)) < (e_fd * dt) ** 3


def _packet_density_difference(n, dt, steps):
    g = Grid.line(n, 40.0)
    H = GridHamiltonian.one_body(g, 1.0, Potential("harmonic", {"stiffness": 0.1}))
    psi0 = gaussian_packet(g, 2.0, 0.5, 1.5)
    a, _ = evolve(psi0, H, 0.0, steps * dt, dt, scheme="split")
    b, _ = evolve(psi0, H, 0.0, steps * dt, dt, scheme="cn")
    return np.max(np.abs(np.abs(a.amplitudes) ** 2 - np.abs(b.amplitudes) ** 2))


def test_cn_agrees_with_split_after_100_steps():
    assert _packet_density_difference(1024, 0.02, 100) < 1e-4


def test_scheme_discrepancy_is_second_order():
    coarse = _packet_density_difference(2048, 0.04, 100)
    fine = _packet_density_difference(2048, 0.02, 200)
    assert 3.0 < coarse / fine < 5.0


# -- evolve -------------------------------------------------------------------

def test_evolve_zero_steps_is_identity():
    g = Grid.line(64, 20.0)
    psi = gaussian_packet(g, 0.0, 0.0, 1.0)
    out, log = evolve(psi, GridHamiltonian.one_body(g, 1.0), 1.0, 1.0, 0.1)
    assert np.array_equal(out.amplitudes, psi.amplitudes)


def test_evolve_semigroup():
    g = Grid.line(128, 30.0)
    H = GridHamiltonian.one_body(g, 1.0, Potential("gaussian_well", {"V0": -1.0, "width": 1.0}))
    psi = gaussian_packet(g, -3.0, 1.0, 1.2)
    full, _ = evolve(psi, H, 0.0, 2.0, 0.01)
    half, _ = evolve(psi, H, 0.0, 1.0, 0.01)
    rest, _ = evolve(half, H, 1.0, 2.0, 0.01)
    assert np.max(np.abs(full.amplitudes - rest.amplitudes)) < 1e-12


def test_evolve_observers_and_stride():
    g = Grid.line(64, 20.0)
    psi = gaussian_packet(g, 0.0, 0.0, 1.0)
    seen = []
    _, log = evolve(psi, GridHamiltonian.one_body(g, 1.0), 0.0, 1.0, 0.1,
                    observers=[Observer(lambda t, k, a: (k, round(t, 12)), stride=5),
                               lambda t, k, a: seen.append(k)])
    assert log == [(0, 0.0), (5, 0.5), (10, 1.0)]
    assert seen == list(range(11))


def test_evolve_rejects_fractional_step_count():
    g = Grid.line(64, 20.0)
    with pytest.raises(ValueError):
        evolve(gaussian_packet(g, 0.0, 0.0, 1.0), GridHamiltonian.one_body(g, 1.0), 0.0, 1.0, 0.3)


def test_evolve_boundary_guard_reports_time():
    g = Grid.line(64, 20.0)
    psi = gaussian_packet(g, 0.0, 3.0, 1.0)
    with pytest.raises(BoundaryMassError) as err:
        evolve(psi, GridHamiltonian.one_body(g, 1.0), 0.0, 10.0, 0.01)
    assert 0 < err.value.t < 10


# -- bound states -------------------------------------------------------------

@pytest.mark.parametrize("alpha,mu", [(1.0, 0.5), (0.7, 1.0)])
def test_poschl_teller_ground_state(alpha, mu):
    g = Grid.line(256, 48.0)
    H = GridHamiltonian.one_body(g, mu, Potential.single_bound_poschl_teller(alpha, mu))
    bs = ground_state_imaginary_time(H)
    exact = -(alpha**2) / (2 * mu)
    assert abs(bs.energy - exact) < 1e-6 * abs(exact)
    assert bs.residual < 1e-6
    assert abs(norm(bs.wavefunction) - 1) < 1e-10
    ref = normalize(WaveFunction(g, 1 / np.cosh(alpha * g.axes[0].coords)))
    assert abs(inner_product(ref, bs.wavefunction)) ** 2 > 1 - 1e-8


def test_harmonic_ground_and_first_excited():
    g = Grid.line(128, 24.0)
    m, omega = 1.0, 1.0
    H = GridHamiltonian.one_body(g, m, Potential("harmonic", {"stiffness": m * omega**2}))
    e0 = ground_state_imaginary_time(H, require_bound=False)
    assert abs(e0.energy - 0.5 * omega) < 1e-6 * 0.5 * omega
    e1 = ground_state_imaginary_time(H, orthogonal_to=[e0.wavefunction], require_bound=False)
    assert e1.energy > e0.energy
    assert abs(e1.energy - 1.5 * omega) < 1e-6 * 1.5 * omega
    assert abs(inner_product(e0.wavefunction, e1.wavefunction)) < 1e-8


def test_no_bound_state_raises():
    g = Grid.line(128, 24.0)
    H = GridHamiltonian.one_body(g, 1.0, Potential("gaussian_barrier", {"height": 1.0, "width": 1.0}))
    with pytest.raises(BoundStateError, match="channel B undefined"):
        ground_state_imaginary_time(H)


def test_imaginary_time_matches_dense_diagonalization():
    g = Grid.line(64, 16.0)
    H = GridHamiltonian.one_body(g, 0.5, Potential("gaussian_well", {"V0": -3.0, "width": 1.0}))
    it = ground_state_imaginary_time(H)
    dn = dense_ground_state(H)
    assert it.energy == pytest.approx(dn.energy, rel=1e-9)
    assert abs(inner_product(it.wavefunction, dn.wavefunction)) ** 2 > 1 - 1e-10


# -- dense oracle -------------------------------------------------------------

def test_dense_oracle_identity_and_unitarity():
    g = Grid.plane(16, 10.0, 16, 10.0)
    H = jacobi_spec(height=1.0).on(g)
    psi = random_state(g, 1)
    assert np.max(np.abs(dense_oracle_evolve(psi, H, 0.0).amplitudes - psi.amplitudes)) < 1e-12
    assert abs(norm(dense_oracle_evolve(psi, H, 2.7)) - 1) < 1e-10


def test_dense_hamiltonian_matches_apply():
    g = Grid.line(32, 12.0)
    H = GridHamiltonian.one_body(g, 0.8, Potential("gaussian_well", {"V0": -1.0, "width": 1.0}))
    psi = random_state(g, 2)
    assert np.max(np.abs(dense_hamiltonian(H) @ psi.amplitudes - H.apply(psi.amplitudes))) < 1e-12


def test_dense_oracle_size_cap():
    g = Grid.plane(128, 10.0, 64, 10.0)
    with pytest.raises(ValueError):
        dense_oracle_evolve(random_state(g), GridHamiltonian(g, (1.0, 1.0)), 1.0)


def _oracle_case():
    g = Grid.line(32, 44.0)
    H = GridHamiltonian.one_body(g, 2.0, Potential("harmonic", {"stiffness": 0.02}))
    return g, H, gaussian_packet(g, 0.0, 0.0, 3.8)


def test_split_halving_dt_quarters_oracle_error():
    g, H, psi0 = _oracle_case()
    psi0 = normalize(psi0.with_amplitudes(psi0.amplitudes * np.exp(0.3j * g.axes[0].coords)))
    exact = dense_oracle_evolve(psi0, H, 1.0).amplitudes
    errs = []
    for dt in (0.1, 0.05):
        out, _ = evolve(psi0, H, 0.0, 1.0, dt, guard_tol=None)
        errs.append(np.max(np.abs(out.amplitudes - exact)))
    assert 3.5 < errs[0] / errs[1] < 4.5
