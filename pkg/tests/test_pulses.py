import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import EXACT, NEAR
from ecsim.model import SpinParams, build_hamiltonian, derive, diagonalizer, resonance_offset
from ecsim.pulses import (
    PulseSpec,
    dephase,
    effective_angle,
    finite_pulse,
    free_propagator,
    ideal_selective_pulse,
    ideal_semiselective,
    pulse_propagator,
)
from ecsim.spincore import MHZ, build_operator, evolve, exp_hermitian, gate_fidelity, named_state, populations


def centred(mhz, doublet="2324"):
    p = SpinParams.from_mhz(*mhz)
    return p.with_offset(resonance_offset(p, doublet))


def h_of(p):
    return oracles.hamiltonian(p.omega_S_offset, p.omega_I, p.A, p.B)


params = st.tuples(st.floats(-40, 40), st.floats(-60, 60), st.floats(0.5, 20), st.floats(-30, 30)).map(
    lambda t: SpinParams.from_mhz(t[0], t[1], t[2], t[3])
)


def test_free_propagator_matches_block_formula(near):
    for t in (0.0, 1.0, 155.0, 931.7):
        assert np.max(np.abs(free_propagator(near, t) - oracles._block_exp(h_of(near), t))) < 1e-12
    with pytest.raises(ValueError, match=">= 0"):
        free_propagator(near, -1.0)


def test_pulse_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        PulseSpec("soft", "24", 1.0)
    with pytest.raises(ValueError, match="transition"):
        PulseSpec("ideal_selective", "14", 1.0)
    with pytest.raises(ValueError, match="doublet"):
        PulseSpec("ideal_semiselective", "24", 1.0)
    with pytest.raises(ValueError, match="omega1"):
        PulseSpec("finite", "2324", math.pi)
    with pytest.raises(ValueError, match="duration"):
        PulseSpec("finite", "2324", math.pi, omega1=0.1, duration=0.0)
    assert PulseSpec("finite", "2324", math.pi, omega1=0.1, duration=32.0).elapsed == 32.0
    assert PulseSpec("ideal_selective", "24", math.pi).elapsed == 0.0


def test_effective_angle_scaling(near):
    c = math.cos(derive(near).eta)
    assert effective_angle(near, "24", 2.0) == pytest.approx(2.0 * c, abs=1e-15)
    assert effective_angle(near, "13", 2.0) == pytest.approx(2.0 * c, abs=1e-15)
    assert effective_angle(near, "12", 2.0) == 2.0
    with pytest.raises(ValueError, match="23"):
        effective_angle(near, "23", 1.0)


@settings(max_examples=150, deadline=None)
@given(p=params, target=st.sampled_from(["12", "34", "13", "24"]), angle=st.floats(-7, 7), phase=st.floats(-4, 4))
def test_selective_pulse_matches_projector_oracle(p, target, angle, phase):
    j, k = int(target[0]), int(target[1])
    u = ideal_selective_pulse(p, target, angle, phase)
    ref = oracles.selective_oracle(h_of(p), j, k, effective_angle(p, target, angle), phase)
    assert np.max(np.abs(u - ref)) < 1e-10


@settings(max_examples=150, deadline=None)
@given(p=params, doublet=st.sampled_from(["2324", "1314"]), angle=st.floats(-7, 7), phase=st.floats(-4, 4))
def test_semiselective_pulse_matches_projector_oracle(p, doublet, angle, phase):
    pairs = ((2, 3), (2, 4)) if doublet == "2324" else ((1, 3), (1, 4))
    u = ideal_semiselective(p, doublet, angle, phase)
    ref = oracles.semiselective_oracle(h_of(p), pairs, angle, phase)
    assert np.max(np.abs(u - ref)) < 1e-10


def test_selective_pi_inverts_eigenlevels(near):
    u = diagonalizer(near)
    for target in ("12", "34"):
        j, k = int(target[0]) - 1, int(target[1]) - 1
        w = u @ ideal_selective_pulse(near, target, math.pi) @ u.conj().T
        assert abs(abs(w[k, j]) - 1) < 1e-12


def test_semiselective_pi_empties_shared_level(near):
    u = diagonalizer(near)
    for doublet, shared, others in (("2324", 1, (2, 3)), ("1314", 0, (2, 3))):
        w = u @ ideal_semiselective(near, doublet, math.pi) @ u.conj().T
        col = np.abs(w[:, shared]) ** 2
        assert col[shared] < 1e-12
        assert col[list(others)].sum() == pytest.approx(1.0, abs=1e-12)


def test_product_form_of_24_pulse_agrees_only_without_mixing():
    beta = 1.3
    p0 = SpinParams.from_mhz(-14.58, -29.16, 0.0)
    product = exp_hermitian(build_operator("Sy24"), beta)
    assert np.max(np.abs(ideal_selective_pulse(p0, "24", beta) - product)) < 1e-14
    # with mixing the eigenbasis pulse is a genuinely different operator
    p = SpinParams.from_mhz(*EXACT)
    c = math.cos(derive(p).eta)
    product = exp_hermitian(build_operator("Sy24"), beta * c)
    assert np.max(np.abs(ideal_selective_pulse(p, "24", beta) - product)) > 0.05


def test_semiselective_pi_on_bb_at_cancellation():
    p = centred(EXACT)
    eta_a = derive(p).eta_alpha
    out = populations(evolve(named_state("bb"), ideal_semiselective(p, "2324", math.pi)))
    # the product state |bb> is not an eigenstate; the shortfall is bounded by sin^2(eta_alpha)
    assert 0 < 1 - out[1] <= math.sin(eta_a) ** 2
    assert out[1] == pytest.approx(0.99395, abs=1e-5)
    for b in (1.0, 0.1, 0.01):
        q = centred((-14.58, -29.16, b))
        pop = populations(evolve(named_state("bb"), ideal_semiselective(q, "2324", math.pi)))
        assert 1 - pop[1] <= math.sin(derive(q).eta_alpha) ** 2 + 1e-15
    assert 1 - pop[1] < 1e-6


def test_lock_holds_nuclear_polarisation():
    p = centred(EXACT)
    s2 = math.sin(derive(p).eta_alpha) ** 2
    lock = ideal_semiselective(p, "2324", math.pi)
    iz = build_operator("Iz")
    worst = 0.0
    for tau in np.linspace(0, 2000, 401):
        r = evolve(evolve(evolve(named_state("bb"), lock), free_propagator(p, tau)), lock)
        worst = max(worst, abs(np.real(np.trace(r @ iz)) + 0.5))
    assert worst <= s2 * (1 + 1e-9)
    assert worst == pytest.approx(s2, rel=1e-3)


def test_finite_pulse_zero_field_is_free_evolution(near):
    assert np.max(np.abs(finite_pulse(near, 0.0, 32.0) - free_propagator(near, 32.0))) < 1e-13
    with pytest.raises(ValueError):
        finite_pulse(near, 0.1, 0.0)


def test_finite_pi_pulse_close_to_ideal():
    p = centred(NEAR)
    uf = finite_pulse(p, 15.6 * MHZ, 32.0)
    ui = ideal_semiselective(p, "2324", math.pi)
    assert gate_fidelity(uf, ui) > 0.95
    rho = -build_operator("Sz")
    assert np.max(np.abs(populations(evolve(rho, uf)) - populations(evolve(rho, ui)))) < 0.05
    u = diagonalizer(p)
    lvl2 = u.conj().T @ np.diag([0, 1, 0, 0]) @ u
    eig = np.real(np.diag(u @ evolve(lvl2, uf) @ u.conj().T))
    assert eig[2] + eig[3] > 0.95
    twice = np.real(np.diag(u @ evolve(lvl2, uf @ uf) @ u.conj().T))
    assert twice[1] > 0.8


def test_pulse_propagator_dispatch(near):
    s = PulseSpec("ideal_selective", "13", 0.7, 0.2)
    assert np.array_equal(pulse_propagator(near, s), ideal_selective_pulse(near, "13", 0.7, 0.2))
    s = PulseSpec("finite", "2324", math.pi, omega1=0.1, duration=10.0)
    assert np.array_equal(pulse_propagator(near, s), finite_pulse(near, 0.1, 10.0))


def _random_state(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    return (m + m.conj().T) / 2


@pytest.mark.parametrize("basis", ["eigen", "product"])
def test_dephase_idempotent_and_trace_preserving(near, rng, basis):
    for _ in range(50):
        rho = _random_state(rng)
        once = dephase(rho, near, basis)
        assert np.max(np.abs(dephase(once, near, basis) - once)) < 1e-14
        assert abs(np.trace(once) - np.trace(rho)) < 1e-13


def test_dephase_eigen_keeps_eigen_populations(near, rng):
    u = diagonalizer(near)
    rho = _random_state(rng)
    out = u @ dephase(rho, near) @ u.conj().T
    ref = u @ rho @ u.conj().T
    assert np.allclose(np.diag(out), np.diag(ref), atol=1e-14)
    assert np.max(np.abs(out - np.diag(np.diag(out)))) < 1e-14
    # a state diagonal in the eigenbasis commutes with H0 and is left alone
    back = dephase(rho, near)
    h = build_hamiltonian(near)
    assert np.max(np.abs(back @ h - h @ back)) < 1e-14


def test_dephase_rejects_unknown_basis(near):
    with pytest.raises(ValueError, match="basis"):
        dephase(np.eye(4), near, "lab")
