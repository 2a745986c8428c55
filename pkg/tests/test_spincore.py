import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ecsim.spincore import (
    MHZ,
    build_operator,
    check_unitary,
    evolve,
    exp_hermitian,
    expectation,
    gate_fidelity,
    named_state,
    populations,
    projector,
)


def random_hermitian(rng, scale=1.0):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    return scale * (m + m.conj().T) / 2


def random_density(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    r = m @ m.conj().T
    return r / np.trace(r)


seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_sz_and_iz_are_diagonal():
    assert np.allclose(build_operator("Sz"), np.diag([0.5, 0.5, -0.5, -0.5]), atol=0)
    assert np.allclose(build_operator("Iz"), np.diag([0.5, -0.5, 0.5, -0.5]), atol=0)


def test_sy24_definition_and_support():
    sy = np.kron(oracles.SY, oracles.E2)
    iz = np.kron(oracles.E2, oracles.SZ)
    expected = 0.5 * sy - sy @ iz
    got = build_operator("Sy24")
    assert np.max(np.abs(got - expected)) == 0.0
    mask = np.zeros((4, 4), bool)
    mask[np.ix_([1, 3], [1, 3])] = True
    assert np.all(got[~mask] == 0) and np.any(got[mask] != 0)


def test_product_operators_match_kronecker_oracle():
    for name, m in [("Sx", oracles.SX), ("Sy", oracles.SY), ("Sz", oracles.SZ)]:
        assert np.array_equal(build_operator(name), np.kron(m, oracles.E2))
    for name, m in [("Ix", oracles.SX), ("Iy", oracles.SY), ("Iz", oracles.SZ)]:
        assert np.array_equal(build_operator(name), np.kron(oracles.E2, m))


def test_unknown_operator_names_the_label():
    with pytest.raises(ValueError, match="Qz"):
        build_operator("Qz")


def test_build_operator_returns_independent_copy():
    a = build_operator("Sx")
    a[0, 0] = 99
    assert build_operator("Sx")[0, 0] == 0


def test_exp_of_zero_is_identity():
    assert np.allclose(exp_hermitian(np.zeros((4, 4)), 123.4), np.eye(4), atol=1e-15)


def test_exp_of_diagonal():
    d = np.array([0.3, -1.2, 2.0, 0.0])
    t = 1.7
    assert np.allclose(exp_hermitian(np.diag(d), t), np.diag(np.exp(-1j * d * t)), atol=1e-14)


def test_exp_matches_taylor_series(rng):
    for _ in range(20):
        h = random_hermitian(rng)
        assert np.max(np.abs(exp_hermitian(h, 1.0) - oracles.taylor_expm(h, 1.0))) < 1e-10


def test_exp_rejects_non_hermitian_and_bad_time():
    with pytest.raises(ValueError, match="Hermitian"):
        exp_hermitian(np.triu(np.ones((4, 4))), 1.0)
    with pytest.raises(ValueError):
        exp_hermitian(np.eye(4), float("nan"))
    with pytest.raises(ValueError, match="4x4"):
        exp_hermitian(np.eye(3), 1.0)
    with pytest.raises(ValueError, match="NaN"):
        exp_hermitian(np.full((4, 4), np.inf), 1.0)


def test_evolve_identity_and_swap():
    rho = projector(3)
    assert np.array_equal(evolve(rho, np.eye(4)), rho)
    swap = np.eye(4)[[0, 1, 3, 2]]
    assert np.allclose(evolve(rho, swap), projector(4), atol=0)


def test_evolve_rejects_non_unitary():
    with pytest.raises(ValueError, match="unitary"):
        evolve(projector(1), 1.01 * np.eye(4))


def test_expectation_examples():
    ba = projector(3)
    assert expectation(ba, build_operator("Iz")) == 0.5
    assert expectation(ba, build_operator("Sz")) == -0.5
    sz = build_operator("Sz")
    assert expectation(-sz, sz) == pytest.approx(-1.0, abs=1e-15)


def test_expectation_rejects_non_hermitian_observable():
    with pytest.raises(ValueError):
        expectation(projector(1), np.triu(np.ones((4, 4))))


def test_expectation_asserts_real_value():
    # non-Hermitian state with Hermitian observable gives a complex trace
    rho = np.zeros((4, 4), complex)
    rho[0, 1] = 1.0
    with pytest.raises(ValueError, match="imaginary"):
        expectation(rho, build_operator("Ix") + build_operator("Iy"))


def test_named_states():
    assert np.array_equal(named_state("thermal"), -build_operator("Sz"))
    for name, level in [("aa", 1), ("ab", 2), ("ba", 3), ("bb", 4)]:
        assert populations(named_state(name))[level - 1] == 1.0
    with pytest.raises(ValueError, match="zz"):
        named_state("zz")


def test_gate_fidelity_phase_insensitive():
    u = exp_hermitian(build_operator("Sx"), 0.7)
    assert gate_fidelity(u, np.exp(0.4j) * u) == pytest.approx(1.0, abs=1e-14)
    assert gate_fidelity(np.eye(4), exp_hermitian(build_operator("Sy"), np.pi)) < 1e-15


def test_mhz_conversion():
    assert MHZ == pytest.approx(2 * np.pi / 1000, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(seed=seeds, t=st.floats(-1e3, 1e3))
def test_generated_unitaries_are_unitary(seed, t):
    h = random_hermitian(np.random.default_rng(seed), scale=0.2)
    u = exp_hermitian(h, t)
    assert np.max(np.abs(u @ u.conj().T - np.eye(4))) < 1e-12
    check_unitary(u, tol=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=seeds, t1=st.floats(0, 500), t2=st.floats(0, 500))
def test_semigroup_property(seed, t1, t2):
    h = random_hermitian(np.random.default_rng(seed), scale=0.2)
    lhs = exp_hermitian(h, t1) @ exp_hermitian(h, t2)
    assert np.max(np.abs(lhs - exp_hermitian(h, t1 + t2))) < 1e-10


@settings(max_examples=200, deadline=None)
@given(seed=seeds)
def test_evolve_preserves_trace_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    rho = random_hermitian(rng)
    u = exp_hermitian(random_hermitian(rng), 1.3)
    out = evolve(rho, u)
    assert abs(np.trace(out) - np.trace(rho)) < 1e-12
    assert np.max(np.abs(out - out.conj().T)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=seeds, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_expectation_is_bilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    r1, r2 = random_density(rng), random_density(rng)
    o1, o2 = random_hermitian(rng), random_hermitian(rng)
    lhs = expectation(a * r1 + b * r2, o1)
    assert lhs == pytest.approx(a * expectation(r1, o1) + b * expectation(r2, o1), abs=1e-10)
    lhs = expectation(r1, a * o1 + b * o2)
    assert lhs == pytest.approx(a * expectation(r1, o1) + b * expectation(r1, o2), abs=1e-10)
