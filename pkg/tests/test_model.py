import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phtrack import (DimensionError, DomainError, EMSystem, StateVector, check_structure, grad_hamiltonian,
                     hamiltonian, hessian_hamiltonian, open_loop_rhs)
from phtrack.model import fd_hessian, generic_gradient, q_grid, split_state

from conftest import make_toy_system, random_states

TOY = make_toy_system()


def fd_gradient_of_H(sys, eta, h=1e-6):
    """Central differences of the scalar energy: independent of the chain-rule gradient."""
    g = np.empty(eta.size)
    for i in range(eta.size):
        e = np.zeros(eta.size)
        e[i] = h
        g[i] = (hamiltonian(sys, eta + e) - hamiltonian(sys, eta - e)) / (2 * h)
    return g


def test_microphone_energy_gradient_and_field(presets):
    mic = presets["microphone"].system
    eta = np.array([0.5, 1.0, 2.0])
    # 1/2 p^2 + 1/2 (q - 1)^2 + 1/2 q x^2
    assert hamiltonian(mic, eta) == pytest.approx(1.625, abs=1e-14)
    np.testing.assert_allclose(grad_hamiltonian(mic, eta), [1.5, 1.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(open_loop_rhs(mic, eta, [0.0]), [1.0, -2.5, -1.0], atol=1e-14)
    np.testing.assert_allclose(open_loop_rhs(mic, eta, [0.7]), [1.0, -2.5, -0.3], atol=1e-14)


def test_stepper_coupling_values(presets):
    st_ = presets["stepper"].system
    np.testing.assert_allclose(st_.mu(np.array([0.0])), [0.375, 0.0], atol=1e-15)
    np.testing.assert_allclose(st_.grad_V(np.array([0.0])), [1.720129], atol=1e-15)


@pytest.mark.parametrize("name", ["stepper", "microphone", "loudspeaker"])
def test_gradient_matches_energy_differences(presets, name):
    b = presets[name]
    rng = np.random.default_rng(1)
    for eta in random_states(b.system, 50, rng, b.domain):
        g = grad_hamiltonian(b.system, eta)
        fd = fd_gradient_of_H(b.system, eta)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("name", ["stepper", "microphone", "loudspeaker"])
def test_analytic_hessian_matches_differences(presets, name):
    b = presets[name]
    rng = np.random.default_rng(2)
    for eta in random_states(b.system, 50, rng, b.domain):
        np.testing.assert_allclose(hessian_hamiltonian(b.system, eta), fd_hessian(b.system, eta), atol=1e-4)


def test_fused_stepper_gradient_agrees_with_chain_rule(presets):
    sys = presets["stepper"].system
    rng = np.random.default_rng(3)
    for eta in random_states(sys, 200, rng):
        np.testing.assert_allclose(grad_hamiltonian(sys, eta), generic_gradient(sys, eta), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=2, max_size=2),
       st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_toy_chain_rule_gradient(q, rest):
    eta = np.array(q + rest)
    g = grad_hamiltonian(TOY, eta)
    assert np.linalg.norm(g - fd_gradient_of_H(TOY, eta)) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_toy_hessian_symmetric_with_exact_momentum_block():
    eta = np.array([0.2, -0.4, 0.3, 0.1, 1.0, -0.5])
    h = hessian_hamiltonian(TOY, eta)
    np.testing.assert_allclose(h, h.T, atol=0)
    np.testing.assert_allclose(h[2:4, 2:4], np.linalg.inv(TOY.M), atol=1e-15)
    np.testing.assert_allclose(h[2:4, [0, 1, 4, 5]], 0.0, atol=0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=2, max_size=2),
       st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_power_balance(q, rest, u):
    # dH/dt = -|dH/dp|^2_{R_m} - |dH/dx|^2_{R_e} + (dH/dx)^T G_e u
    eta = np.array(q + rest)
    u = np.array(u)
    g = grad_hamiltonian(TOY, eta)
    gp, gx = g[2:4], g[4:]
    dH = g @ open_loop_rhs(TOY, eta, u)
    expected = -gp @ TOY.R_m @ gp - gx @ TOY.R_e @ gx + gx @ TOY.G_e @ u
    assert dH == pytest.approx(expected, abs=1e-10 * (1 + abs(expected)))
    assert g @ open_loop_rhs(TOY, eta, np.zeros(2)) <= 1e-12


def test_split_state_validates_shape_and_domain(presets):
    mic = presets["microphone"].system
    with pytest.raises(DimensionError):
        split_state(mic, np.zeros(4))
    with pytest.raises(DimensionError):
        open_loop_rhs(mic, np.array([0.5, 0, 0]), [1.0, 2.0])
    with pytest.raises(DomainError):
        hamiltonian(mic, np.array([1.5, 0.0, 0.0]))
    with pytest.raises(DomainError):
        grad_hamiltonian(mic, np.array([0.0, 0.0, 0.0]))  # open box: boundary excluded


def test_state_vector_round_trip():
    eta = np.array([0.1, -0.2, 0.3, 0.4, 0.5, 0.6])
    sv = StateVector.from_flat(TOY, eta)
    np.testing.assert_array_equal(sv.flat(), eta)
    np.testing.assert_array_equal(split_state(TOY, sv)[2], [0.5, 0.6])


def test_system_matrices_are_frozen():
    with pytest.raises(ValueError):
        TOY.M[0, 0] = 5.0
    with pytest.raises(DomainError):
        EMSystem("bad", 1, 1, M=1, R_m=1, J_e=0, R_e=0, G_e=1, V=None, grad_V=None, hess_V=None, mu=None,
                 jac_mu=None, Psi=None, dPsi=None, q_lower=[1.0], q_upper=[0.0])


def test_check_structure_reports_every_violation():
    rep = check_structure(TOY)
    assert rep.ok, rep.failed()
    bad = EMSystem("bad", 1, 1, M=[[-1.0]], R_m=[[0.0]], J_e=[[1.0]], R_e=[[-0.1]], G_e=[[0.0]],
                   V=lambda q: 0.0, grad_V=lambda q: np.zeros(1), hess_V=lambda q: np.zeros((1, 1)),
                   mu=lambda q: np.zeros(1), jac_mu=lambda q: np.zeros((1, 1)),
                   Psi=lambda q: np.array([[q[0]]]), dPsi=None, q_lower=[-1.0], q_upper=[1.0])
    rep = check_structure(bad)
    assert set(rep.failed()) == {"M_positive_definite", "R_m_positive_definite", "R_e_positive_semidefinite",
                                 "J_e_skew_symmetric", "G_e_full_rank", "Psi_positive_definite_on_q_domain"}
    assert rep.to_dict()["ok"] is False


def test_q_grid_is_interior():
    g = q_grid(TOY, 5)
    assert g.shape == (25, 2)
    assert np.all(g > -1.0) and np.all(g < 1.0)
