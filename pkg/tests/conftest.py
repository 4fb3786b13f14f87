import math

import numpy as np
import pytest

from phtrack import ControllerGains, EMSystem, ReferenceTrajectory, get_preset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_toy_system() -> EMSystem:
    """Two-axis plant with configuration-dependent Psi and mu, no analytic overrides."""

    def Psi(q):
        return np.array([[2.0 + q[0] ** 2, 0.3 * q[1]], [0.3 * q[1], 1.5 + math.sin(q[1]) ** 2]])

    def dPsi(q):
        return np.array([[[2 * q[0], 0.0], [0.0, 0.0]],
                         [[0.0, 0.3], [0.3, 2 * math.sin(q[1]) * math.cos(q[1])]]])

    def mu(q):
        return np.array([0.5 * q[0], q[0] * q[1]])

    def jac_mu(q):
        return np.array([[0.5, 0.0], [q[1], q[0]]])

    return EMSystem(
        "toy", 2, 2,
        M=[[2.0, 0.3], [0.3, 1.0]], R_m=[[1.0, 0.2], [0.2, 0.5]],
        J_e=[[0.0, 0.4], [-0.4, 0.0]], R_e=[[0.8, 0.0], [0.0, 0.3]], G_e=[[1.0, 0.2], [0.0, 1.5]],
        V=lambda q: 0.5 * (3 * q[0] ** 2 + 2 * q[1] ** 2) + 0.1 * q[0] ** 4,
        grad_V=lambda q: np.array([3 * q[0] + 0.4 * q[0] ** 3, 2 * q[1]]),
        hess_V=lambda q: np.array([[3 + 1.2 * q[0] ** 2, 0.0], [0.0, 2.0]]),
        mu=mu, jac_mu=jac_mu, Psi=Psi, dPsi=dPsi, q_lower=[-1.0, -1.0], q_upper=[1.0, 1.0],
    )


def toy_reference() -> ReferenceTrajectory:
    """Smooth (not necessarily feasible) reference for controller identities."""
    return ReferenceTrajectory.from_functions(
        q=lambda t: np.array([0.3 * math.sin(t), 0.2 * math.cos(t)]),
        p=lambda t: np.array([0.1 * math.cos(t), -0.1 * math.sin(t)]),
        x_e=lambda t: np.array([1.0 + 0.2 * math.sin(2 * t), -0.5 + 0.1 * t]),
        x_e_dot=lambda t: np.array([0.4 * math.cos(2 * t), 0.1]),
    )


@pytest.fixture(scope="session")
def toy():
    return make_toy_system()


@pytest.fixture(scope="session")
def toy_gains():
    return ControllerGains([[5.0, 1.0], [1.0, 4.0]], [[3.0, 0.5], [0.5, 2.0]])


@pytest.fixture(scope="session")
def presets():
    return {name: get_preset(name) for name in ("stepper", "microphone", "loudspeaker")}


def random_states(sys, n, rng, domain=None):
    """Uniform samples from a box; the certification domain if given, else the q box with |p|, |x| <= 2."""
    if domain is not None:
        lo, hi = domain.lower, domain.upper
    else:
        lo = np.concatenate([sys.q_lower * 0.95, -2 * np.ones(sys.n_m + sys.n_e)])
        hi = np.concatenate([sys.q_upper * 0.95, 2 * np.ones(sys.n_m + sys.n_e)])
    return lo + (hi - lo) * rng.random((n, lo.size))
