import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phtrack import (CertificationError, ControllerGains, DomainBox, build_N, build_P, certify,
                     check_assumption1, estimate_hessian_bounds, is_hurwitz, spectral_factorization_property)
from phtrack.certification import axis_test, mechanical_block, quadratic_roots, shaped_hessian

from conftest import make_toy_system


def spectral_key(z):
    # ordering that ignores round-off in the real part of imaginary-axis eigenvalues
    return (round(z.real, 6), round(z.imag, 6))


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.1 * np.eye(n)


def test_microphone_P_matrix(presets):
    b = presets["microphone"]
    np.testing.assert_array_equal(build_P(b.system, b.gains), [[0, 1, 0], [-1, -1, 0], [0, 0, -30]])
    assert is_hurwitz(build_P(b.system, b.gains)).ok


def test_stepper_P_matrix(presets):
    b = presets["stepper"]
    P = build_P(b.system, b.gains)
    np.testing.assert_array_equal(P[2:, 2:], -np.diag([23.0, 25.0]))
    np.testing.assert_array_equal(P[:2, :2], [[0, 1], [-1, -2]])


def test_quadratic_roots():
    np.testing.assert_allclose(quadratic_roots(2.5), [-0.5, -2.0])
    r = quadratic_roots(1.0)
    np.testing.assert_allclose(r * r + r + 1, 0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_mechanical_block_spectrum_factorises(n, seed):
    assert spectral_factorization_property(random_spd(np.random.default_rng(seed), n))


def test_mechanical_block_shape():
    F = mechanical_block([[2.0]])
    np.testing.assert_array_equal(F, [[0, 1], [-1, -2]])


def test_is_hurwitz_threshold():
    assert not is_hurwitz(np.diag([-1.0, 0.0])).ok
    assert not is_hurwitz(np.diag([-1.0, -1e-12])).ok  # inside the tolerance band
    res = is_hurwitz([[0.0, 1.0], [-2.0, -3.0]])
    assert res.ok and res.max_real == pytest.approx(-1.0)


def test_build_N_block_layout():
    P = np.array([[-1.0, 2.0], [0.0, -3.0]])
    N = build_N(P, 1.0, 4.0, 0.5)
    np.testing.assert_array_equal(N[:2, :2], P)
    np.testing.assert_allclose(N[:2, 2:], 0.75 * P @ P.T)
    np.testing.assert_allclose(N[2:, :2], -1.25 * np.eye(2))
    np.testing.assert_array_equal(N[2:, 2:], -P.T)
    with pytest.raises(ValueError):
        build_N(P, 2.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        build_N(P, 1.0, 2.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(1e-3, 1.0))
def test_equal_bounds_reduce_to_P_spectrum(n, seed, eps):
    # beta1 == beta2 makes N block-triangular: eig(N) = eig(P) u eig(-P^T), off the axis for Hurwitz P
    rng = np.random.default_rng(seed)
    P = -random_spd(rng, n) + 0.3 * (lambda a: a - a.T)(rng.normal(size=(n, n)))
    lam, m, ok = axis_test(build_N(P, 1.0, 1.0, eps))
    expected = np.concatenate([np.linalg.eigvals(P), -np.linalg.eigvals(P)])
    np.testing.assert_allclose(sorted(lam, key=spectral_key), sorted(expected, key=spectral_key), atol=1e-9)
    assert ok


def test_N_is_hamiltonian_matrix():
    # J N is symmetric for J = [[0, I], [-I, 0]], so the spectrum is symmetric about the imaginary axis
    rng = np.random.default_rng(0)
    P = -random_spd(rng, 3)
    N = build_N(P, 1.0, 3.0, 0.1)
    J = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])
    np.testing.assert_allclose(J @ N, (J @ N).T, atol=1e-12)


def test_microphone_N_regression_fixture(presets):
    b = presets["microphone"]
    lam, m, ok = axis_test(build_N(build_P(b.system, b.gains), 0.92, 58.4, 0.01))
    expected = np.array([-4.39028380, 4.39028380, 0.01079531j, -0.01079531j, 1.98384345j, -1.98384345j])
    np.testing.assert_allclose(sorted(lam, key=spectral_key), sorted(expected, key=spectral_key), atol=1e-7)
    # two conjugate pairs sit on the imaginary axis: the axis test fails at re_tol
    assert m < 1e-12 and not ok


def test_axis_condition_holds_for_small_spread():
    # for P = F1 (R_m = 1) the axis-free region is roughly 1 - b1/b2 < 0.45
    F1 = mechanical_block([[1.0]])
    assert axis_test(build_N(F1, 0.7, 1.0, 0.01))[2]
    assert not axis_test(build_N(F1, 0.5, 1.0, 0.01))[2]


def test_assumption1_stepper_depends_on_box(presets):
    b = presets["stepper"]
    narrow = b.domain.with_axis(0, -0.06, 0.06)
    res = check_assumption1(b.system, narrow)
    assert res.ok and res.min_eigenvalue > 0
    wide = check_assumption1(b.system, b.domain)
    assert not wide.ok
    assert np.cos(24 * wide.witness_q[0]) <= 0


def test_microphone_hessian_bounds_against_closed_form(presets):
    b = presets["microphone"]
    hb = estimate_hessian_bounds(b.system, b.gains, b.domain)
    # shaped Hessian [[1, 0, x], [0, 1, 0], [x, 0, q + 55]] has eigenvalues 1 and
    # ((1 + s) -/+ sqrt((s - 1)^2 + 4 x^2)) / 2 with s = q + 55
    qs = np.linspace(b.domain.lower[0], b.domain.upper[0], 9)
    xs = np.linspace(b.domain.lower[2], b.domain.upper[2], 9)
    s, x = np.meshgrid(qs + 55.0, xs)
    root = np.sqrt((s - 1) ** 2 + 4 * x ** 2)
    lo = min(1.0, ((1 + s - root) / 2).min())
    hi = max(1.0, ((1 + s + root) / 2).max())
    assert hb.min_eigenvalue == pytest.approx(lo, rel=1e-12)
    assert hb.max_eigenvalue == pytest.approx(hi, rel=1e-12)
    assert hb.beta1 == pytest.approx(0.95 * lo) and hb.beta2 == pytest.approx(1.05 * hi)


def test_indefinite_shaped_hessian_raises(presets):
    b = presets["stepper"]
    with pytest.raises(CertificationError):
        estimate_hessian_bounds(b.system, b.gains, b.domain.with_axis(0, -0.06, 0.06))


def test_shaped_hessian_adds_gain_block(presets):
    b = presets["microphone"]
    eta = np.array([0.3, 0.1, 1.0])
    np.testing.assert_allclose(shaped_hessian(b.system, b.gains, eta),
                               [[1, 0, 1.0], [0, 1, 0], [1.0, 0, 55.3]], atol=1e-14)


def test_generic_system_bounds_use_difference_hessian():
    toy = make_toy_system()
    gains = ControllerGains(np.eye(2), 4 * np.eye(2))
    box = DomainBox([-0.5, -0.5, -1, -1, 0.5, -0.5], [0.5, 0.5, 1, 1, 1.5, 0.5], grid_points=3)
    hb = estimate_hessian_bounds(toy, gains, box)
    assert 0 < hb.beta1 < hb.beta2


def test_certify_microphone_report(presets):
    b = presets["microphone"]
    rep = certify(b.system, b.gains, b.domain)
    assert rep.assumption1_ok and rep.P_hurwitz_ok
    assert 0 < rep.beta1 < rep.beta2
    assert rep.beta1 == pytest.approx(0.9049, abs=1e-4) and rep.beta2 == pytest.approx(58.45, abs=1e-2)
    assert len(rep.N_results) == 13 and rep.passing_epsilons == []
    assert rep.overall_ok is False
    doc = json.loads(rep.to_json())
    assert doc["overall_ok"] is False
    assert len(doc["P_spectrum"][0]) == 2
    assert set(doc) >= {"beta1", "beta2", "epsilon_tried", "N_spectrum_per_epsilon", "settings"}


def test_certify_records_errors_instead_of_raising(presets):
    b = presets["stepper"]
    rep = certify(b.system, b.gains, b.domain)
    assert not rep.overall_ok and rep.beta1 is None
    assert any("hessian_bounds" in e for e in rep.errors)
    rep = certify(b.system, b.gains, b.domain, epsilon_grid=[])
    assert rep.errors and not rep.overall_ok


def test_domain_box_validation():
    with pytest.raises(ValueError):
        DomainBox([0.0], [0.0])
    with pytest.raises(ValueError):
        DomainBox([0.0], [1.0], grid_points=1)
    box = DomainBox([0, 0], [1, 2], grid_points=3)
    assert box.grid().shape == (9, 2)
    assert box.contains([[0.5, 2.0]]) and not box.contains([1.5, 0.0])
