import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phtrack import (DivergenceError, FitFloorError, contraction_probe, estimate_convergence_rate, integrate,
                     run_tracking_experiment)


def decay(y, t):
    return -y


def test_rk4_scalar_exponential():
    t, y, h = integrate(decay, [1.0], 0.0, 1.0, step=0.01)
    assert h == pytest.approx(0.01)
    assert abs(y[-1, 0] - math.exp(-1)) <= 1e-6
    assert t.size == 101 and t[-1] == pytest.approx(1.0, abs=1e-15)


def test_rk4_fourth_order():
    errs = [abs(integrate(decay, [1.0], 0.0, 1.0, step=h)[1][-1, 0] - math.exp(-1)) for h in (0.1, 0.05, 0.025)]
    assert errs[0] / errs[1] >= 15 and errs[1] / errs[2] >= 15


def test_rk4_time_dependent_field():
    # y' = cos t, y(0) = 0
    _, y, _ = integrate(lambda y, t: np.array([math.cos(t)]), [0.0], 0.0, 2.0, step=0.01)
    assert y[-1, 0] == pytest.approx(math.sin(2.0), abs=1e-10)


def test_step_is_fitted_to_span_and_recording():
    t, y, h = integrate(decay, [1.0], 0.0, 1.0, step=0.3)
    assert h == pytest.approx(0.25)
    t, y, h = integrate(decay, [1.0], 0.0, 1.0, step=0.01, record_every=10)
    assert t.size == 11 and y.shape == (11, 1)
    with pytest.raises(ValueError):
        integrate(decay, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate(decay, [1.0], 0.0, 1.0, step=0.0)


def test_divergence_keeps_partial_trajectory():
    # y' = y^2 blows up at t = 1
    with pytest.raises(DivergenceError) as err:
        integrate(lambda y, t: y * y, [1.0], 0.0, 2.0, step=0.01)
    t, ys = err.value.partial
    assert 0.9 < err.value.last_time < 1.1
    assert t.size == ys.shape[0] and np.all(np.isfinite(ys))


def test_math_domain_failure_is_divergence():
    with pytest.raises(DivergenceError):
        integrate(lambda y, t: np.array([math.sqrt(y[0])]) - 2.0, [0.5], 0.0, 1.0, step=0.1)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-3, 3))
def test_rate_fit_recovers_exponential(rate, logc):
    t = np.linspace(0, 5, 501)
    fit = estimate_convergence_rate(t, np.exp(logc - rate * t))
    assert fit.rate == pytest.approx(rate, abs=1e-6)
    assert fit.residual < 1e-9 and fit.exponential


def test_rate_fit_synthetic_rate_two():
    t = np.linspace(0, 10, 1001)
    fit = estimate_convergence_rate(t, 3.0 * np.exp(-2.0 * t))
    assert abs(fit.rate - 2.0) <= 1e-6
    assert fit.window == pytest.approx((2.0, 8.0))


def test_rate_fit_flags_algebraic_decay():
    t = np.linspace(0, 10, 1001)
    fit = estimate_convergence_rate(t, (1 + t) ** -3.0)
    assert not fit.exponential and fit.drift > 0.5


def test_rate_fit_floor():
    t = np.linspace(0, 1, 11)
    with pytest.raises(FitFloorError):
        estimate_convergence_rate(t, np.zeros(11))


def test_on_reference_start_stays_on_reference(presets):
    b = presets["microphone"]
    res = run_tracking_experiment(b.system, b.gains, b.reference, b.reference.state(0.0), (0.0, 3.0))
    assert res.error_norm.max() < 1e-7
    # the residual drift is RK4 truncation on the fast electrical mode, shrinking at fourth order
    finer = run_tracking_experiment(b.system, b.gains, b.reference, b.reference.state(0.0), (0.0, 3.0), step=5e-4)
    assert finer.error_norm.max() < res.error_norm.max() / 15
    # no transient: u stays at the feasible input, u*(0) = 0.3
    assert res.control[0, 0] == pytest.approx(0.3, abs=1e-9)


def test_result_layout_and_csv(tmp_path, presets):
    b = presets["stepper"]
    res = run_tracking_experiment(b.system, b.gains, b.reference, b.eta0, (0.0, 0.05), step=2.5e-4, sample_dt=0.01)
    assert res.t.size == 6
    cols = res.columns()
    assert cols[:5] == ["t", "q", "p", "xe1", "xe2"]
    assert cols[-2:] == ["u1", "u2"] and len(cols) == 1 + 3 * 4 + 2
    np.testing.assert_allclose(res.E_xe, res.states[:, 2:] - res.reference[:, 2:])
    path = tmp_path / "run.csv"
    res.write_csv(path, header="config={}")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config={}" and lines[1] == ",".join(cols)
    back = np.loadtxt(path, delimiter=",", skiprows=2)
    np.testing.assert_array_equal(back[:, 1:5], res.states)  # 17 digits round-trip exactly
    s = res.summary()
    assert s["final_error_norm"] == pytest.approx(res.final_error)
    assert s["diagnostics"]["integrator"] == "rk4-fixed"


def test_microphone_tracking_decays(presets):
    b = presets["microphone"]
    res = run_tracking_experiment(b.system, b.gains, b.reference, b.eta0, (0.0, 10.0))
    assert res.error_norm[-1] < 1e-2 * res.error_norm[0]
    assert 0.4 < res.fitted_rate < 0.6  # slow mode -R_m / (2 M) of the mechanical part
    assert res.fit.residual < 0.5


def test_probe_identical_starts(presets):
    b = presets["microphone"]
    pr = contraction_probe(b.system, b.gains, b.reference, b.eta0, b.eta0, (0.0, 1.0))
    assert pr.distance.max() == 0.0 and pr.fit is None


def test_probe_distance_shrinks(presets):
    b = presets["microphone"]
    pr = contraction_probe(b.system, b.gains, b.reference, b.eta0, b.eta0 + [0.05, 0, 0], (0.0, 5.0))
    assert pr.distance[0] == pytest.approx(0.05)
    assert pr.distance[-1] < pr.distance[0] and pr.fit.rate > 0
