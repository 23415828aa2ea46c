import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_model
from mfglift.coefficients import Coefficient, ControlTerm, parse_coefficient
from mfglift.measures import GridMeasure, MeasureFlow, sup_w1
from mfglift.ncn_solver import (
    DegenerateDiffusionError,
    FeedbackControl,
    LQSpec,
    StepSizeError,
    fp_step,
    maximise_hamiltonian,
    riccati_paths,
    solve_fp,
    solve_hjb,
    solve_lq_riccati,
    solve_ncn_fixed_point,
    time_grid,
)

# frozen from tests/_oracles.py
LQ_ETA0 = 0.7615941559556675
LQ_S_T = 0.17353705943948886
TERMINAL_ETA0 = 0.5

LQ_F = "control_cost(1.0) + convolution(identity, square(-0.5))"


def test_time_grid():
    np.testing.assert_allclose(time_grid(1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        time_grid(1.0, 0.3)


def test_riccati_closed_forms():
    _, eta, _, _ = riccati_paths(LQSpec(1.0, 0.0, 0.3), 0.25, 1.0, 1e-3)
    assert abs(eta[0] - LQ_ETA0) <= 1e-9
    assert abs(eta[0] - math.tanh(1.0)) <= 1e-9
    _, eta, _, _ = riccati_paths(LQSpec(0.0, 1.0, 0.3), 0.25, 1.0, 1e-3)
    assert abs(eta[0] - TERMINAL_ETA0) <= 1e-12
    _, eta, s, _ = riccati_paths(LQSpec(0.0, 0.0, 0.3), 0.25, 1.0, 1e-3)
    assert np.all(eta == 0.0)
    assert s[-1] == pytest.approx(0.25 + 0.09, abs=1e-12)


def test_riccati_variance_oracle():
    _, _, s, _ = riccati_paths(LQSpec(), 0.25, 1.0, 1e-3)
    assert s[-1] == pytest.approx(LQ_S_T, abs=1e-10)


def test_hjb_zero_reward():
    m = make_model("control(1.0)", "constant(0.3)", "constant(0)", "constant(0)")
    flow = MeasureFlow.constant(time_grid(1.0, 0.01), m.initial)
    v, a = solve_hjb(m, flow)
    assert np.all(v.values == 0.0)
    assert np.all(a.values == 0.0)


def test_hjb_terminal_only_lq():
    m = make_model("control(1.0)", "constant(0.3)", "control_cost(1.0)", "convolution(identity, square(-0.5))")
    dt = 2e-3
    sol = solve_ncn_fixed_point(m, dt)
    x = m.initial.nodes
    core = slice(x.size // 10, x.size - x.size // 10)
    err = np.max(np.abs(sol.feedback.values[0, core] + TERMINAL_ETA0 * (x[core] - 0.0)))
    assert err <= 5 * (m.initial.dx + dt)


def test_lq_grid_feedback_and_variance(lq_base):
    dx, dt = 0.02, 2e-3
    x = lq_base.model.initial.nodes
    core = slice(x.size // 10, x.size - x.size // 10)
    assert lq_base.converged
    err = np.max(np.abs(lq_base.feedback.values[0, core] + LQ_ETA0 * x[core]))
    assert err <= 5 * (dx + dt)
    assert abs(lq_base.flow[-1].variance() - LQ_S_T) <= 5 * (dx + dt + lq_base.fp_tol)


def test_lq_mean_flow_constant():
    m = make_model("control(1.0)", "constant(0.3)", LQ_F, "constant(0)", mean=0.5, x_min=-3.5)
    sol = solve_ncn_fixed_point(m, 5e-3)
    assert np.max(np.abs(sol.flow.means() - m.initial.mean())) <= 2 * m.initial.dx


def test_fp_constant_drift_moves_mean():
    m = make_model("constant(1.0)", "constant(0.3)", "constant(0)", "constant(0)", x_min=-4.0, n=551)
    times = time_grid(1.0, 1e-2)
    flow = MeasureFlow.constant(times, m.initial)
    out = solve_fp(m, FeedbackControl.constant(FeedbackControl(times, m.initial.x_min, 0.02, np.zeros((times.size, m.initial.n))), 0.0), flow)
    assert abs(out[-1].mean() - (m.initial.mean() + 1.0)) <= 2 * m.initial.dx


def test_fp_riccati_feedback_variance(lq_riccati):
    out = solve_fp(lq_riccati.model, lq_riccati.feedback, lq_riccati.flow)
    assert abs(out[-1].variance() - LQ_S_T) <= 5 * (0.02 + 2e-3)


def test_decoupled_model_converges_immediately():
    m = make_model("control(1.0)", "constant(0.3)", "control_cost(1.0) + constant(1.0)", "constant(0)")
    sol = solve_ncn_fixed_point(m, 1e-2, damping=1.0)
    assert sol.converged
    assert sol.picard_residuals[1] <= 1e-12


def test_nonconvergence_is_a_result(lq_initial):
    from mfglift.ncn_solver import lq_model

    sol = solve_ncn_fixed_point(lq_model(LQSpec(), lq_initial), 5e-3, fp_tol=1e-12, max_iter=2)
    assert not sol.converged
    assert len(sol.picard_residuals) == 2


def test_cfl_error_names_step():
    m = make_model("control(1.0)", "constant(0.3)", "control_cost(0.01) + convolution(identity, square(-5))", "constant(0)", a=(-100.0, 100.0))
    with pytest.raises(StepSizeError) as err:
        solve_ncn_fixed_point(m, 0.05)
    assert 0 < err.value.required_dt < 0.05


def test_degenerate_diffusion():
    m = make_model("control(1.0)", "constant(0.0)", "control_cost(1.0)", "constant(0)")
    with pytest.raises(DegenerateDiffusionError):
        solve_ncn_fixed_point(m, 0.1)


def test_golden_section_matches_closed_form(lq_initial):
    m = make_model("control(1.0)", "constant(0.3)", LQ_F, "constant(0)")
    cs = m.coefficients
    opaque = Coefficient.from_callable(lambda t, x, mu, a: -0.5 * a**2 - 0.5 * (x - mu.mean()) ** 2, uses_control=True)
    m2 = m.with_coefficients(f=opaque)
    x = np.linspace(-2, 2, 41)
    p = np.linspace(-5, 5, 41)
    a1 = maximise_hamiltonian(m, 0.0, x, lq_initial, p)
    a2 = maximise_hamiltonian(m2, 0.0, x, lq_initial, p)
    np.testing.assert_allclose(a1, np.clip(p, -3, 3), atol=0)
    np.testing.assert_allclose(a2, a1, atol=1e-8)
    assert cs.b.control_linear_gain() == 1.0


def test_hamiltonian_ties_prefer_zero(lq_initial):
    m = make_model("control(1.0)", "constant(0.3)", "constant(0)", "constant(0)")
    a = maximise_hamiltonian(m, 0.0, np.zeros(3), lq_initial, np.zeros(3))
    assert np.all(a == 0.0)


def test_riccati_solution_object(lq_riccati):
    assert lq_riccati.converged and lq_riccati.method == "riccati"
    np.testing.assert_allclose(lq_riccati.flow.means(), 0.0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 0.5), st.floats(0.01, 5.0))
def test_prop_fp_step_conserves_mass(seed, dt, scale):
    rng = np.random.default_rng(seed)
    n = 60
    m = rng.random(n) + 1e-3
    m /= m.sum() * 0.1
    drift = scale * rng.normal(size=n)
    diff = rng.uniform(0.001, 1.0, n)
    out = fp_step(m, drift, diff, 0.1, dt)
    assert out.sum() * 0.1 == pytest.approx(1.0, abs=1e-12)
    assert np.all(out >= -1e-12)
