import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfglift.coefficients import CertificationError, Coefficient, ControlTerm, constant, parse_coefficient, validate_existence_assumptions
from mfglift.lift import (
    BrownianPath,
    ShiftPropagationError,
    brownian_path,
    inverse_lift,
    lift_solution,
    log_log_slope,
    read_noise_csv,
    refinement_errors,
    round_trip_check,
    solve_q_sde,
    write_noise_csv,
    zero_path,
)
from mfglift.measures import GridMeasure, shift_measure, wasserstein
from mfglift.ncn_solver import LQSpec, lq_model, solve_lq_riccati

Q_ODE_T1 = -0.6321205588285043  # tests/_oracles.py


def with_noise(base, b0, sigma0):
    return base.model.with_coefficients(b0=parse_coefficient(b0), sigma0=parse_coefficient(sigma0))


def test_brownian_path_seeded(lq_riccati):
    a = brownian_path(lq_riccati.times, 7)
    b = brownian_path(lq_riccati.times, 7)
    assert a.values[0] == 0.0
    np.testing.assert_array_equal(a.values, b.values)
    c = a.coarsen(5)
    np.testing.assert_array_equal(c.values, a.values[::5])
    with pytest.raises(ValueError):
        BrownianPath(a.times, a.values + 1.0, 0)


def test_zero_coefficients_zero_shift(lq_riccati):
    cn = lift_solution(lq_riccati, brownian_path(lq_riccati.times, 1))
    assert np.all(cn.shift.values == 0.0)
    assert all(cn.flow[k] == lq_riccati.flow[k] for k in range(0, len(cn.flow), 50))


def test_constant_coefficients_exact(lq_riccati):
    B = brownian_path(lq_riccati.times, 3)
    q = solve_q_sde(lq_riccati.flow, constant(0.2), constant(0.4), B).values
    np.testing.assert_allclose(q, 0.2 * B.times + 0.4 * B.values, rtol=0, atol=1e-13)


def test_mean_reverting_shift_matches_ode():
    init = GridMeasure.normal(1.0, 0.25, -3.0, 0.02, 401)
    base = solve_lq_riccati(LQSpec(), init, 1.0, 1e-3)
    dt = 1e-3
    q = solve_q_sde(base.flow, parse_coefficient("mean(scale(-1.0))"), constant(0.0), zero_path(base.times)).values
    assert abs(q[-1] - Q_ODE_T1) <= 2 * dt


def test_lift_shifts_flow(lq_riccati):
    m = with_noise(lq_riccati, "0.2", "0.4")
    cn = lift_solution(lq_riccati, brownian_path(lq_riccati.times, 5), m)
    q = cn.shift.values
    for k in range(0, len(q), 25):
        assert cn.flow[k] == shift_measure(lq_riccati.flow[k], q[k])
        assert cn.flow[k].mean() == pytest.approx(lq_riccati.flow[k].mean() + q[k], abs=1e-12)
        assert abs(wasserstein(cn.flow[k], lq_riccati.flow[k]) - abs(q[k])) <= 1e-12
    # the control is unchanged in the shifted frame
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(cn.feedback.at(100, x + q[100]), lq_riccati.feedback.at(100, x), atol=1e-12)


def test_lift_preconditions(lq_riccati):
    B = brownian_path(lq_riccati.times, 0)
    with pytest.raises(ValueError, match="base solution not converged"):
        lift_solution(replace(lq_riccati, converged=False), B)
    raw = lq_riccati.model.with_coefficients(b=Coefficient.of(ControlTerm(1.0)))
    with pytest.raises(CertificationError):
        lift_solution(lq_riccati, B, raw)
    with pytest.raises(ValueError):
        solve_q_sde(lq_riccati.flow, constant(0.0), constant(0.0), B.coarsen(2))


def test_non_finite_coefficient_named(lq_riccati):
    bad = Coefficient.from_callable(lambda t, x, mu, a: np.inf if t > 0.5 else 0.0, uses_control=False)
    with pytest.raises(ShiftPropagationError, match="t=0.5"):
        solve_q_sde(lq_riccati.flow, bad, constant(0.0), brownian_path(lq_riccati.times, 0))


def test_inverse_lift_exact_for_constants(lq_riccati):
    m = with_noise(lq_riccati, "0.2", "0.4")
    B = brownian_path(lq_riccati.times, 9)
    cn = lift_solution(lq_riccati, B, m)
    q, rec = inverse_lift(m, cn.flow, B)
    np.testing.assert_array_equal(q.values, cn.shift.values)
    assert all(rec[k] == lq_riccati.flow[k] for k in range(len(rec)))
    rep = round_trip_check(lq_riccati, B, m)
    assert rep.max_w1 == 0.0 and rep.q_max_err == 0.0


def test_inverse_lift_deterministic_drift(lq_riccati):
    m = with_noise(lq_riccati, "1.0", "0")
    cn = lift_solution(lq_riccati, zero_path(lq_riccati.times), m)
    q, _ = inverse_lift(m, cn.flow, cn.noise)
    np.testing.assert_allclose(q.values, lq_riccati.times, rtol=0, atol=1e-12)


def test_round_trip_measure_dependent(lq_riccati):
    m = with_noise(lq_riccati, "mean(tanh)", "0.3")
    dt = lq_riccati.dt
    for seed in range(20):
        rep = round_trip_check(lq_riccati, brownian_path(lq_riccati.times, seed), m)
        assert rep.q_max_err <= 2 * dt
        assert rep.max_w1 <= 2 * dt


def test_zero_noise_round_trip(lq_riccati):
    rep = round_trip_check(lq_riccati, zero_path(lq_riccati.times))
    assert rep.max_w1 == 0.0 and rep.q_max_err == 0.0


def test_pathwise_reproducible(lq_riccati):
    m = with_noise(lq_riccati, "mean(tanh)", "0.3")
    a = lift_solution(lq_riccati, brownian_path(lq_riccati.times, 4), m)
    b = lift_solution(lq_riccati, brownian_path(lq_riccati.times, 4), m)
    np.testing.assert_array_equal(a.shift.values, b.shift.values)
    assert a.flow.anchors == b.flow.anchors


def test_strong_order(lq_initial):
    cache = {}

    def flow_for(dt):
        if dt not in cache:
            cache[dt] = solve_lq_riccati(LQSpec(), lq_initial, 1.0, dt).flow
        return cache[dt]

    steps, errs = refinement_errors(flow_for, parse_coefficient("mean(tanh)"), constant(0.3), 0.02, 4, range(10))
    assert log_log_slope(steps, errs) >= 0.45


def test_shift_lipschitz_transfer(lq_riccati):
    m = with_noise(lq_riccati, "mean(tanh)", "0")
    c4 = validate_existence_assumptions(m, samples=100)["8_common_lipschitz"].constant
    mu = lq_riccati.flow[200]
    b0 = m.coefficients.b0
    qs = np.linspace(-3, 3, 61)
    vals = np.array([float(b0(0.0, 0.0, shift_measure(mu, q))) for q in qs])
    lip = np.max(np.abs(np.diff(vals)) / np.diff(qs))
    assert lip <= c4 + 1e-6


def test_objective_invariance_pointwise(lq_riccati):
    m = with_noise(lq_riccati, "0.2", "0.4")
    cn = lift_solution(lq_riccati, brownian_path(lq_riccati.times, 2), m)
    f = m.coefficients.f
    y = np.linspace(-1.5, 1.5, 31)
    for k in (0, 100, 400):
        a = np.linspace(-1, 1, 31)
        lhs = f(cn.times[k], y + cn.shift.values[k], cn.flow[k], a)
        rhs = f(cn.times[k], y, lq_riccati.flow[k], a)
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_noise_csv_round_trip(tmp_path, lq_riccati):
    m = with_noise(lq_riccati, "0.2", "0.4")
    cn = lift_solution(lq_riccati, brownian_path(lq_riccati.times, 6), m)
    p = tmp_path / "noise.csv"
    write_noise_csv(cn.noise, cn.shift, p)
    assert p.read_text().splitlines()[0] == "t,B,q"
    B, q = read_noise_csv(p, 6)
    np.testing.assert_array_equal(B.values, cn.noise.values)
    np.testing.assert_array_equal(q.values, cn.shift.values)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 2), st.integers(0, 10_000))
def test_prop_constant_lift_w1_is_abs_q(b, s, seed):
    init = GridMeasure.normal(0.0, 0.25, -4.0, 0.05, 161)
    base = solve_lq_riccati(LQSpec(), init, 1.0, 0.05)
    m = base.model.with_coefficients(b0=constant(b), sigma0=constant(s))
    cn = lift_solution(base, brownian_path(base.times, seed), m)
    for k in range(len(cn.flow)):
        assert abs(wasserstein(cn.flow[k], base.flow[k]) - abs(cn.shift.values[k])) <= 1e-12
    rep = round_trip_check(base, cn.noise, m)
    assert rep.q_max_err == 0.0 and rep.max_w1 == 0.0
