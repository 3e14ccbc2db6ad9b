import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import support
from ricci_transport.errors import (
    CertificationError,
    ConfigurationError,
    FlowNotConverged,
    StepRejected,
)
from ricci_transport.flow import (
    FlowConfig,
    continuity_residual,
    fit_decay_rate,
    hermite_weights,
    l1_amplitude,
    lagrange_stencil,
    run_flow,
    step,
    time_derivative,
    track_min_R,
)
from ricci_transport.harmonics import SpectralField
from ricci_transport.metric import ConformalMetric
from ricci_transport.verification import linearized_decay_oracle

PRESETS = [("y20", 0.05), ("y31", 0.05), ("mixed", 0.05)]


def test_round_metric_is_stationary():
    m = ConformalMetric(SpectralField.constant(12, 0.3))
    assert_allclose(step(m, 0.05).u.coeffs, m.u.coeffs, atol=1e-15)
    traj = run_flow(m)
    assert len(traj.checkpoints) == 1 and traj.t_final == 0.0 and traj.converged


def test_small_step_reduces_deviation():
    m = ConformalMetric(SpectralField.from_modes(16, {(2, 0): 1e-4}))
    assert step(m, 1e-3).sup_R_minus_r() < m.sup_R_minus_r()


def test_step_requires_positive_dt():
    with pytest.raises(ConfigurationError):
        step(ConformalMetric(SpectralField.zeros(8)), 0.0)


def test_oversized_step_is_rejected():
    m = ConformalMetric(SpectralField.from_modes(16, {(5, 2): 0.05}))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(StepRejected) as info:
        step(m, 0.5, safety=2.0)
    assert info.value.growth > 2.0


def test_flow_halves_dt_after_rejection():
    m = ConformalMetric(SpectralField.from_modes(16, {(2, 0): 0.05}))
    with pytest.raises(FlowNotConverged) as info:
        run_flow(m, FlowConfig(dt_init=1.0, stability=50.0, t_max=1.0))
    traj = info.value.trajectory
    dts = [e["dt"] for e in traj.events if e["kind"] == "step_rejected"]
    assert len(dts) >= 3
    assert_allclose(np.array(dts[1:]) / np.array(dts[:-1]), 0.5)
    assert np.max(np.diff(traj.times)) <= 2 * dts[0]


def test_non_convergence_reports_partial_trajectory():
    m = ConformalMetric(SpectralField.from_modes(12, {(2, 0): 0.05}))
    with pytest.raises(FlowNotConverged) as info:
        run_flow(m, FlowConfig(t_max=0.05))
    traj = info.value.trajectory
    assert not traj.converged and traj.t_final == pytest.approx(0.05)
    assert info.value.diagnostics["sup_R_minus_r"] > traj.tol_conv


def test_flow_config_validation():
    for bad in ({"dt_init": 0}, {"t_max": -1}, {"tol_conv": 0}, {"safety": 1.0},
                {"checkpoint_every": 0}):
        with pytest.raises(ConfigurationError):
            FlowConfig(**bad)


def test_l1_content_is_flagged():
    m = ConformalMetric(SpectralField.from_modes(12, {(1, 1): 0.02, (2, 0): 0.02}))
    traj = run_flow(m)
    assert any(e["kind"] == "l1_content" for e in traj.events)
    assert l1_amplitude(m.u) == pytest.approx(0.02)


def test_nonpositive_initial_curvature_warns():
    m = ConformalMetric(SpectralField.from_modes(12, {(2, 0): 0.6}))
    assert np.min(m.R) <= 0
    with pytest.warns(UserWarning, match="positive curvature"):
        with pytest.raises(FlowNotConverged):
            run_flow(m, FlowConfig(t_max=1e-3))


@pytest.mark.parametrize("name,eps", PRESETS)
def test_trajectory_invariants(name, eps):
    traj = support.trajectory(name, eps)
    times = traj.times
    assert np.all(np.diff(times) > 0)
    last = traj.checkpoints[-1]
    assert last.diagnostics["sup_R_minus_r"] <= traj.tol_conv
    vols = np.array([c.diagnostics["volume"] for c in traj.checkpoints])
    assert np.max(np.abs(vols / traj.volume0 - 1)) <= 1e-6
    rs = np.array([c.diagnostics["r"] for c in traj.checkpoints])
    assert np.max(np.abs(rs / traj.r - 1)) <= 1e-8
    # final conformal factor is the constant log(rho) up to a Moebius drift at l = 1
    u = last.u.coeffs.copy()
    u[1:4] = 0.0
    assert abs(u[0] / math.sqrt(4 * math.pi) - math.log(traj.rho)) < 1e-6
    assert np.max(np.abs(u[4:])) < 1e-6


@pytest.mark.parametrize("name,eps", PRESETS)
def test_curvature_floor_is_preserved(name, eps):
    traj = support.trajectory(name, eps)
    min_r0 = traj.checkpoints[0].diagnostics["min_R"]
    assert track_min_R(traj) >= 0.9 * min_r0


def test_round_curvature_floor_is_r():
    traj = support.trajectory("round")
    assert track_min_R(traj) == pytest.approx(traj.r, rel=1e-12)


def test_negative_curvature_floor_is_an_error():
    m = ConformalMetric(SpectralField.from_modes(12, {(2, 0): 0.6}))
    with pytest.warns(UserWarning):
        with pytest.raises(FlowNotConverged) as info:
            run_flow(m, FlowConfig(t_max=1e-3))
    with pytest.raises(CertificationError):
        track_min_R(info.value.trajectory)


@pytest.mark.parametrize("name,l", [("y20", 2), ("y31", 3)])
def test_decay_rate_matches_linearization(name, l):
    traj = support.trajectory(name, 0.05)
    expected = linearized_decay_oracle(l, traj.r)
    assert fit_decay_rate(traj) == pytest.approx(expected, rel=0.1)


def test_linearized_decay_oracle_values():
    assert linearized_decay_oracle(2, 4.0) == pytest.approx(-8.0)
    assert linearized_decay_oracle(3, 4.0) == pytest.approx(-20.0)
    with pytest.raises(ConfigurationError):
        linearized_decay_oracle(0, 4.0)


def test_late_time_deviation_is_decreasing():
    traj = support.trajectory("y20", 0.05)
    s = np.array([c.diagnostics["sup_R_minus_r"] for c in traj.checkpoints])
    late = s[len(s) // 4:]
    assert np.all(np.diff(late) < 0)


def test_continuity_residual_for_constant_function():
    traj = support.trajectory("y20", 0.05)
    res = continuity_residual(traj, SpectralField.constant(traj.L, 1.0))
    assert np.max(res["rate"]) <= 1e-6 and np.max(res["weak"]) <= 1e-6


def test_continuity_residual_on_round_trajectory():
    traj = support.trajectory("round")
    res = continuity_residual(traj, SpectralField.from_modes(traj.L, {(1, 0): 1.0}))
    assert np.max(res["rate"]) <= 1e-12 and np.max(res["weak"]) <= 1e-12


def test_continuity_residual_for_y20():
    traj = support.trajectory("y20", 0.05)
    f = SpectralField.from_modes(traj.L, {(2, 0): 1.0})
    res = continuity_residual(traj, f)
    sup = res["sup_R_minus_r"]
    # ||Y20||_inf = sqrt(5 / 4 pi)
    bound = 1e-4 * math.sqrt(5 / (4 * math.pi)) * sup[0]
    assert np.max(res["rate"]) <= bound and np.max(res["weak"]) <= bound
    assert_allclose(res["rate_term"], res["weak_term"], atol=1e-10)


def test_continuity_residual_needs_potentials():
    m = ConformalMetric(SpectralField.from_modes(12, {(2, 0): 0.02}))
    with pytest.raises(ConfigurationError):
        continuity_residual(run_flow(m), SpectralField.constant(12, 1.0))


def test_time_derivative_is_exact_for_polynomials_up_to_stencil_degree():
    t = np.cumsum(np.r_[0.0, np.linspace(0.1, 0.3, 16)])
    f = 1 + t - 2 * t**2 + 0.5 * t**4 - 0.1 * t**10
    assert_allclose(time_derivative(t, f), 1 - 4 * t + 2 * t**3 - t**9, atol=1e-8)
    g = 1 + t - 2 * t**2 + 0.5 * t**4
    assert_allclose(time_derivative(t, g, width=5), 1 - 4 * t + 2 * t**3, atol=1e-11)


def test_interpolation_reproduces_checkpoints_and_cubics():
    h = 0.3
    w = hermite_weights(0.0, h)
    assert_allclose(w, [1, 0, 0, 0], atol=1e-15)
    w = hermite_weights(1.0, h)
    assert_allclose(w, [0, 0, 1, 0], atol=1e-15)
    times = np.array([0.0, 0.1, 0.25, 0.3, 0.5, 0.55])
    idx, weights = lagrange_stencil(times, 2, 0.27)
    p = lambda x: 2 - x + 3 * x**3
    assert_allclose(sum(wi * p(times[i]) for i, wi in zip(idx, weights)), p(0.27), atol=1e-13)


def test_hermite_interpolant_tracks_fine_flow():
    traj = support.trajectory("y20", 0.05)
    k = 10
    a, b = traj.checkpoints[k], traj.checkpoints[k + 1]
    mid = 0.5 * (a.t + b.t)
    direct = step(ConformalMetric(a.u), mid - a.t, traj.dealias)
    assert np.max(np.abs(traj.u_at(mid).coeffs - direct.u.coeffs)) < 1e-8
