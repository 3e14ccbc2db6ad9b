import json
import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

import support
from ricci_transport.certify import (
    M_field,
    certify,
    checkpoint_tensors,
    condition12_threshold,
    hessian_decay_monitor,
    lambda_dot,
    lambda_dot_forms,
    monotonicity_table,
    perturb_potential,
    trajectory_hash,
)
from ricci_transport.errors import CertificationError, ConfigurationError, FlowNotConverged
from ricci_transport.flow import FlowConfig, run_flow
from ricci_transport.harmonics import SpectralField, synthesize
from ricci_transport.metric import ConformalMetric, hessian_g, metric_components, trace_rel
from ricci_transport.potential import solve_potential


def test_condition12_threshold_value():
    assert condition12_threshold(2.0, 2 * math.pi) == pytest.approx(math.log(2) / 3)
    assert condition12_threshold(2.0, 2 * math.pi) == pytest.approx(0.23105, abs=5e-6)


def test_round_certificate():
    traj = support.trajectory("round")
    cert = certify(traj)
    rho = 1 / math.sqrt(2)
    assert cert.Lambda <= 1e-14 and cert.lambda_dot_integral <= 1e-13
    assert cert.bound_paper == pytest.approx(rho, rel=1e-12)
    assert cert.bound_flowwise == pytest.approx(rho, rel=1e-12)
    assert cert.condition12 and cert.decay_monitor_verdict
    assert cert.measured is None
    assert lambda_dot(traj, 0.0) == 0.0


def test_round_decay_monitor_is_zero():
    mon = hessian_decay_monitor(support.trajectory("round"))
    assert np.max(mon.sup_hess_xi) <= 1e-13 and np.max(mon.sup_M) <= 1e-13
    assert mon.verdict


def test_M_vanishes_on_round_metric():
    m = ConformalMetric(SpectralField.constant(12, 0.2))
    xi, _ = solve_potential(m)
    assert np.max(np.abs(M_field(m, xi).matrices())) <= 1e-14


def test_manufactured_M_is_trace_free():
    m = ConformalMetric(SpectralField.zeros(12))
    xi = SpectralField.from_modes(12, {(2, 0): -1.0 / 6.0})
    # M built from its definition with the manufactured source R - r = Y20
    y20 = synthesize(SpectralField.from_modes(12, {(2, 0): 1.0}), m.grid)
    M = hessian_g(m, xi) - metric_components(m).scaled(0.5 * y20)
    assert np.max(np.abs(trace_rel(m, M))) <= 1e-13


@pytest.mark.parametrize("name", ["y20", "y31", "mixed"])
def test_M_trace_vanishes_on_presets(name):
    traj = support.trajectory(name, 0.05)
    for k in (0, len(traj.checkpoints) // 2):
        c = traj.checkpoints[k]
        m = ConformalMetric(c.u)
        assert np.max(np.abs(trace_rel(m, M_field(m, c.xi)))) <= 1e-8


@pytest.mark.parametrize("name", ["y20", "y31", "mixed"])
def test_lambda_dot_forms_agree_at_every_checkpoint(name):
    rows = checkpoint_tensors(support.trajectory(name, 0.05))
    for row in rows:
        assert abs(row.lambda_dot - row.lambda_dot_corollary) <= 1e-10 * max(1.0, row.lambda_dot)


def test_lambda_dot_decays_and_interpolates():
    traj = support.trajectory("y20", 0.05)
    rows = checkpoint_tensors(traj)
    rates = np.array([r.lambda_dot for r in rows])
    assert rates[0] > 0
    C = certify(traj).C
    assert np.all(rates <= 1.05 * rates[0] * np.exp(-C * traj.times) + 1e-10)
    t = 0.5 * (traj.times[3] + traj.times[4])
    assert min(rates[3], rates[4]) * 0.9 <= lambda_dot(traj, t) <= max(rates[3], rates[4]) * 1.1
    assert lambda_dot(traj, traj.times[5]) == rows[5].lambda_dot


@pytest.mark.parametrize("name", ["y20", "y31", "mixed"])
def test_decay_monitor_passes_on_presets(name):
    assert hessian_decay_monitor(support.trajectory(name, 0.05)).verdict


def test_decay_monitor_detects_perturbed_potential():
    traj = support.trajectory("y20", 0.05)
    k = len(traj.checkpoints) // 2
    bumped = perturb_potential(traj, k, SpectralField.from_modes(traj.L, {(3, 2): 1e-2}))
    mon = hessian_decay_monitor(bumped)
    assert not mon.verdict
    assert mon.first_violation == pytest.approx(traj.times[k])


def test_certificate_fields_and_ordering():
    traj = support.trajectory("y20", 0.05)
    cert = certify(traj)
    rho = 1 / math.sqrt(2)
    assert cert.rho == pytest.approx(rho, rel=1e-14)
    assert rho <= cert.bound_flowwise_half <= cert.bound_flowwise
    assert cert.bound_paper == pytest.approx(rho * math.exp(3 * cert.Lambda / cert.C), rel=1e-14)
    assert cert.lambda_dot_integral == pytest.approx(
        cert.lambda_dot_trapezoid + cert.lambda_dot_tail, rel=1e-14)
    assert 0 < cert.lambda_dot_tail < 1e-3 * cert.lambda_dot_trapezoid
    assert cert.condition12 == (cert.Lambda <= cert.condition12_threshold)
    assert cert.ordering_holds()
    d = json.loads(cert.to_json())
    assert d["bound_flowwise_variants"]["exp_half_integral"] == cert.bound_flowwise_half
    assert d["provenance"]["trajectory_hash"] == trajectory_hash(traj)


def test_certificate_with_atlas_satisfies_bounds():
    cert = certify(support.trajectory("y20", 0.05), support.atlas("y20", 0.05))
    assert cert.measured is not None
    assert cert.rho < cert.measured <= 1.05 * cert.bound_min
    assert cert.ordering_holds()


def test_certification_requires_positive_curvature():
    m = ConformalMetric(SpectralField.from_modes(12, {(2, 0): 0.6}))
    with pytest.warns(UserWarning), pytest.raises(FlowNotConverged) as info:
        run_flow(m, FlowConfig(t_max=1e-3))
    partial = info.value.trajectory
    with pytest.raises(ConfigurationError):
        certify(partial)
    xi = SpectralField.zeros(12)
    filled = replace(partial, checkpoints=tuple(replace(c, xi=xi) for c in partial.checkpoints))
    with pytest.raises(CertificationError):
        certify(filled)


def test_monotonicity_table_verdicts():
    class Fake:
        def __init__(self, lam, c):
            self.Lambda, self.C = lam, c
            self.lambda_dot_integral = self.bound_paper = self.bound_flowwise_half = 0.0
            self.condition12 = True

    eps = [0.02, 0.005, 0.01]
    certs = [Fake(0.4, 3.0), Fake(0.1, 3.5), Fake(0.2, 3.2)]
    table = monotonicity_table(eps, certs)
    assert [r["eps"] for r in table["rows"]] == [0.005, 0.01, 0.02]
    assert table["Lambda_nondecreasing"] and table["C_nonincreasing"]
    assert table["Lambda_over_eps_max"] == pytest.approx(20.0)
    certs[0] = Fake(0.15, 3.6)
    table = monotonicity_table(eps, certs)
    assert not table["Lambda_nondecreasing"] and not table["C_nonincreasing"]


def test_lambda_dot_forms_on_manufactured_hessian():
    m = ConformalMetric(SpectralField.zeros(10))
    z = SpectralField.from_modes(10, {(1, 0): 1.0})
    prop, cor = lambda_dot_forms(m, z, r=2.0)
    # 2 Hess z + 0 g = -2 z g, whose minimum eigenvalue is -2 max z = -2 sqrt(3 / 4 pi).
    zmax = float(np.max(synthesize(z, m.grid)))
    assert prop == pytest.approx(2 * zmax, rel=1e-12)
    assert_allclose(prop, cor, rtol=1e-12)
