import numpy as np
import pytest
from dataclasses import replace

from timecrisis.catalog import catalog
from timecrisis.multipliers import build_certificate
from timecrisis.reformulate import CrossingVector, integrate_normalized
from timecrisis.simulate import ControlSignal
from timecrisis.solve import SolverOptions, solve_fixed_structure
from timecrisis.verify import (
    CriticalDirection,
    FirstOrderTols,
    check_first_order,
    evaluate_omega,
    lagrangian_merit,
    linearize,
    sample_critical,
    second_order_check,
    verify_solution,
)


@pytest.fixture(scope="module")
def linear_pack():
    spec = catalog("linear_payoff_1d")
    init = ControlSignal.constant(0.5, 1000, 0.0, 2.0, "normalized")
    sol = solve_fixed_structure(spec, 1, init, (1.5,), SolverOptions())
    return spec, sol, build_certificate(spec, sol)


@pytest.fixture(scope="module")
def quad_pack():
    spec = catalog("quad_payoff_1d")
    init = ControlSignal.constant(0.5, 1000, 0.0, 2.0, "normalized")
    sol = solve_fixed_structure(spec, 1, init, (1.5,), SolverOptions())
    return spec, sol, build_certificate(spec, sol)


def test_hand_certificate_passes_tight_tolerances(linear_pack):
    spec, sol, cert = linear_pack
    tols = FirstOrderTols(
        stationarity=1e-6, hamiltonian_jump=1e-8, hamiltonian_arc=1e-8,
        h0=1e-8, integral_relation=1e-6,
    )
    report = check_first_order(spec, sol, cert, tols=tols)
    assert report.passed, report.table()
    assert report.entry("pontryagin_margin").value == pytest.approx(0.0, abs=1e-9)


def test_report_serialization(tmp_path, linear_pack):
    spec, sol, cert = linear_pack
    report = check_first_order(spec, sol, cert)
    report.to_json(tmp_path / "verification.json", timestamp=False)
    import json

    obj = json.loads((tmp_path / "verification.json").read_text())
    assert obj["passed"] is True
    names = {e["name"] for e in obj["entries"]}
    assert "integral_relation_max" in names
    assert isinstance(report.table(), str)


def test_linearize_zero_direction(linear_pack):
    spec, sol, _ = linear_pack
    dx = linearize(spec, sol, np.zeros((1000, 1)), np.zeros(1))
    assert np.all(dx == 0.0)


def test_linearize_matches_tau_finite_difference(linear_pack):
    spec, sol, _ = linear_pack
    dx = linearize(spec, sol, np.zeros((1000, 1)), np.array([1.0]))
    # closed form: dx(t) = t/tau on the first arc, then back to 0 at T
    nps = sol.traj_norm.nodes_per_arc
    assert dx[nps, 0] == pytest.approx(1.0, abs=1e-12)
    assert dx[-1, 0] == pytest.approx(0.0, abs=1e-12)
    eps = 1e-6
    tp = integrate_normalized(spec, sol.control_norm, CrossingVector((sol.tau[0] + eps,), spec.T))
    tm = integrate_normalized(spec, sol.control_norm, CrossingVector((sol.tau[0] - eps,), spec.T))
    fd = (tp.states - tm.states) / (2 * eps)
    assert np.max(np.abs(dx - fd)) <= 1e-5


def test_linearize_control_direction_fd(quad_pack):
    spec, sol, _ = quad_pack
    rng = np.random.default_rng(2)
    du = rng.standard_normal((1000, 1))
    dx = linearize(spec, sol, du, np.zeros(1))
    eps = 1e-6
    up = ControlSignal(sol.control_norm.values + eps * du, 0.0, 2.0, "normalized")
    um = ControlSignal(sol.control_norm.values - eps * du, 0.0, 2.0, "normalized")
    tp = integrate_normalized(spec, up, sol.cv)
    tm = integrate_normalized(spec, um, sol.cv)
    fd = (tp.states - tm.states) / (2 * eps)
    assert np.max(np.abs(dx - fd)) / max(1.0, np.max(np.abs(fd))) <= 1e-5


def test_linearize_is_linear(quad_pack):
    spec, sol, _ = quad_pack
    rng = np.random.default_rng(0)
    du1, du2 = rng.standard_normal((1000, 1)), rng.standard_normal((1000, 1))
    dt1, dt2 = rng.standard_normal(1), rng.standard_normal(1)
    lhs = linearize(spec, sol, 2.0 * du1 + 3.0 * du2, 2.0 * dt1 + 3.0 * dt2)
    rhs = 2.0 * linearize(spec, sol, du1, dt1) + 3.0 * linearize(spec, sol, du2, dt2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_cone_trivial_on_linear(linear_pack):
    # every cell sits on an active bound, so the tangency projection kills
    # all control variations and the crossing constraint pins delta tau
    spec, sol, cert = linear_pack
    dirs, warnings = sample_critical(spec, sol, cert, count=50, seed=3)
    assert dirs == []
    assert any("cone nearly trivial" in w for w in warnings)
    status, val, acc, _ = second_order_check(spec, sol, cert, count=50, seed=3)
    assert status == "vacuous (cone trivial)"
    assert val is None and acc == 0


def test_cone_sampled_on_quad(quad_pack):
    spec, sol, cert = quad_pack
    dirs, warnings = sample_critical(spec, sol, cert, count=100, seed=3)
    assert len(dirs) == 100
    for d in dirs[:10]:
        assert d.tangency_residual <= 1e-8
        assert d.crossing_residual <= 1e-8
        assert d.cost_value <= 1e-8
        assert abs(d.norm(sol) - 1.0) <= 1e-9


def test_injected_tangency_violation_rejected(quad_pack):
    spec, sol, cert = quad_pack
    dirs, _ = sample_critical(spec, sol, cert, count=5, seed=9)
    d = dirs[0]
    # corrupt delta_u on the second arc, where the upper bound is active
    bad_du = d.delta_u.copy()
    bad_du[700, 0] += 1.0
    bad = CriticalDirection(bad_du, d.delta_tau, d.delta_x, _res(spec, sol, bad_du), d.crossing_residual, d.cost_value)
    assert bad.tangency_residual > 1e-8


def _res(spec, sol, du):
    from timecrisis.verify import _tangency_residual

    return _tangency_residual(spec, sol, du, 1e-6)


def test_omega_zero_direction(quad_pack):
    spec, sol, cert = quad_pack
    zero = CriticalDirection(np.zeros((1000, 1)), np.zeros(1), np.zeros_like(sol.traj_norm.states), 0.0, 0.0, 0.0)
    assert evaluate_omega(spec, sol, cert, zero) == 0.0


def test_omega_quadratic_homogeneity_and_symmetry(quad_pack):
    spec, sol, cert = quad_pack
    dirs, _ = sample_critical(spec, sol, cert, count=4, seed=11)
    d1, d2 = dirs[0], dirs[1]

    def scale(d, a):
        return CriticalDirection(a * d.delta_u, a * d.delta_tau, a * d.delta_x, 0.0, 0.0, 0.0)

    def add(da, db):
        return CriticalDirection(
            da.delta_u + db.delta_u, da.delta_tau + db.delta_tau, da.delta_x + db.delta_x, 0.0, 0.0, 0.0
        )

    om1 = evaluate_omega(spec, sol, cert, d1)
    om_scaled = evaluate_omega(spec, sol, cert, scale(d1, 3.0))
    assert abs(om_scaled - 9.0 * om1) <= 1e-10
    # polarization: B(d1, d2) = (Omega(d1+d2) - Omega(d1) - Omega(d2)) / 2
    om2 = evaluate_omega(spec, sol, cert, d2)
    om12 = evaluate_omega(spec, sol, cert, add(d1, d2))
    om21 = evaluate_omega(spec, sol, cert, add(d2, d1))
    assert abs(om12 - om21) <= 1e-10  # symmetry of the bilinear form
    b = 0.5 * (om12 - om1 - om2)
    om_combo = evaluate_omega(spec, sol, cert, add(d1, scale(d2, 2.0)))
    assert om_combo == pytest.approx(om1 + 4 * om2 + 4 * b, abs=1e-9)


def test_omega_matches_merit_second_difference(quad_pack):
    spec, sol, cert = quad_pack
    dirs, _ = sample_critical(spec, sol, cert, count=10, seed=5)
    h = 1e-3
    for d in dirs:
        om = evaluate_omega(spec, sol, cert, d)
        L0 = lagrangian_merit(spec, sol, cert, d.delta_u, d.delta_tau, 0.0)
        Lp = lagrangian_merit(spec, sol, cert, d.delta_u, d.delta_tau, +h)
        Lm = lagrangian_merit(spec, sol, cert, d.delta_u, d.delta_tau, -h)
        fd = (Lp - 2 * L0 + Lm) / h**2
        assert abs(om - fd) <= 0.05 * max(abs(fd), 1e-8)


def test_second_order_check_on_quad(quad_pack):
    spec, sol, cert = quad_pack
    status, omega_min, accepted, _ = second_order_check(spec, sol, cert, count=200, seed=0)
    assert status == "pass"
    assert accepted >= 200 / 10
    assert omega_min >= -1e-4


def test_second_order_gated_on_first_order(quad_pack):
    spec, sol, cert = quad_pack
    bad = build_certificate(spec, sol, gamma_override=-cert.gamma)
    report = verify_solution(spec, sol, bad, omega_count=10)
    assert not report.passed
    assert report.omega_status == "skipped (first-order failed)"


def test_fault_gamma_flip(linear_pack):
    spec, sol, cert = linear_pack
    bad = build_certificate(spec, sol, gamma_override=-cert.gamma)
    report = check_first_order(spec, sol, bad)
    tols = FirstOrderTols()
    assert report.entry("hamiltonian_jump").value >= 10 * tols.hamiltonian_jump
    assert report.entry("hamiltonian_jump").value == pytest.approx(2.0, abs=1e-6)
    assert report.entry("integral_relation_max").value >= 10 * tols.integral_relation
    assert report.entry("integral_relation_max").value == pytest.approx(2.0, abs=1e-6)


def test_fault_nu_negation(linear_pack):
    spec, sol, cert = linear_pack
    nu_bad = cert.nu.copy()
    nu_bad[10, 0] = -nu_bad[10, 0]
    bad = replace(cert, nu=nu_bad)
    report = check_first_order(spec, sol, bad)
    tols = FirstOrderTols()
    assert report.entry("nu_sign_min").value <= -10 * tols.nu_sign
    assert report.entry("stationarity_sup").value >= 10 * tols.stationarity


def test_fault_tau_shift(linear_pack):
    spec, sol, cert = linear_pack
    bad = replace(cert, tau=cert.tau + 0.2)
    report = check_first_order(spec, sol, bad)
    tols = FirstOrderTols()
    assert report.entry("crossing_consistency").value >= 10 * tols.crossing
    assert report.entry("crossing_consistency").value == pytest.approx(0.2, abs=1e-6)


def test_dip_verification_end_to_end(dip_exact):
    # genuine two-crossing extremal: both jump signs, nonconstant costate
    spec, sol = dip_exact
    cert = build_certificate(spec, sol)
    report = check_first_order(spec, sol, cert, tols=FirstOrderTols(stationarity=1e-8))
    assert report.passed, report.table()
    status, omega_min, accepted, _ = second_order_check(spec, sol, cert, count=100, seed=4)
    assert accepted > 0
    assert status == "pass"
    assert omega_min >= -1e-6
