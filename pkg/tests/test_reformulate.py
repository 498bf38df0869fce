import numpy as np
import pytest

from timecrisis.catalog import catalog
from timecrisis.errors import StructureError
from timecrisis.reformulate import (
    CrossingVector,
    alternating_tau_sum,
    eval_F,
    eval_G,
    eval_psi,
    from_normalized,
    in_C,
    integrate_normalized,
    objective_offset,
    pi_tau,
    pi_tau_inv,
    reformulated_objective,
    to_normalized,
)
from timecrisis.simulate import ControlSignal, crisis_cost, detect_crossings, integrate


@pytest.fixture
def linear():
    return catalog("linear_payoff_1d")


def test_pi_tau_values():
    cv = CrossingVector((1.0,), 2.0)
    assert pi_tau(0.5, cv) == pytest.approx(0.5)
    assert pi_tau(1.5, cv) == pytest.approx(1.5)
    cv2 = CrossingVector((0.5,), 2.0)
    assert pi_tau(1.5, cv2) == pytest.approx(1.25)  # (T - tau) s + 2 tau - T
    cv3 = CrossingVector((1.0, 2.0), 4.0)
    assert pi_tau(2.5, cv3) == pytest.approx(3.0)
    for j, t in ((0, 0.0), (1, 1.0), (2, 2.0), (3, 4.0)):
        assert pi_tau(float(j), cv3) == pytest.approx(t)


def test_pi_tau_inverse_and_monotone():
    rng = np.random.default_rng(0)
    cv = CrossingVector((0.3, 1.1, 2.9), 3.5)
    ss = np.sort(rng.uniform(0, 4, size=50))
    ts = [pi_tau(s, cv) for s in ss]
    assert np.all(np.diff(ts) > 0)  # strict monotonicity
    for s, t in zip(ss, ts):
        assert abs(pi_tau_inv(t, cv) - s) <= 1e-14 * max(1.0, s)
    with pytest.raises(ValueError):
        pi_tau(4.5, cv)
    with pytest.raises(ValueError):
        pi_tau_inv(-0.1, cv)


def test_crossing_vector_validation():
    with pytest.raises(StructureError):
        CrossingVector((1.5, 1.0), 2.0)
    with pytest.raises(StructureError):
        CrossingVector((0.0,), 2.0)
    with pytest.raises(StructureError):
        CrossingVector((2.0,), 2.0)


def test_transport_constant_is_constant(linear):
    cv = CrossingVector((1.0,), 2.0)
    phys = ControlSignal.constant(1.0, 2000, 0.0, 2.0)
    norm = to_normalized(phys, cv, 500)
    assert norm.num_cells == 1000
    assert np.all(norm.values == 1.0)


def test_transport_piecewise_identity_when_aligned(linear):
    # tau = 1 makes pi the identity; cell-aligned switch at s = 1
    cv = CrossingVector((1.0,), 2.0)
    phys = ControlSignal.from_pieces([(0.0, 1.0, -1.0), (1.0, 2.0, 1.0)], 1000, 0.0, 2.0)
    norm = to_normalized(phys, cv, 500)
    assert np.all(norm.values[:500] == -1.0)
    assert np.all(norm.values[500:] == 1.0)


def test_transport_round_trip_exact(linear):
    rng = np.random.default_rng(42)
    cv = CrossingVector((0.5,), 2.0)
    norm = ControlSignal(rng.uniform(-1, 1, size=(1000, 1)), 0.0, 2.0, "normalized")
    phys = from_normalized(norm, cv, 800)
    back = to_normalized(phys, cv, 500)
    # integral preservation per arc (exact transport)
    for j, (slo, shi) in enumerate(((0.0, 1.0), (1.0, 2.0))):
        w = (0.5, 1.5)[j]
        assert w * back.integral(slo, shi)[0] == pytest.approx(w * norm.integral(slo, shi)[0], abs=1e-12)


def test_integrate_normalized_closed_forms(linear):
    cv = CrossingVector((1.0,), 2.0)
    u = ControlSignal.constant(1.0, 1000, 0.0, 2.0, "normalized")
    traj = integrate_normalized(linear, u, cv)
    assert traj.state_at_arc(1)[0] == pytest.approx(0.0, abs=1e-14)
    assert traj.terminal_state[0] == pytest.approx(1.0, abs=1e-14)

    cv2 = CrossingVector((0.5,), 2.0)
    traj2 = integrate_normalized(linear, u, cv2)
    assert traj2.state_at_arc(1)[0] == pytest.approx(-0.5, abs=1e-14)


def test_normalized_conjugacy_with_physical(linear, segment_control_factory):
    # x_tilde(s) = x(pi(s)) for the exact-transported control at grid nodes
    rng = np.random.default_rng(3)
    phys = segment_control_factory(rng, linear)
    traj = integrate(linear, phys)
    cs = detect_crossings(linear, traj)
    assert not cs.empty
    cv = CrossingVector(cs.times, 2.0)
    norm = to_normalized(phys, cv, 500)
    ntraj = integrate_normalized(linear, norm, cv)
    for j in range(cs.r + 2):
        t_j = pi_tau(float(j), cv)
        # compare against exact physical integral (dynamics xdot = u)
        x_exact = -1.0 + phys.integral(0.0, t_j)[0]
        assert ntraj.state_at_arc(j)[0] == pytest.approx(x_exact, abs=1e-10)


def test_cost_conjugacy_random_controls(segment_control_factory):
    for name in ("linear_payoff_1d", "quad_payoff_1d", "double_crossing_1d"):
        spec = catalog(name)
        rng = np.random.default_rng(11)
        found = 0
        for _ in range(30):
            phys = segment_control_factory(rng, spec)
            traj = integrate(spec, phys)
            try:
                cs = detect_crossings(spec, traj)
            except Exception:
                continue
            if cs.empty:
                continue
            found += 1
            cv = CrossingVector(cs.times, spec.T)
            norm = to_normalized(phys, cv, 500)
            ntraj = integrate_normalized(spec, norm, cv)
            lhs = crisis_cost(spec, traj, cs)
            rhs = reformulated_objective(spec, ntraj) + objective_offset(cs.r, spec.T)
            assert abs(lhs - rhs) <= 1e-8
        assert found >= 5


def test_eval_F_third_component_zero(linear):
    rng = np.random.default_rng(1)
    for _ in range(5):
        y = rng.uniform(-1, 1, size=3)
        v = rng.uniform(-1, 1, size=2)
        Fv = eval_F(linear, y, v)
        assert Fv[2] == 0.0


def test_eval_psi_value(linear):
    # psi((., y2 = 1, xi = 1), T = 2) = -2 + 2 - 1 = -1
    assert eval_psi(linear, np.array([0.0, 1.0, 1.0])) == pytest.approx(-1.0)


def test_in_C_on_mapped_solution(linear):
    # doubled representation of the closed-form optimum: y1 = xtilde(s),
    # y2 = xtilde(s+1), xi = tau; endpoints y(0), y(1)
    y0 = np.array([-1.0, 0.0, 1.0])
    y1 = np.array([0.0, 1.0, 1.0])
    Gv = eval_G(linear, y0, y1)
    assert in_C(linear, Gv, tol=1e-8)
    # xi = T lands on the boundary of (0, T): not in C
    y0_bad = np.array([-1.0, 0.0, 2.0])
    assert not in_C(linear, eval_G(linear, y0_bad, y1), tol=1e-8)


def test_alternating_sum_and_offset():
    cv = CrossingVector((1.0, 2.5), 4.0)
    assert alternating_tau_sum(cv) == pytest.approx(1.5)
    assert objective_offset(2, 4.0) == 0.0
    assert objective_offset(1, 2.0) == 2.0
