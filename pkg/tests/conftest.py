import numpy as np
import pytest

from timecrisis.maps import PolynomialMap
from timecrisis.problem import ProblemSpec
from timecrisis.simulate import NORMALIZED, ControlSignal


def random_segment_control(rng, spec, n_cells=400, max_segments=6):
    """Piecewise-constant control with a few strong segments.  The first
    segment pushes hard toward the crisis boundary long enough to cross it
    (catalog geometry: unit distance, unit top speed), later segments are
    random, so sampled trajectories carry varied crossing structures."""
    k = int(rng.integers(2, max_segments + 1))
    lo = spec.box[:, 0] if spec.box is not None else -np.ones(spec.m)
    hi = spec.box[:, 1] if spec.box is not None else np.ones(spec.m)
    seg_vals = rng.uniform(lo, hi, size=(k, spec.m))
    seg_vals[0] = hi * rng.uniform(0.85, 1.0, size=spec.m)
    first_edge = min(float(rng.uniform(1.05, 1.6) / seg_vals[0].max()), 0.9 * spec.T)
    edges = np.sort(rng.uniform(first_edge, spec.T, size=k - 2)) if k > 2 else np.empty(0)
    edges = np.concatenate([[0.0, first_edge], edges, [spec.T]])
    vals = np.empty((n_cells, spec.m))
    h = spec.T / n_cells
    for c in range(n_cells):
        mid = (c + 0.5) * h
        seg = int(np.searchsorted(edges, mid) - 1)
        vals[c] = seg_vals[min(seg, k - 1)]
    return ControlSignal(vals, 0.0, spec.T)


@pytest.fixture
def segment_control_factory():
    return random_segment_control


def dip_spec() -> ProblemSpec:
    """Double integrator x1' = x2, x2' = u with K = {x1 <= 0}, x0 = (-0.4, 1),
    T = 3, phi = (x2 + 1/4)^2.  The initial momentum forces one excursion out
    of K; full braking minimizes its length.  Closed-form two-crossing
    extremal (s := sqrt(0.2)):

        tau = (1 - s, 1 + s), u = -1 on [0, tau_2], then the constant that
        steers x2 to -1/4; p = (p1, p2) with p1 piecewise constant
        (2/s after tau_1... before tau_2) and p2 piecewise linear;
        gamma = (-1/s, -1/s); H per arc (0, -1, 0).
    """
    f = PolynomialMap(3, 2, [[(1.0, (0, 1, 0))], [(1.0, (0, 0, 1))]], name="f")
    g = PolynomialMap(2, 1, [[(1.0, (1, 0))]], name="g")
    c = PolynomialMap(1, 2, [[(1.0, (1,)), (-1.0, (0,))], [(-1.0, (1,)), (-1.0, (0,))]], name="c")
    phi = PolynomialMap(2, 1, [[(1.0, (0, 2)), (0.5, (0, 1)), (0.0625, (0, 0))]], name="phi")
    return ProblemSpec(
        n=2, m=1, l=2, f=f, g=g, c=c, phi=phi,
        x0=np.array([-0.4, 1.0]), T=3.0, box=np.array([[-1.0, 1.0]]), name="dip_2d",
    )


def dip_exact_solution(n_arc=250):
    """Exact two-crossing extremal of the dip problem as a Solution object
    (built directly, bypassing the solver)."""
    from timecrisis.solve import SolverOptions, _assemble_solution

    spec = dip_spec()
    s = np.sqrt(0.2)
    tau = (1.0 - s, 1.0 + s)
    w2 = spec.T - tau[1]
    u3 = (s - 0.25) / w2  # steers x2 from -s to -1/4 across the last arc
    vals = np.concatenate([
        np.full(2 * n_arc, -1.0),
        np.full(n_arc, u3),
    ]).reshape(-1, 1)
    control = ControlSignal(vals, 0.0, 3.0, NORMALIZED)
    from timecrisis.reformulate import CrossingVector

    cv = CrossingVector(tau, spec.T)
    lam = np.array([1.0 / s, 1.0 / s])  # equals -gamma
    return spec, _assemble_solution(
        spec, control, cv, SolverOptions(n_arc=n_arc),
        multipliers=lam, converged=True, pg_norm=0.0, iterations=(), note="analytic",
    )


@pytest.fixture
def dip_exact():
    return dip_exact_solution()
