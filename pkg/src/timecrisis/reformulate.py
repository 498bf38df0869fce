"""Change of time between physical [0, T] and normalized [0, r+1] clocks.

The crossing vector tau = (tau_1 < ... < tau_r) induces the piecewise-affine
bijection pi_tau mapping normalized time s in [j, j+1] onto the j-th arc
[tau_j, tau_{j+1}] (conventions tau_0 = 0, tau_{r+1} = T).  Controls are
transported by exact cellwise averaging through pi_tau, which preserves arc
integrals and hence reproduces arc-boundary states of the physical flow
exactly for integrator-exact dynamics; states then obey
dx/ds = (dpi/ds) f(x, u).

For the single-crossing case the module also evaluates the augmented Mayer
data (F, G, psi, C) on the doubled state used to cross-check multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import BlowupError, StructureError
from .problem import ProblemSpec
from .simulate import NORMALIZED, PHYSICAL, ControlSignal

__all__ = [
    "CrossingVector",
    "pi_tau",
    "pi_tau_inv",
    "to_normalized",
    "from_normalized",
    "NormalizedTrajectory",
    "integrate_normalized",
    "normalized_trajectory_to_csv",
    "alternating_tau_sum",
    "objective_offset",
    "reformulated_objective",
    "eval_F",
    "eval_G",
    "eval_psi",
    "in_C",
]


@dataclass(frozen=True)
class CrossingVector:
    """Strictly increasing interior crossing times with their horizon."""

    tau: tuple[float, ...]
    T: float

    def __post_init__(self):
        tau = tuple(float(t) for t in self.tau)
        object.__setattr__(self, "tau", tau)
        b = self.boundaries()
        if not np.all(np.diff(b) > 0):
            raise StructureError(f"crossing vector must satisfy 0 < tau_1 < ... < tau_r < T, got {tau}")

    @property
    def r(self) -> int:
        return len(self.tau)

    def boundaries(self) -> np.ndarray:
        """[tau_0 = 0, tau_1, ..., tau_r, tau_{r+1} = T]"""
        return np.concatenate([[0.0], self.tau, [self.T]])

    def slopes(self) -> np.ndarray:
        """Arc widths w_j = tau_{j+1} - tau_j = dpi/ds on arc j."""
        return np.diff(self.boundaries())


def pi_tau(s: float, cv: CrossingVector) -> float:
    """Piecewise-affine time change: pi(j) = tau_j, affine in between."""
    r = cv.r
    if s < 0 or s > r + 1:
        raise ValueError(f"normalized time {s} outside [0, {r + 1}]")
    j = min(int(np.floor(s)), r)
    b = cv.boundaries()
    return float(b[j] + (s - j) * (b[j + 1] - b[j]))


def pi_tau_inv(t: float, cv: CrossingVector) -> float:
    """Inverse time change; exact up to roundoff (pi is strictly increasing)."""
    if t < 0 or t > cv.T:
        raise ValueError(f"physical time {t} outside [0, {cv.T}]")
    b = cv.boundaries()
    j = int(np.searchsorted(b, t, side="right")) - 1
    j = min(max(j, 0), cv.r)
    return float(j + (t - b[j]) / (b[j + 1] - b[j]))


def _resample_average(source: ControlSignal, edges_src: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Average ``source`` over consecutive intervals [edges[k], edges[k+1]],
    each weighted integral divided by the given interval measure."""
    C = len(edges_src) - 1
    vals = np.empty((C, source.m))
    for k in range(C):
        vals[k] = source.integral(edges_src[k], edges_src[k + 1]) / weights[k]
    return vals


def to_normalized(control: ControlSignal, cv: CrossingVector, n_arc: int) -> ControlSignal:
    """Transport a physical control to the normalized clock.

    Each normalized cell takes the exact average of the source signal over
    the cell's physical preimage, so per-arc integrals are preserved to
    roundoff (cell-aligned signals transport identically).
    """
    if control.interval != PHYSICAL:
        raise ValueError("to_normalized expects a physical-time control")
    r = cv.r
    C = (r + 1) * n_arc
    s_edges = np.linspace(0.0, r + 1, C + 1)
    t_edges = np.array([pi_tau(s, cv) for s in s_edges])
    widths = np.diff(t_edges)
    vals = _resample_average(control, t_edges, widths)
    return ControlSignal(vals, 0.0, float(r + 1), NORMALIZED)


def from_normalized(control: ControlSignal, cv: CrossingVector, n_phys: int) -> ControlSignal:
    """Transport a normalized control back to physical time on a uniform grid
    of ``n_phys`` cells, averaging with the physical measure dt = (dpi/ds) ds."""
    if control.interval != NORMALIZED:
        raise ValueError("from_normalized expects a normalized-time control")
    t_edges = np.linspace(0.0, cv.T, n_phys + 1)
    s_edges = np.array([pi_tau_inv(t, cv) for t in t_edges])
    b = cv.boundaries()
    w = cv.slopes()
    vals = np.empty((n_phys, control.m))
    for k in range(n_phys):
        s_lo, s_hi = s_edges[k], s_edges[k + 1]
        acc = np.zeros(control.m)
        for j in range(cv.r + 1):
            lo = max(s_lo, float(j))
            hi = min(s_hi, float(j + 1))
            if hi > lo:
                acc += w[j] * control.integral(lo, hi)
        vals[k] = acc / (t_edges[k + 1] - t_edges[k])
    return ControlSignal(vals, 0.0, cv.T, PHYSICAL)


@dataclass(frozen=True)
class NormalizedTrajectory:
    """State path of the time-changed flow on the normalized clock."""

    s_nodes: np.ndarray  # ((r+1)*N*substeps + 1,)
    states: np.ndarray
    control: ControlSignal
    cv: CrossingVector
    substeps: int

    def __post_init__(self):
        s = np.asarray(self.s_nodes, dtype=float)
        x = np.asarray(self.states, dtype=float)
        s.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "s_nodes", s)
        object.__setattr__(self, "states", x)

    @property
    def n_arc(self) -> int:
        return self.control.num_cells // (self.cv.r + 1)

    @property
    def nodes_per_arc(self) -> int:
        return self.n_arc * self.substeps

    def arc_node(self, j: int) -> int:
        """Node index of normalized time s = j (arc boundary)."""
        return j * self.nodes_per_arc

    def state_at_arc(self, j: int) -> np.ndarray:
        return self.states[self.arc_node(j)]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]

    def physical_times(self) -> np.ndarray:
        """Images pi(s_k): the arc-aligned physical grid of this trajectory."""
        return np.array([pi_tau(s, self.cv) for s in self.s_nodes])


def integrate_normalized(
    spec: ProblemSpec, control: ControlSignal, cv: CrossingVector, substeps: int = 1
) -> NormalizedTrajectory:
    """RK4 on dx/ds = (dpi/ds) f(x, u(s)), slope constant per unit arc."""
    if control.interval != NORMALIZED:
        raise ValueError("integrate_normalized expects a normalized-time control")
    r = cv.r
    C = control.num_cells
    if C % (r + 1) != 0:
        raise ValueError(f"cell count {C} not divisible into {r + 1} arcs")
    if abs(control.t1 - (r + 1)) > 1e-12:
        raise ValueError("normalized control must live on [0, r+1]")
    n_arc = C // (r + 1)
    w = cv.slopes()
    slopes = np.repeat(w, n_arc)
    hs = np.full(C, 1.0 / n_arc)
    states = _backend.forward_sweep(spec.f, spec.x0, control.values, slopes, hs, substeps)
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.isfinite(states).all(axis=1)))
        raise BlowupError(bad / (n_arc * substeps))
    s_nodes = np.arange(C * substeps + 1) / (n_arc * substeps)
    return NormalizedTrajectory(s_nodes=s_nodes, states=states, control=control, cv=cv, substeps=substeps)


def normalized_trajectory_to_csv(spec: ProblemSpec, traj: NormalizedTrajectory, path, timestamp: bool = True) -> None:
    """CSV of a normalized trajectory: both clocks (s and t = pi(s)) plus
    state, control and g; tagged with the interval."""
    from .fileio import write_csv

    header = (
        ["interval", "s", "t"]
        + [f"x_{i + 1}" for i in range(spec.n)]
        + [f"u_{i + 1}" for i in range(spec.m)]
        + ["g"]
    )
    nps = traj.nodes_per_arc
    rows = []
    for k, s in enumerate(traj.s_nodes):
        cell = min(int(k // traj.substeps), traj.control.num_cells - 1)
        u = traj.control.values[cell]
        rows.append(
            [NORMALIZED, float(s), pi_tau(float(s), traj.cv)]
            + [float(v) for v in traj.states[k]]
            + [float(v) for v in u]
            + [spec.g_value(traj.states[k])]
        )
    write_csv(path, header, rows, timestamp=timestamp)


def alternating_tau_sum(cv: CrossingVector) -> float:
    """sum_j (-1)^j tau_j, the crossing-time part of the reformulated cost."""
    return float(sum((-1) ** j * t for j, t in enumerate(cv.tau, start=1)))


def objective_offset(r: int, T: float) -> float:
    """Constant relating the reformulated objective to the crisis cost:
    outside time = sum_j (-1)^j tau_j + (T if r is odd else 0)."""
    return T if r % 2 == 1 else 0.0


def reformulated_objective(spec: ProblemSpec, traj: NormalizedTrajectory) -> float:
    """phi(x(r+1)) + sum_j (-1)^j tau_j (no crisis-cost offset)."""
    return spec.phi_value(traj.terminal_state) + alternating_tau_sum(traj.cv)


# -- augmented Mayer data for the single-crossing cross-check ---------------


def _split_y(spec: ProblemSpec, y: np.ndarray):
    n = spec.n
    y = np.asarray(y, dtype=float).reshape(2 * n + 1)
    return y[:n], y[n : 2 * n], float(y[2 * n])


def eval_F(spec: ProblemSpec, y: np.ndarray, v: np.ndarray, T: float | None = None) -> np.ndarray:
    """Doubled-flow dynamics (xi f(y1, v1), (T - xi) f(y2, v2), 0)."""
    T = spec.T if T is None else T
    y1, y2, xi = _split_y(spec, y)
    v = np.asarray(v, dtype=float).reshape(2 * spec.m)
    v1, v2 = v[: spec.m], v[spec.m :]
    return np.concatenate([xi * spec.f_value(y1, v1), (T - xi) * spec.f_value(y2, v2), [0.0]])


def eval_G(spec: ProblemSpec, y0: np.ndarray, y1: np.ndarray) -> np.ndarray:
    """Mixed endpoint map (y0_first, xi0, y0_second - y1_first, g(y1_first))."""
    a1, a2, xi0 = _split_y(spec, y0)
    b1, _, _ = _split_y(spec, y1)
    return np.concatenate([a1, [xi0], a2 - b1, [spec.g_value(b1)]])


def eval_psi(spec: ProblemSpec, y: np.ndarray, T: float | None = None) -> float:
    """Terminal payoff phi(y2) + T - xi of the doubled problem."""
    T = spec.T if T is None else T
    _, y2, xi = _split_y(spec, y)
    return spec.phi_value(y2) + T - xi


def in_C(spec: ProblemSpec, Gval: np.ndarray, T: float | None = None, tol: float = 1e-8) -> bool:
    """Membership of a G-value in {x0} x (0, T) x {0} x {0} within tol."""
    T = spec.T if T is None else T
    n = spec.n
    Gval = np.asarray(Gval, dtype=float).reshape(2 * n + 2)
    if np.max(np.abs(Gval[:n] - spec.x0)) > tol:
        return False
    xi0 = Gval[n]
    if not (tol < xi0 < T - tol):
        return False
    if np.max(np.abs(Gval[n + 1 : 2 * n + 1])) > tol:
        return False
    return abs(Gval[2 * n + 1]) <= tol
