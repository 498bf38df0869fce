"""Fixed-step integration, event-accurate crossing detection and the
discontinuous time-crisis cost.

Controls are piecewise constant on a uniform cell grid.  Integration is
classical RK4 with the control held constant within each cell; crossings of
the crisis-set boundary {g = 0} are refined by bisection on the cubic
Hermite interpolant of the integrator step that brackets them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _backend
from .errors import BlowupError, NonTransverseError, StructureError
from .fileio import write_csv, write_json
from .problem import ProblemSpec

__all__ = [
    "ControlSignal",
    "Trajectory",
    "CrossingStructure",
    "integrate",
    "detect_crossings",
    "crisis_cost",
    "trajectory_to_csv",
    "crossings_to_json",
]

CROSSING_TOL = 1e-10
MAX_BISECTIONS = 80

PHYSICAL = "physical"
NORMALIZED = "normalized"


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on a uniform grid of cells over [t0, t1].

    ``values`` has shape (num_cells, m).  ``interval`` tags whether the grid
    lives in physical time [0, T] or normalized time [0, r+1].
    """

    values: np.ndarray
    t0: float
    t1: float
    interval: str = PHYSICAL

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[0] < 1:
            raise ValueError("control needs at least one cell")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        if not self.t1 > self.t0:
            raise ValueError("control interval must have positive length")
        if self.interval not in (PHYSICAL, NORMALIZED):
            raise ValueError(f"unknown interval tag {self.interval!r}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def num_cells(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def cell_width(self) -> float:
        return (self.t1 - self.t0) / self.num_cells

    def cell_of(self, t: float) -> int:
        k = int(np.floor((t - self.t0) / self.cell_width))
        return min(max(k, 0), self.num_cells - 1)

    def value_at(self, t: float) -> np.ndarray:
        return self.values[self.cell_of(t)]

    def integral(self, a: float, b: float) -> np.ndarray:
        """Exact integral of the signal over [a, b] (within [t0, t1])."""
        if b < a:
            raise ValueError("integration bounds reversed")
        h = self.cell_width
        total = np.zeros(self.m)
        k0 = self.cell_of(a)
        k1 = self.cell_of(b)
        for k in range(k0, k1 + 1):
            lo = max(a, self.t0 + k * h)
            hi = min(b, self.t0 + (k + 1) * h)
            if hi > lo:
                total += (hi - lo) * self.values[k]
        return total

    @staticmethod
    def constant(u, num_cells: int, t0: float, t1: float, interval: str = PHYSICAL) -> "ControlSignal":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return ControlSignal(np.tile(u, (num_cells, 1)), t0, t1, interval)

    @staticmethod
    def from_pieces(
        pieces: Sequence[tuple[float, float, float]],
        num_cells: int,
        t0: float,
        t1: float,
        interval: str = PHYSICAL,
    ) -> "ControlSignal":
        """Sample piecewise-constant pieces ((lo, hi, value), ...) onto the
        uniform grid; each cell takes the piece covering its midpoint."""
        h = (t1 - t0) / num_cells
        vals = np.zeros((num_cells, 1))
        for k in range(num_cells):
            mid = t0 + (k + 0.5) * h
            for lo, hi, v in pieces:
                if lo <= mid < hi or (mid == hi == t1):
                    vals[k, 0] = v
                    break
            else:
                raise ValueError(f"pieces do not cover cell midpoint {mid}")
        return ControlSignal(vals, t0, t1, interval)


@dataclass(frozen=True)
class Trajectory:
    """Integrator output: node times, node states and the generating control."""

    times: np.ndarray  # (K+1,)
    states: np.ndarray  # (K+1, n)
    control: ControlSignal
    substeps: int

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=float)
        t.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]

    def node_control(self, k: int) -> np.ndarray:
        """Control value of the cell owning node k (left-cell at boundaries)."""
        cell = min(k // self.substeps, self.control.num_cells - 1)
        return self.control.values[cell]


@dataclass(frozen=True)
class CrossingStructure:
    """Refined boundary-crossing times with directions and transversality.

    ``directions[j]`` is +1 for a crossing out of K (g: - to +) and -1 for a
    crossing back into K.  ``margins[j]`` holds |grad g . f| one-sided values
    (before, after).  Directions alternate starting with +1.
    """

    r: int
    times: tuple[float, ...]
    directions: tuple[int, ...]
    margins: tuple[tuple[float, float], ...]
    g_residuals: tuple[float, ...]
    transverse: bool

    @property
    def empty(self) -> bool:
        return self.r == 0

    def boundaries(self, T: float) -> np.ndarray:
        """Arc boundaries [0, tau_1, ..., tau_r, T]."""
        return np.concatenate([[0.0], self.times, [T]])


def integrate(spec: ProblemSpec, control: ControlSignal, substeps: int = 1) -> Trajectory:
    """RK4 trajectory of xdot = f(x, u(t)) on [0, T], one step per control
    cell times ``substeps``."""
    if control.interval != PHYSICAL:
        raise ValueError("integrate expects a physical-time control on [0, T]")
    if abs(control.t0) > 0 or abs(control.t1 - spec.T) > 1e-12 * max(1.0, spec.T):
        raise ValueError("control interval must be [0, T]")
    C = control.num_cells
    hs = np.full(C, control.cell_width)
    slopes = np.ones(C)
    states = _backend.forward_sweep(spec.f, spec.x0, control.values, slopes, hs, substeps)
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.isfinite(states).all(axis=1)))
        raise BlowupError(control.t0 + bad * control.cell_width / substeps)
    times = control.t0 + np.arange(C * substeps + 1) * (control.cell_width / substeps)
    return Trajectory(times=times, states=states, control=control, substeps=substeps)


def _hermite_state(x0, x1, d0, d1, h, theta):
    """Cubic Hermite interpolant on one integrator step, theta in [0, 1]."""
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + theta
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * x0 + (h10 * h) * d0 + h01 * x1 + (h11 * h) * d1


def _refine_crossing(spec, traj, k, crossing_tol, max_bisect):
    """Bisect g along the Hermite interpolant of step [t_k, t_{k+1}]."""
    t0, t1 = traj.times[k], traj.times[k + 1]
    x0, x1 = traj.states[k], traj.states[k + 1]
    u = traj.node_control(k)
    d0 = spec.f_value(x0, u)
    d1 = spec.f_value(x1, u)
    h = t1 - t0
    a, b = 0.0, 1.0
    ga = spec.g_value(x0)
    gb = spec.g_value(x1)
    mid, gm, xm = 0.5, ga, x0
    for _ in range(max_bisect):
        mid = 0.5 * (a + b)
        xm = _hermite_state(x0, x1, d0, d1, h, mid)
        gm = spec.g_value(xm)
        if abs(gm) <= crossing_tol:
            break
        if (gm > 0) == (gb > 0):
            b, gb = mid, gm
        else:
            a, ga = mid, gm
    return t0 + mid * h, xm, gm


def detect_crossings(
    spec: ProblemSpec,
    traj: Trajectory,
    crossing_tol: float = CROSSING_TOL,
    max_bisect: int = MAX_BISECTIONS,
) -> CrossingStructure:
    """Locate all transverse crossings of {g = 0} along a trajectory.

    Scans node values of g for sign changes and refines each bracketing step
    by bisection on the RK4 Hermite interpolant.  A node on the boundary
    without a sign change across its neighbors is a tangential contact and a
    hard error (it voids every downstream certificate formula); directions
    must alternate starting from inside K.
    """
    if not np.all(np.isfinite(traj.states)):
        raise BlowupError(float(traj.times[0]))
    g = np.array([spec.g_value(x) for x in traj.states])
    K = len(g) - 1
    near = np.abs(g) <= crossing_tol
    events: list[tuple[float, np.ndarray, float, int, int]] = []  # (time, state, gres, sign_after, node)

    k = 0
    while k <= K:
        if near[k]:
            left = g[k - 1] if k > 0 else None
            right = g[k + 1] if k < K else None
            if k > 0 and k < K and near[k + 1]:
                raise NonTransverseError(
                    f"trajectory rides the boundary g = 0 near t = {traj.times[k]:.6g}"
                )
            if left is None or right is None or (left > 0) == (right > 0):
                raise NonTransverseError(
                    f"nontransverse contact with g = 0 at t = {traj.times[k]:.6g}"
                )
            # crossing exactly at the node (tie broken toward the node)
            events.append((float(traj.times[k]), traj.states[k], float(g[k]), 1 if right > 0 else -1, k))
            k += 1
            continue
        if k < K and not near[k + 1] and (g[k] > 0) != (g[k + 1] > 0):
            t_c, x_c, g_res = _refine_crossing(spec, traj, k, crossing_tol, max_bisect)
            events.append((t_c, x_c, float(g_res), 1 if g[k + 1] > 0 else -1, k))
        k += 1

    times, directions, margins, residuals = [], [], [], []
    expected = 1
    for t_c, x_c, g_res, sign_after, node in events:
        if sign_after != expected:
            raise StructureError(
                f"crossing directions do not alternate (crossing at t = {t_c:.6g})"
            )
        expected = -expected
        grad = spec.g_gradient(x_c)
        u_before = traj.control.values[_cell_before(traj.control, t_c)]
        u_after = traj.control.values[_cell_after(traj.control, t_c)]
        m_before = abs(float(grad @ spec.f_value(x_c, u_before)))
        m_after = abs(float(grad @ spec.f_value(x_c, u_after)))
        times.append(t_c)
        directions.append(sign_after)
        margins.append((m_before, m_after))
        residuals.append(abs(g_res))
    transverse = all(mb > 0 and ma > 0 for mb, ma in margins)
    return CrossingStructure(
        r=len(times),
        times=tuple(times),
        directions=tuple(directions),
        margins=tuple(margins),
        g_residuals=tuple(residuals),
        transverse=transverse,
    )


def _cell_before(control: ControlSignal, t: float) -> int:
    """Cell supplying the one-sided control value just before time t."""
    h = control.cell_width
    k = (t - control.t0) / h
    kf = int(np.floor(k))
    if abs(k - round(k)) < 1e-12 * max(1.0, abs(k)):  # t is (numerically) a cell boundary
        kf = int(round(k)) - 1
    return min(max(kf, 0), control.num_cells - 1)


def _cell_after(control: ControlSignal, t: float) -> int:
    h = control.cell_width
    k = (t - control.t0) / h
    kf = int(np.floor(k))
    if abs(k - round(k)) < 1e-12 * max(1.0, abs(k)):
        kf = int(round(k))
    return min(max(kf, 0), control.num_cells - 1)


def crisis_cost(spec: ProblemSpec, traj: Trajectory, crossings: CrossingStructure) -> float:
    """phi(x(T)) plus the exact total time spent outside K, from refined
    crossing times (never counted by grid nodes)."""
    bounds = crossings.boundaries(spec.T)
    outside = sum(bounds[a + 1] - bounds[a] for a in range(1, len(bounds) - 1, 2))
    return spec.phi_value(traj.terminal_state) + float(outside)


def trajectory_to_csv(spec: ProblemSpec, traj: Trajectory, path, timestamp: bool = True) -> None:
    header = (
        ["t"]
        + [f"x_{i + 1}" for i in range(spec.n)]
        + [f"u_{i + 1}" for i in range(spec.m)]
        + ["g"]
    )
    rows = []
    for k, t in enumerate(traj.times):
        u = traj.node_control(k)
        rows.append(
            [float(t)]
            + [float(v) for v in traj.states[k]]
            + [float(v) for v in u]
            + [spec.g_value(traj.states[k])]
        )
    write_csv(path, header, rows, timestamp=timestamp)


def crossings_to_json(crossings: CrossingStructure, path, timestamp: bool = True, cost: Optional[float] = None) -> None:
    obj = {
        "r": crossings.r,
        "times": list(crossings.times),
        "directions": ["out" if d > 0 else "in" for d in crossings.directions],
        "margins_before": [m[0] for m in crossings.margins],
        "margins_after": [m[1] for m in crossings.margins],
        "g_residuals": list(crossings.g_residuals),
        "transverse": crossings.transverse,
    }
    if cost is not None:
        obj["crisis_cost"] = float(cost)
    write_json(path, obj, timestamp=timestamp)
