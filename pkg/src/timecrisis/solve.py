"""Direct solver for the crossing-structure-fixed problem.

Decision variables are the normalized control cells and the crossing vector
tau; the r boundary conditions g(x(j)) = 0 are handled by an augmented
Lagrangian whose subproblems are solved by projected gradient with Armijo
backtracking (controls projected onto the box hull of U, tau onto the
gap-separated simplex).  All gradients come from the exact discrete adjoint
of the RK4 recursion, so they match finite differences of the discretized
functions to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _backend
from .errors import StructureError
from .fileio import write_csv
from .problem import ProblemSpec
from .reformulate import (
    CrossingVector,
    NormalizedTrajectory,
    from_normalized,
    integrate_normalized,
    objective_offset,
    reformulated_objective,
    to_normalized,
)
from .simulate import NORMALIZED, ControlSignal, Trajectory, crisis_cost, detect_crossings, integrate

__all__ = [
    "SolverOptions",
    "ObjectiveData",
    "Solution",
    "objective_and_gradient",
    "solve_fixed_structure",
    "solve_time_crisis",
]


@dataclass(frozen=True)
class SolverOptions:
    n_arc: int = 500  # normalized cells per arc
    substeps: int = 1
    n_phys: int = 2000  # uniform physical cells for the exported image
    eq_tol: float = 1e-8
    kkt_tol: float = 1e-6
    tau_gap_frac: float = 1e-3  # tau separation as a fraction of T
    max_outer: int = 200
    max_inner: int = 2000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    constraint_shrink: float = 4.0  # required per-outer reduction of ||g||
    armijo_c: float = 1e-4
    max_backtracks: int = 60

    def tau_gap(self, T: float) -> float:
        return self.tau_gap_frac * T


@dataclass(frozen=True)
class ObjectiveData:
    """Value/constraints of the reformulated problem with exact gradients.

    ``value`` is phi(x(r+1)) + sum_j (-1)^j tau_j (no crisis offset);
    ``constraints[j]`` is g(x(j+1)).  Gradients are raw partials with respect
    to the normalized control cells and tau.
    """

    value: float
    grad_value_u: np.ndarray  # (C, m)
    grad_value_tau: np.ndarray  # (r,)
    constraints: np.ndarray  # (r,)
    grad_constraints_u: np.ndarray  # (r, C, m)
    grad_constraints_tau: np.ndarray  # (r, r)
    trajectory: NormalizedTrajectory


def _arc_sums(wbar: np.ndarray, r: int, n_arc: int) -> np.ndarray:
    return wbar.reshape(r + 1, n_arc).sum(axis=1)


def _tau_grad_from_slope_grads(W: np.ndarray) -> np.ndarray:
    """d/dtau_k of a functional whose per-arc slope gradients are W_0..W_r,
    using w_j = tau_{j+1} - tau_j with tau_0 = 0, tau_{r+1} = T fixed."""
    r = len(W) - 1
    return np.array([W[k - 1] - W[k] for k in range(1, r + 1)])


def objective_and_gradient(
    spec: ProblemSpec, control: ControlSignal, cv: CrossingVector, substeps: int = 1
) -> ObjectiveData:
    """Exact discrete-adjoint gradients of the reformulated objective and of
    each crossing constraint g(x(j)) with respect to (control cells, tau)."""
    traj = integrate_normalized(spec, control, cv, substeps)
    r = cv.r
    n_arc = traj.n_arc
    C = control.num_cells
    K = C * substeps
    value = reformulated_objective(spec, traj)
    alt = np.array([(-1.0) ** k for k in range(1, r + 1)])

    seeds = np.zeros((K + 1, spec.n))
    seeds[K] = spec.phi_gradient(traj.terminal_state)
    slopes = np.repeat(cv.slopes(), n_arc)
    hs = np.full(C, 1.0 / n_arc)
    _, ubar, wbar = _backend.adjoint_sweep(
        spec.f, traj.states, control.values, slopes, hs, substeps, seeds
    )
    grad_value_u = ubar
    grad_value_tau = _tau_grad_from_slope_grads(_arc_sums(wbar, r, n_arc)) + alt

    constraints = np.empty(r)
    grad_c_u = np.empty((r, C, spec.m))
    grad_c_tau = np.empty((r, r))
    for j in range(1, r + 1):
        node = traj.arc_node(j)
        xj = traj.states[node]
        constraints[j - 1] = spec.g_value(xj)
        seeds_j = np.zeros((K + 1, spec.n))
        seeds_j[node] = spec.g_gradient(xj)
        _, ubar_j, wbar_j = _backend.adjoint_sweep(
            spec.f, traj.states, control.values, slopes, hs, substeps, seeds_j
        )
        grad_c_u[j - 1] = ubar_j
        grad_c_tau[j - 1] = _tau_grad_from_slope_grads(_arc_sums(wbar_j, r, n_arc))
    return ObjectiveData(
        value=value,
        grad_value_u=grad_value_u,
        grad_value_tau=grad_value_tau,
        constraints=constraints,
        grad_constraints_u=grad_c_u,
        grad_constraints_tau=grad_c_tau,
        trajectory=traj,
    )


# -- projections -------------------------------------------------------------


def _project_box(u_flat: np.ndarray, box: Optional[np.ndarray], m: int) -> np.ndarray:
    if box is None:
        return u_flat
    u = u_flat.reshape(-1, m)
    return np.clip(u, box[:, 0], box[:, 1]).ravel()


def _isotonic(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto nondecreasing sequences."""
    vals = list(y)
    wts = [1.0] * len(vals)
    i = 0
    while i < len(vals) - 1:
        if vals[i] > vals[i + 1] + 0.0:
            merged = (vals[i] * wts[i] + vals[i + 1] * wts[i + 1]) / (wts[i] + wts[i + 1])
            vals[i : i + 2] = [merged]
            wts[i : i + 2] = [wts[i] + wts[i + 1]]
            while i > 0 and vals[i - 1] > vals[i]:
                merged = (vals[i - 1] * wts[i - 1] + vals[i] * wts[i]) / (wts[i - 1] + wts[i])
                vals[i - 1 : i + 1] = [merged]
                wts[i - 1 : i + 1] = [wts[i - 1] + wts[i]]
                i -= 1
        else:
            i += 1
    out = np.empty(len(y))
    k = 0
    for v, w in zip(vals, wts):
        out[k : k + int(w)] = v
        k += int(w)
    return out


def _project_tau(tau: np.ndarray, T: float, gap: float) -> np.ndarray:
    """Euclidean projection onto {gap <= tau_1, tau_j + gap <= tau_{j+1},
    tau_r <= T - gap} via shifted isotonic regression with box clipping."""
    r = len(tau)
    if r == 0:
        return tau
    shift = gap * np.arange(1, r + 1)
    sigma = _isotonic(tau - shift)
    sigma = np.clip(sigma, 0.0, T - (r + 1) * gap)
    return sigma + shift


# -- solution container -------------------------------------------------------


@dataclass(frozen=True)
class Solution:
    """Converged (or best-iterate) output of the fixed-structure solver."""

    spec: ProblemSpec
    cv: CrossingVector
    control_norm: ControlSignal
    traj_norm: NormalizedTrajectory
    control_phys: ControlSignal
    traj_phys: Trajectory
    objective: float  # crisis-cost convention: value + (T if r odd else 0)
    constraint_residuals: np.ndarray  # g(x(j)), j = 1..r
    multipliers: np.ndarray  # final equality-constraint multiplier estimates
    converged: bool
    structure_consistent: bool
    pg_norm: float
    iterations: tuple
    note: str = ""
    opts: SolverOptions = field(default_factory=SolverOptions)

    @property
    def r(self) -> int:
        return self.cv.r

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.cv.tau)

    def iteration_log_to_csv(self, path, timestamp: bool = True) -> None:
        header = ["outer", "inner", "merit", "pg_norm", "g_max", "penalty", "step"]
        write_csv(path, header, self.iterations, timestamp=timestamp)

    def to_dict(self) -> dict:
        return {
            "problem": self.spec.name,
            "r": self.r,
            "tau": [float(t) for t in self.cv.tau],
            "objective": float(self.objective),
            "constraint_residuals": [float(v) for v in self.constraint_residuals],
            "multipliers": [float(v) for v in self.multipliers],
            "converged": self.converged,
            "structure_consistent": self.structure_consistent,
            "pg_norm": float(self.pg_norm),
            "note": self.note,
            "n_arc": self.opts.n_arc,
            "substeps": self.opts.substeps,
            "n_phys": self.opts.n_phys,
            "control_norm": [[float(v) for v in row] for row in self.control_norm.values],
        }

    @staticmethod
    def from_dict(spec: ProblemSpec, d: dict, opts: Optional[SolverOptions] = None) -> "Solution":
        opts = opts or SolverOptions(
            n_arc=int(d["n_arc"]), substeps=int(d["substeps"]), n_phys=int(d["n_phys"])
        )
        cv = CrossingVector(tuple(d["tau"]), spec.T)
        control = ControlSignal(np.asarray(d["control_norm"]), 0.0, float(cv.r + 1), NORMALIZED)
        return _assemble_solution(
            spec,
            control,
            cv,
            opts,
            multipliers=np.asarray(d.get("multipliers", np.zeros(cv.r))),
            converged=bool(d["converged"]),
            pg_norm=float(d["pg_norm"]),
            iterations=(),
            note=str(d.get("note", "")),
        )


def _assemble_solution(
    spec, control, cv, opts, multipliers, converged, pg_norm, iterations, note=""
) -> Solution:
    traj_norm = integrate_normalized(spec, control, cv, opts.substeps)
    control_phys = from_normalized(control, cv, opts.n_phys)
    traj_phys = integrate(spec, control_phys, 1)
    residuals = np.array([spec.g_value(traj_norm.state_at_arc(j)) for j in range(1, cv.r + 1)])
    objective = reformulated_objective(spec, traj_norm) + objective_offset(cv.r, spec.T)
    structure_ok = True
    try:
        detected = detect_crossings(spec, traj_phys)
        if detected.r != cv.r:
            structure_ok = False
        else:
            tol = 10.0 * opts.eq_tol + 1e-12
            structure_ok = all(
                abs(td - ts) <= tol for td, ts in zip(detected.times, cv.tau)
            )
    except Exception:
        structure_ok = False
    return Solution(
        spec=spec,
        cv=cv,
        control_norm=control,
        traj_norm=traj_norm,
        control_phys=control_phys,
        traj_phys=traj_phys,
        objective=objective,
        constraint_residuals=residuals,
        multipliers=np.asarray(multipliers, dtype=float),
        converged=converged,
        structure_consistent=structure_ok,
        pg_norm=pg_norm,
        iterations=tuple(iterations),
        note=note,
        opts=opts,
    )


# -- augmented-Lagrangian solver ----------------------------------------------


class _Merit:
    """Augmented-Lagrangian merit and its exact gradient for fixed (lam, rho)."""

    def __init__(self, spec: ProblemSpec, r: int, n_arc: int, substeps: int, T: float):
        self.spec = spec
        self.r = r
        self.n_arc = n_arc
        self.substeps = substeps
        self.T = T
        self.C = (r + 1) * n_arc
        self.hs = np.full(self.C, 1.0 / n_arc)
        self.alt = np.array([(-1.0) ** k for k in range(1, r + 1)])

    def _forward(self, u_cells, tau):
        cv = CrossingVector(tuple(tau), self.T)
        slopes = np.repeat(cv.slopes(), self.n_arc)
        states = _backend.forward_sweep(
            self.spec.f, self.spec.x0, u_cells, slopes, self.hs, self.substeps
        )
        return states, slopes

    def constraints(self, states):
        nodes = [(j + 1) * self.n_arc * self.substeps for j in range(self.r)]
        return np.array([self.spec.g_value(states[k]) for k in nodes]), nodes

    def value(self, u_cells, tau, lam, rho):
        states, _ = self._forward(u_cells, tau)
        G, _ = self.constraints(states)
        V = self.spec.phi_value(states[-1]) + float(self.alt @ tau)
        return V + float(lam @ G) + 0.5 * rho * float(G @ G), G

    def value_and_grad(self, u_cells, tau, lam, rho):
        states, slopes = self._forward(u_cells, tau)
        G, nodes = self.constraints(states)
        V = self.spec.phi_value(states[-1]) + float(self.alt @ tau)
        merit = V + float(lam @ G) + 0.5 * rho * float(G @ G)
        K = self.C * self.substeps
        seeds = np.zeros((K + 1, self.spec.n))
        seeds[K] = self.spec.phi_gradient(states[-1])
        for j, node in enumerate(nodes):
            seeds[node] += (lam[j] + rho * G[j]) * self.spec.g_gradient(states[node])
        _, ubar, wbar = _backend.adjoint_sweep(
            self.spec.f, states, u_cells, slopes, self.hs, self.substeps, seeds
        )
        W = _arc_sums(wbar, self.r, self.n_arc)
        grad_tau = _tau_grad_from_slope_grads(W) + self.alt
        return merit, G, ubar, grad_tau


def solve_fixed_structure(
    spec: ProblemSpec,
    r: int,
    control_init: ControlSignal,
    tau_init,
    opts: SolverOptions = SolverOptions(),
) -> Solution:
    """Augmented-Lagrangian outer loop on the r crossing constraints with a
    projected-gradient/Armijo inner loop (Barzilai-Borwein step seeding).

    Returns the best iterate flagged accordingly on non-convergence; the
    accepted merit sequence is nonincreasing within each inner loop and every
    iterate keeps tau strictly admissible.
    """
    if r < 1:
        raise ValueError("solve_fixed_structure requires r >= 1")
    tau = np.asarray(tau_init, dtype=float).reshape(r)
    if control_init.interval != NORMALIZED or control_init.num_cells % (r + 1) != 0:
        raise ValueError("initial control must be normalized with cells divisible into r+1 arcs")
    n_arc = control_init.num_cells // (r + 1)
    opts = replace(opts, n_arc=n_arc)
    gap = opts.tau_gap(spec.T)
    merit = _Merit(spec, r, n_arc, opts.substeps, spec.T)
    m = spec.m

    def project(z):
        return np.concatenate([_project_box(z[:-r], spec.box, m), _project_tau(z[-r:], spec.T, gap)])

    def split(z):
        return z[:-r].reshape(-1, m), z[-r:]

    z = np.concatenate([control_init.values.ravel(), _project_tau(tau, spec.T, gap)])

    lam = np.zeros(r)
    rho = opts.penalty_init
    log: list[tuple] = []
    prev_gmax = np.inf
    converged = False
    pgnorm = np.inf
    gmax = np.inf

    for outer in range(opts.max_outer):
        # inner projected-gradient loop at fixed (lam, rho)
        inner_tol = max(opts.kkt_tol, min(1e-2, 0.1 * gmax)) if np.isfinite(gmax) else 1e-2
        step = 1.0
        z_prev = None
        grad_prev = None
        Mval = np.nan
        inner = 0
        for inner in range(1, opts.max_inner + 1):
            uc, tv = split(z)
            Mval, G, gu, gt = merit.value_and_grad(uc, tv, lam, rho)
            grad = np.concatenate([gu.ravel(), gt])
            if z_prev is not None:
                dz = z - z_prev
                dg = grad - grad_prev
                denom = float(dz @ dg)
                if denom > 0:
                    step = min(max(float(dz @ dz) / denom, 1e-10), 1e6)
            pgnorm = float(np.linalg.norm(z - project(z - grad)))
            if pgnorm <= inner_tol:
                break
            z_prev, grad_prev = z, grad
            accepted = False
            s = step
            for _ in range(opts.max_backtracks):
                z_new = project(z - s * grad)
                dz = z_new - z
                if float(np.linalg.norm(dz)) == 0.0:
                    break
                uc2, tv2 = split(z_new)
                M_new, _ = merit.value(uc2, tv2, lam, rho)
                if M_new <= Mval + opts.armijo_c * float(grad @ dz):
                    z = z_new
                    step = s
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                break  # line search exhausted: locally stationary for this merit
        uc, tv = split(z)
        _, G, gu, gt = merit.value_and_grad(uc, tv, lam, rho)
        gmax = float(np.max(np.abs(G)))
        grad = np.concatenate([gu.ravel(), gt])
        pgnorm = float(np.linalg.norm(z - project(z - grad)))
        log.append((outer, inner, float(Mval), pgnorm, gmax, rho, step))
        if gmax <= opts.eq_tol and pgnorm <= opts.kkt_tol:
            converged = True
            lam = lam + rho * G
            break
        if gmax <= max(opts.eq_tol, prev_gmax / opts.constraint_shrink):
            lam = lam + rho * G
        else:
            rho *= opts.penalty_growth
        prev_gmax = max(gmax, opts.eq_tol)

    uc, tv = split(z)
    cv = CrossingVector(tuple(tv), spec.T)
    control = ControlSignal(uc, 0.0, float(r + 1), NORMALIZED)
    note = "" if converged else "not converged"
    sol = _assemble_solution(
        spec, control, cv, opts,
        multipliers=lam, converged=converged, pg_norm=pgnorm, iterations=log, note=note,
    )
    return sol


def solve_time_crisis(
    spec: ProblemSpec, control_init: ControlSignal, opts: SolverOptions = SolverOptions()
) -> Solution:
    """Full pipeline: simulate the initial control, freeze its crossing
    structure, transport to normalized time and solve the fixed-structure
    problem.  An initialization without crossings is returned unchanged."""
    traj = integrate(spec, control_init, opts.substeps)
    crossings = detect_crossings(spec, traj)
    if crossings.empty:
        cv = CrossingVector((), spec.T)
        control = to_normalized(control_init, cv, opts.n_arc)
        return _assemble_solution(
            spec, control, cv, opts,
            multipliers=np.empty(0), converged=True, pg_norm=np.nan,
            iterations=(), note="no crossing structure",
        )
    cv = CrossingVector(crossings.times, spec.T)
    control = to_normalized(control_init, cv, opts.n_arc)
    return solve_fixed_structure(spec, cv.r, control, cv.tau, opts)
