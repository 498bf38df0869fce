"""First-order residual suite, critical-cone sampling and the second-order
quadratic form.

All verification runs on the arc-aligned grid of the solution (normalized
cells mapped through the time change), where crossing times sit exactly on
nodes and the piecewise-constant weight rho is constant per arc, so the
rho-weighted integrals split exactly at arc boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fileio import write_csv, write_json
from .multipliers import PontryaginCertificate, rho_weighted_integral
from .problem import ACTIVE_SET_DELTA, ProblemSpec, check_LIG
from .solve import Solution

__all__ = [
    "FirstOrderTols",
    "ReportEntry",
    "VerificationReport",
    "CriticalDirection",
    "check_first_order",
    "linearize",
    "sample_critical",
    "evaluate_omega",
    "second_order_check",
    "verify_solution",
    "lagrangian_merit",
    "directions_to_csv",
]

CONE_TOL = 1e-8


@dataclass(frozen=True)
class FirstOrderTols:
    # stationarity default matches what the solver's discrete KKT tolerance
    # buys in the pointwise sup norm (cell gradients carry a factor h); the
    # exact-certificate tests pass 1e-6 explicitly.
    stationarity: float = 1e-4
    nu_sign: float = 1e-8
    complementarity: float = 1e-8
    costate_jump: float = 1e-10
    hamiltonian_jump: float = 1e-4
    hamiltonian_arc: float = 1e-4
    h0: float = 1e-4
    integral_relation: float = 1e-4
    crossing: float = 1e-8
    terminal_costate: float = 1e-10
    pontryagin: float = 1e-6
    lig: float = 1e-6


@dataclass(frozen=True)
class ReportEntry:
    name: str
    value: float
    tol: float
    kind: str  # "le": pass iff value <= tol; "ge": pass iff value >= tol

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return self.kind == "ge" and self.value > 0
        return self.value <= self.tol if self.kind == "le" else self.value >= self.tol

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": float(self.value),
            "tol": float(self.tol),
            "kind": self.kind,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class VerificationReport:
    entries: tuple[ReportEntry, ...]
    warnings: tuple[str, ...] = ()
    omega_status: str = "not run"
    omega_min: Optional[float] = None
    omega_accepted: int = 0

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def entry(self, name: str) -> ReportEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_json(self, path, timestamp: bool = True) -> None:
        obj = {
            "passed": self.passed,
            "entries": [e.as_dict() for e in self.entries],
            "warnings": list(self.warnings),
            "omega": {
                "status": self.omega_status,
                "min_normalized": self.omega_min,
                "accepted_directions": self.omega_accepted,
            },
        }
        write_json(path, obj, timestamp=timestamp)

    def table(self) -> str:
        width = max(len(e.name) for e in self.entries) if self.entries else 10
        lines = [f"{'check':<{width}}  {'value':>13}  {'tol':>9}  result"]
        for e in self.entries:
            op = "<=" if e.kind == "le" else ">="
            lines.append(
                f"{e.name:<{width}}  {e.value:>13.6g}  {op} {e.tol:>6.1g}  "
                f"{'pass' if e.passed else 'FAIL'}"
            )
        lines.append(f"omega: {self.omega_status}"
                     + (f" (min {self.omega_min:.6g} over {self.omega_accepted})" if self.omega_min is not None else ""))
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def _crossing_adjacent_cells(solution: Solution) -> set[int]:
    n_arc = solution.traj_norm.n_arc
    out: set[int] = set()
    for a in range(1, solution.r + 1):
        out.add(a * n_arc - 1)
        out.add(a * n_arc)
    return out


def check_first_order(
    spec: ProblemSpec,
    solution: Solution,
    cert: PontryaginCertificate,
    tols: FirstOrderTols = FirstOrderTols(),
    pontry_samples: int = 101,
    delta: float = ACTIVE_SET_DELTA,
) -> VerificationReport:
    """Every first-order residual of the certificate as a report entry.

    Nothing raises: findings land in the report.  The Hamiltonian-jump,
    constancy and integral-relation entries recompute their quantities from
    (p, x, u) rather than trusting the construction, so corrupted
    certificates fail loudly.
    """
    traj = solution.traj_norm
    r = solution.r
    n_arc = traj.n_arc
    nps = traj.nodes_per_arc
    C = solution.control_norm.num_cells
    u_cells = solution.control_norm.values
    entries: list[ReportEntry] = []
    warnings: list[str] = []

    # recomputed from (p, nu), not read from the construction
    S0 = solution.opts.substeps
    stationarity = 0.0
    for c in range(C):
        a = c // n_arc
        node = c * S0
        x = traj.states[node]
        u = u_cells[c]
        p = cert.p_arcs[a][node - a * nps]
        resid = spec.f_jacobian(x, u)[1].T @ p + spec.c.jacobian(u).T @ cert.nu[c]
        stationarity = max(stationarity, float(np.max(np.abs(resid))))
    entries.append(ReportEntry("stationarity_sup", stationarity, tols.stationarity, "le"))

    skip = _crossing_adjacent_cells(solution)
    keep = [c for c in range(C) if c not in skip]
    nu_min = float(cert.nu[keep].min()) if keep and spec.l else 0.0
    entries.append(ReportEntry("nu_sign_min", nu_min, -tols.nu_sign, "ge"))

    comp = 0.0
    for c in range(C):
        comp = max(comp, abs(float(cert.nu[c] @ spec.c.value(u_cells[c]))))
    entries.append(ReportEntry("complementarity_sup", comp, tols.complementarity, "le"))

    jump_p = 0.0
    jump_H = 0.0
    crossing_res = 0.0
    same_tau = cert.tau.shape == solution.tau.shape and np.allclose(cert.tau, solution.tau)
    for j in range(1, r + 1):
        if same_tau:
            x_c = traj.state_at_arc(j)
        else:
            tp = solution.traj_phys
            x_c = np.array(
                [np.interp(cert.tau[j - 1], tp.times, tp.states[:, i]) for i in range(spec.n)]
            )
        grad_g = spec.g_gradient(x_c)
        p_m = cert.p_before(j)
        p_p = cert.p_after(j)
        jump_p = max(jump_p, float(np.max(np.abs(p_p - p_m - cert.gamma[j - 1] * grad_g))))
        u_before = u_cells[j * n_arc - 1]
        u_after = u_cells[j * n_arc]
        H_before = float(p_m @ spec.f_value(x_c, u_before))
        H_after = float(p_p @ spec.f_value(x_c, u_after))
        jump_H = max(jump_H, abs(H_after - H_before + cert.directions[j - 1] * cert.alpha))
        crossing_res = max(crossing_res, abs(spec.g_value(x_c)))
    entries.append(ReportEntry("costate_jump_sup", jump_p, tols.costate_jump, "le"))
    entries.append(ReportEntry("hamiltonian_jump", jump_H, tols.hamiltonian_jump, "le"))
    entries.append(ReportEntry("crossing_consistency", crossing_res, tols.crossing, "le"))

    arc_dev = 0.0
    for a in range(r + 1):
        Ha = cert.H_cells[a * n_arc : (a + 1) * n_arc]
        arc_dev = max(arc_dev, float(np.max(np.abs(Ha - cert.H_arc[a]))))
    entries.append(ReportEntry("hamiltonian_arc_dev", arc_dev, tols.hamiltonian_arc, "le"))

    # H0 deviation checked with the indicator taken from the trajectory signs
    S = solution.opts.substeps
    H0_cells = np.empty(C)
    for c in range(C):
        node = c * S
        outside = spec.g_value(traj.states[node if node % nps else node + 1]) > 0
        H0_cells[c] = cert.H_cells[c] + (1.0 if outside else 0.0)
    h0_dev = float(np.max(np.abs(H0_cells - np.median(H0_cells))))
    entries.append(ReportEntry("h0_dev", h0_dev, tols.h0, "le"))

    if r:
        rho_vals = rho_weighted_integral(spec, solution, cert)
        integ = float(np.max(np.abs(rho_vals + np.array([(-1.0) ** j for j in range(1, r + 1)]))))
    else:
        integ = 0.0
    entries.append(ReportEntry("integral_relation_max", integ, tols.integral_relation, "le"))

    term = float(
        np.max(np.abs(cert.p_terminal - cert.alpha * spec.phi_gradient(traj.terminal_state)))
    )
    entries.append(ReportEntry("terminal_costate", term, tols.terminal_costate, "le"))

    # Hamiltonian minimality over a grid of the box hull
    if spec.box is None:
        warnings.append("no box hull: Pontryagin sampling skipped")
        margin = np.inf
    else:
        axes = [np.linspace(lo, hi, pontry_samples) for lo, hi in spec.box]
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        margin = np.inf
        for c in range(C):
            a = c // n_arc
            node = c * S
            x = traj.states[node]
            p = cert.p_arcs[a][node - a * nps]
            H_here = cert.H_cells[c]
            H_grid = min(float(p @ spec.f_value(x, u)) for u in mesh)
            margin = min(margin, H_grid - H_here)
    entries.append(ReportEntry("pontryagin_margin", float(margin), -tols.pontryagin, "ge"))

    lig = check_LIG(spec, u_cells, delta=delta, eps=tols.lig)
    entries.append(ReportEntry("lig_margin", lig.margin, tols.lig, "ge"))

    if cert.nu_rank_deficient:
        warnings.append(f"{len(cert.nu_rank_deficient)} cells with rank-deficient active constraint rows")
    if r and np.isfinite(cert.nlp_gamma_gap) and cert.nlp_gamma_gap > 1e-4:
        warnings.append(
            f"jump coefficients disagree with solver multipliers by {cert.nlp_gamma_gap:.3e}"
        )
    return VerificationReport(entries=tuple(entries), warnings=tuple(warnings))


# -- linearized dynamics -----------------------------------------------------


def linearize(
    spec: ProblemSpec, solution: Solution, delta_u: np.ndarray, delta_tau: np.ndarray
) -> np.ndarray:
    """Trajectory of the linearized flow for a variation (delta_u, delta_tau).

    Integrates d(dx)/dt = Df (dx, du) + (rho . dtau) f with coefficients
    frozen per cell at the cell-midpoint state, on the arc-aligned grid;
    dx(0) = 0.  On arc a the weight (rho . dtau) equals
    (dtau_{a+1} - dtau_a)/w_a with dtau_0 = dtau_{r+1} = 0.
    """
    traj = solution.traj_norm
    r = solution.r
    n_arc = traj.n_arc
    S = solution.opts.substeps
    nps = traj.nodes_per_arc
    w = solution.cv.slopes()
    delta_u = np.asarray(delta_u, dtype=float).reshape(-1, spec.m)
    delta_tau = np.asarray(delta_tau, dtype=float).reshape(r)
    dtau_ext = np.concatenate([[0.0], delta_tau, [0.0]])
    K = traj.states.shape[0] - 1
    dx = np.zeros((K + 1, spec.n))
    h_s = 1.0 / (n_arc * S)
    for c in range(solution.control_norm.num_cells):
        a = c // n_arc
        u = solution.control_norm.values[c]
        x_mid = 0.5 * (traj.states[c * S] + traj.states[(c + 1) * S])
        A, B = spec.f_jacobian(x_mid, u)
        fval = spec.f_value(x_mid, u)
        du = delta_u[c]
        # normalized-clock rhs: w*(A dx + B du) + dw * f, dw = dtau_{a+1} - dtau_a
        force = w[a] * (B @ du) + (dtau_ext[a + 1] - dtau_ext[a]) * fval
        Aw = w[a] * A
        for s in range(S):
            k = c * S + s
            v = dx[k]
            k1 = Aw @ v + force
            k2 = Aw @ (v + 0.5 * h_s * k1) + force
            k3 = Aw @ (v + 0.5 * h_s * k2) + force
            k4 = Aw @ (v + h_s * k3) + force
            dx[k + 1] = v + (h_s / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return dx


@dataclass(frozen=True)
class CriticalDirection:
    """Member of the sampled critical cone on the arc-aligned grid."""

    delta_u: np.ndarray  # (C, m)
    delta_tau: np.ndarray  # (r,)
    delta_x: np.ndarray  # (K+1, n)
    tangency_residual: float
    crossing_residual: float
    cost_value: float

    def norm(self, solution: Solution) -> float:
        """L2 control norm (physical measure) plus euclidean |delta tau|."""
        n_arc = solution.traj_norm.n_arc
        w = solution.cv.slopes()
        h = np.repeat(w / n_arc, n_arc)
        l2 = float(np.sqrt(np.sum(h[:, None] * self.delta_u**2)))
        return l2 + float(np.linalg.norm(self.delta_tau))


def _active_projectors(spec: ProblemSpec, u_cells: np.ndarray, delta: float):
    """Per-cell orthogonal projector onto the null space of active rows."""
    cache: dict[tuple, np.ndarray] = {}
    projs = []
    actives = []
    for u in u_cells:
        cv = spec.c.value(u)
        active = tuple(int(i) for i in np.flatnonzero(cv >= -delta))
        key = (active, tuple(np.round(u, 12)))
        if key not in cache:
            if active:
                rows = spec.c.jacobian(u)[list(active)]
                P = np.eye(spec.m) - np.linalg.pinv(rows) @ rows
            else:
                P = np.eye(spec.m)
            cache[key] = P
        projs.append(cache[key])
        actives.append(active)
    return projs, actives


def sample_critical(
    spec: ProblemSpec,
    solution: Solution,
    cert: PontryaginCertificate,
    count: int = 200,
    seed: int = 0,
    delta: float = ACTIVE_SET_DELTA,
    cone_tol: float = CONE_TOL,
) -> tuple[list[CriticalDirection], list[str]]:
    """Random critical directions built to satisfy the cone constraints.

    Cell variations are projected onto the active-constraint tangent space,
    delta_tau solves the crossing-tangency system, and the linearized-cost
    inequality is checked for both signs; failures are discarded.  Returns
    (accepted directions, warnings)."""
    traj = solution.traj_norm
    r = solution.r
    rng = np.random.default_rng(seed)
    warnings: list[str] = []
    C = solution.control_norm.num_cells
    projs, _ = _active_projectors(spec, solution.control_norm.values, delta)
    nps = traj.nodes_per_arc

    # crossing-tangency response matrix M[j, k] = Dg(x(tau_j)) dx_k(tau_j)
    grads = [spec.g_gradient(traj.state_at_arc(j)) for j in range(1, r + 1)]
    cols = []
    M = np.zeros((r, r))
    for k in range(r):
        e = np.zeros(r)
        e[k] = 1.0
        dx_k = linearize(spec, solution, np.zeros((C, spec.m)), e)
        cols.append(dx_k)
        for j in range(1, r + 1):
            M[j - 1, k] = float(grads[j - 1] @ dx_k[j * nps])
    if r:
        svals = np.linalg.svd(M, compute_uv=False)
        M_singular = svals[-1] == 0.0 or svals[0] / svals[-1] > 1e10
    else:
        M_singular = False

    phi_grad = spec.phi_gradient(traj.terminal_state)
    alt = np.array([(-1.0) ** j for j in range(1, r + 1)])
    accepted: list[CriticalDirection] = []
    for _ in range(count):
        du = rng.standard_normal((C, spec.m))
        for c in range(C):
            du[c] = projs[c] @ du[c]
        if M_singular:
            continue
        dx_u = linearize(spec, solution, du, np.zeros(r))
        rhs = -np.array([float(grads[j - 1] @ dx_u[j * nps]) for j in range(1, r + 1)])
        dtau = np.linalg.solve(M, rhs) if r else np.zeros(0)
        dx = dx_u.copy()
        for k in range(r):
            dx += dtau[k] * cols[k]
        cost = float(phi_grad @ dx[-1]) + float(alt @ dtau)
        if cost > cone_tol:
            if -cost > cone_tol:
                continue
            du, dtau, dx, cost = -du, -dtau, -dx, -cost
        d = CriticalDirection(
            delta_u=du,
            delta_tau=dtau,
            delta_x=dx,
            tangency_residual=_tangency_residual(spec, solution, du, delta),
            crossing_residual=max(
                (abs(float(grads[j - 1] @ dx[j * nps])) for j in range(1, r + 1)), default=0.0
            ),
            cost_value=cost,
        )
        scale = d.norm(solution)
        if scale <= 1e-14:
            continue
        d = CriticalDirection(
            delta_u=du / scale,
            delta_tau=dtau / scale,
            delta_x=dx / scale,
            tangency_residual=d.tangency_residual / scale,
            crossing_residual=d.crossing_residual / scale,
            cost_value=cost / scale,
        )
        if d.tangency_residual > cone_tol or d.crossing_residual > cone_tol or d.cost_value > cone_tol:
            continue
        accepted.append(d)
    if M_singular:
        warnings.append("crossing-tangency matrix singular: every sample discarded")
    if len(accepted) < count / 10:
        warnings.append(f"cone nearly trivial: {len(accepted)}/{count} samples accepted")
    return accepted, warnings


def _tangency_residual(spec, solution, du, delta):
    res = 0.0
    for c, u in enumerate(solution.control_norm.values):
        cv = spec.c.value(u)
        active = np.flatnonzero(cv >= -delta)
        if active.size:
            rows = spec.c.jacobian(u)[active]
            res = max(res, float(np.max(np.abs(rows @ du[c]))))
    return res


def evaluate_omega(
    spec: ProblemSpec, solution: Solution, cert: PontryaginCertificate, direction: CriticalDirection
) -> float:
    """Quadratic form of the second-order condition at the solution.

    D2 phi(x(T))(dx(T))^2 + sum_j gamma_j D2 g(x(tau_j))(dx(tau_j))^2
    + int D2 H^a (dx, du)^2 dt + 2 int (rho . dtau) DH (dx, du) dt,
    derivatives in (x, u) only; midpoint quadrature per substep interval
    with exact splitting at arc boundaries."""
    traj = solution.traj_norm
    r = solution.r
    n_arc = traj.n_arc
    S = solution.opts.substeps
    nps = traj.nodes_per_arc
    w = solution.cv.slopes()
    dx = direction.delta_x
    du = direction.delta_u
    dtau_ext = np.concatenate([[0.0], direction.delta_tau, [0.0]])

    dxT = dx[-1]
    total = float(dxT @ spec.phi.hessian(traj.terminal_state)[0] @ dxT)
    for j in range(1, r + 1):
        x_c = traj.state_at_arc(j)
        dxj = dx[j * nps]
        total += cert.gamma[j - 1] * float(dxj @ spec.g.hessian(x_c)[0] @ dxj)

    nm = spec.n + spec.m
    for c in range(solution.control_norm.num_cells):
        a = c // n_arc
        u = solution.control_norm.values[c]
        h_t = w[a] / nps
        theta = (dtau_ext[a + 1] - dtau_ext[a]) / w[a]  # (rho . dtau) on arc a
        c_hess = spec.c.hessian(u)
        nu = cert.nu[c]
        for s in range(S):
            k = c * S + s
            x_mid = 0.5 * (traj.states[k] + traj.states[k + 1])
            p_mid = 0.5 * (cert.p_arcs[a][k - a * nps] + cert.p_arcs[a][k + 1 - a * nps])
            dz = np.concatenate([0.5 * (dx[k] + dx[k + 1]), du[c]])
            z = np.concatenate([x_mid, u])
            fh = spec.f.hessian(z)
            Hess = np.tensordot(p_mid, fh, axes=(0, 0))
            if spec.l:
                Hess = Hess.copy()
                Hess[spec.n :, spec.n :] += np.tensordot(nu, c_hess, axes=(0, 0))
            total += float(dz @ Hess @ dz) * h_t
            DH = spec.f.jacobian(z).T @ p_mid  # gradient of H in (x, u)
            total += 2.0 * theta * float(DH @ dz) * h_t
    return total


def second_order_check(
    spec: ProblemSpec,
    solution: Solution,
    cert: PontryaginCertificate,
    count: int = 200,
    seed: int = 0,
    tol: float = 1e-4,
    delta: float = ACTIVE_SET_DELTA,
    cone_tol: float = CONE_TOL,
):
    """Minimum of the normalized quadratic form over sampled critical
    directions.  A violation certifies non-optimality; passing is consistent
    with (not proof of) optimality.  Returns (status, min value, accepted,
    warnings)."""
    directions, warnings = sample_critical(
        spec, solution, cert, count=count, seed=seed, delta=delta, cone_tol=cone_tol
    )
    if not directions:
        return "vacuous (cone trivial)", None, 0, warnings
    vals = [evaluate_omega(spec, solution, cert, d) for d in directions]
    omega_min = float(min(vals))
    status = "pass" if omega_min >= -tol else "VIOLATED"
    return status, omega_min, len(directions), warnings


def directions_to_csv(solution: Solution, directions, path, timestamp: bool = True) -> None:
    """Dump sampled critical directions for plotting: one row per cell per
    direction (direction id, cell index, du components, shared dtau)."""
    m = solution.control_norm.m
    r = solution.r
    header = (["direction", "cell"] + [f"du_{i + 1}" for i in range(m)]
              + [f"dtau_{j + 1}" for j in range(r)])
    rows = []
    for d_id, d in enumerate(directions):
        for c in range(d.delta_u.shape[0]):
            rows.append([d_id, c] + [float(v) for v in d.delta_u[c]]
                        + [float(v) for v in d.delta_tau])
    write_csv(path, header, rows, timestamp=timestamp)


def verify_solution(
    spec: ProblemSpec,
    solution: Solution,
    cert: PontryaginCertificate,
    tols: FirstOrderTols = FirstOrderTols(),
    omega_count: int = 200,
    omega_tol: float = 1e-4,
    seed: int = 0,
    pontry_samples: int = 101,
    delta: float = ACTIVE_SET_DELTA,
) -> VerificationReport:
    """First-order suite, then the second-order check gated on its outcome."""
    report = check_first_order(
        spec, solution, cert, tols=tols, pontry_samples=pontry_samples, delta=delta
    )
    if not report.passed:
        return VerificationReport(
            entries=report.entries,
            warnings=report.warnings,
            omega_status="skipped (first-order failed)",
        )
    status, omega_min, accepted, warns = second_order_check(
        spec, solution, cert, count=omega_count, seed=seed, tol=omega_tol, delta=delta
    )
    return VerificationReport(
        entries=report.entries,
        warnings=report.warnings + tuple(warns),
        omega_status=status,
        omega_min=omega_min,
        omega_accepted=accepted,
    )


def lagrangian_merit(
    spec: ProblemSpec,
    solution: Solution,
    cert: PontryaginCertificate,
    du: np.ndarray,
    dtau: np.ndarray,
    h: float,
) -> float:
    """Fixed-multiplier Lagrangian at (u + h du, tau + h dtau): objective plus
    -gamma_j g(x(j)) plus the frozen-measure control-constraint term.  Its
    second directional difference reproduces the quadratic form."""
    from .reformulate import CrossingVector, integrate_normalized, reformulated_objective
    from .simulate import NORMALIZED, ControlSignal

    tau_h = solution.tau + h * np.asarray(dtau, dtype=float)
    u_h = solution.control_norm.values + h * np.asarray(du, dtype=float)
    cv = CrossingVector(tuple(tau_h), spec.T)
    control = ControlSignal(u_h, 0.0, float(solution.r + 1), NORMALIZED)
    traj = integrate_normalized(spec, control, cv, solution.opts.substeps)
    val = reformulated_objective(spec, traj)
    for j in range(1, solution.r + 1):
        val += -cert.gamma[j - 1] * spec.g_value(traj.state_at_arc(j))
    n_arc = solution.traj_norm.n_arc
    w0 = solution.cv.slopes()  # frozen measure
    for c in range(solution.control_norm.num_cells):
        a = c // n_arc
        val += (w0[a] / n_arc) * float(cert.nu[c] @ spec.c.value(u_h[c]))
    return val
