"""Reconstruction of the normalized optimality certificate from a solution.

The costate p is integrated backward from p(T) = grad phi(x(T)) arc by arc;
at each boundary crossing, processed right to left, the jump coefficient
gamma_j is chosen so the before-side Hamiltonian equals the after-side value
plus 1 for an outward crossing (minus 1 inward) - equivalently, so that
H + 1_{outside} stays constant.  The control multiplier nu is recovered per
cell by least squares on the near-active constraint gradients, and the
single-crossing certificate can be mapped onto the doubled-state form for an
independent cross-check of every transversality row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonTransverseError, StructureError
from .fileio import write_csv, write_json
from .problem import ACTIVE_SET_DELTA, ProblemSpec
from .solve import Solution

__all__ = [
    "PontryaginCertificate",
    "AugmentedCertificate",
    "compute_costate",
    "compute_nu",
    "build_certificate",
    "rho_weighted_integral",
    "map_to_augmented",
    "certificate_to_json",
    "costate_to_csv",
]

TRANSVERSALITY_TOL = 1e-8


@dataclass(frozen=True)
class PontryaginCertificate:
    """Normalized multiplier (alpha = 1) with per-arc costate pieces.

    ``p_arcs[a]`` holds the costate at the nodes of arc a (one-sided values
    at the crossing nodes).  ``nu`` is the per-cell control multiplier;
    ``H_cells`` the per-cell Hamiltonian p.f; ``directions[j]`` = +1 when
    crossing j leaves K.  ``nlp_gamma_gap`` is the cross-check between the
    jump coefficients and the solver's equality multipliers (lambda_j should
    equal -gamma_j).
    """

    alpha: float
    gamma: np.ndarray  # (r,)
    tau: np.ndarray  # (r,)
    directions: tuple[int, ...]
    p_arcs: tuple[np.ndarray, ...]  # per arc: (nodes_per_arc + 1, n)
    nu: np.ndarray  # (C, l)
    nu_residuals: np.ndarray  # (C,) stationarity residual per cell
    nu_rank_deficient: tuple[int, ...]  # cells with rank-deficient active rows
    H_cells: np.ndarray  # (C,)
    H_arc: np.ndarray  # (r + 1,) per-arc medians
    H0: float
    nlp_gamma_gap: float

    @property
    def r(self) -> int:
        return len(self.gamma)

    def p_before(self, j: int) -> np.ndarray:
        """One-sided costate p(tau_j^-): last node of arc j-1."""
        return self.p_arcs[j - 1][-1]

    def p_after(self, j: int) -> np.ndarray:
        """One-sided costate p(tau_j^+): first node of arc j."""
        return self.p_arcs[j][0]

    @property
    def p_terminal(self) -> np.ndarray:
        return self.p_arcs[-1][-1]

    @property
    def p_initial(self) -> np.ndarray:
        return self.p_arcs[0][0]


def _arc_layout(solution: Solution):
    traj = solution.traj_norm
    nps = traj.nodes_per_arc
    r = solution.r
    n_arc = traj.n_arc
    return traj, r, n_arc, nps


def _hermite_mid(x0, x1, d0, d1, h):
    # cubic Hermite at theta = 1/2
    return 0.5 * (x0 + x1) + (h / 8.0) * (d0 - d1)


def _backward_arc(spec, states, u_cells, t_width, substeps, p_end, refine):
    """Backward RK4 of pdot = -f_x(xbar, ubar)^T p across one arc.

    ``states`` are the arc's forward nodes, ``u_cells`` its cells; the state
    at backward stage points is interpolated by cubic Hermite within each
    forward step.  Returns p at the arc's (original) nodes.
    """
    nnodes = states.shape[0]
    ncells = u_cells.shape[0]
    h = t_width / (nnodes - 1)
    p = np.empty_like(states)
    p[-1] = p_end
    for k in range(nnodes - 2, -1, -1):
        cell = min(k // substeps, ncells - 1)
        u = u_cells[cell]
        x0, x1 = states[k], states[k + 1]
        d0 = spec.f_value(x0, u)
        d1 = spec.f_value(x1, u)

        def x_at(theta):
            if theta <= 0.0:
                return x0
            if theta >= 1.0:
                return x1
            t2 = theta * theta
            t3 = t2 * theta
            return (
                (2 * t3 - 3 * t2 + 1) * x0
                + ((t3 - 2 * t2 + theta) * h) * d0
                + (-2 * t3 + 3 * t2) * x1
                + ((t3 - t2) * h) * d1
            )

        def rhs(theta, pv):
            A = spec.f_jacobian(x_at(theta), u)[0]
            return -(A.T @ pv)

        pv = p[k + 1]
        hh = h / refine
        for s in range(refine):
            th1 = 1.0 - s / refine
            th_mid = 1.0 - (s + 0.5) / refine
            th0 = 1.0 - (s + 1.0) / refine
            k1 = rhs(th1, pv)
            k2 = rhs(th_mid, pv - (hh / 2.0) * k1)
            k3 = rhs(th_mid, pv - (hh / 2.0) * k2)
            k4 = rhs(th0, pv - hh * k3)
            pv = pv - (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p[k] = pv
    return p


def compute_costate(
    spec: ProblemSpec,
    solution: Solution,
    gamma_override: Optional[np.ndarray] = None,
    transversality_tol: float = TRANSVERSALITY_TOL,
    refine: int = 1,
) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Backward costate with crossing jumps; returns (p_arcs, gamma).

    Processes arcs right to left from p(T) = grad phi(x(T)).  At crossing j
    the before-side Hamiltonian is pinned to H_after + sigma_j (sigma = +1
    leaving K, -1 entering), which determines gamma_j; ``gamma_override``
    substitutes given jump coefficients instead (fault-injection hook).
    """
    traj, r, n_arc, nps = _arc_layout(solution)
    w = solution.cv.slopes()
    directions = tuple(1 if j % 2 == 1 else -1 for j in range(1, r + 1))
    gamma = np.empty(r)
    p_arcs: list[np.ndarray] = [None] * (r + 1)  # type: ignore[list-item]
    p_end = spec.phi_gradient(traj.terminal_state)
    for a in range(r, -1, -1):
        arc_states = traj.states[a * nps : (a + 1) * nps + 1]
        arc_cells = solution.control_norm.values[a * n_arc : (a + 1) * n_arc]
        p_arcs[a] = _backward_arc(spec, arc_states, arc_cells, w[a], solution.opts.substeps, p_end, refine)
        if a == 0:
            break
        # jump at crossing j = a (between arc a-1 and arc a)
        x_c = traj.state_at_arc(a)
        u_after = arc_cells[0]
        u_before = solution.control_norm.values[a * n_arc - 1]
        p_plus = p_arcs[a][0]
        H_after = float(p_plus @ spec.f_value(x_c, u_after))
        H_before = H_after + directions[a - 1] * 1.0
        f_minus = spec.f_value(x_c, u_before)
        grad_g = spec.g_gradient(x_c)
        denom = float(grad_g @ f_minus)
        if abs(denom) < transversality_tol:
            raise NonTransverseError(
                f"nontransverse crossing at tau_{a} = {solution.cv.tau[a - 1]:.6g}: "
                f"grad g . f = {denom:.3e}, jump coefficient undefined"
            )
        if gamma_override is not None:
            gamma[a - 1] = gamma_override[a - 1]
        else:
            gamma[a - 1] = (float(p_plus @ f_minus) - H_before) / denom
        p_end = p_plus - gamma[a - 1] * grad_g
    return tuple(p_arcs), gamma


def compute_nu(
    spec: ProblemSpec,
    solution: Solution,
    p_arcs: tuple[np.ndarray, ...],
    delta: float = ACTIVE_SET_DELTA,
) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Per-cell control multiplier from grad_u H^a = 0 on the active set.

    Solves Dc_I(u)^T nu_I = -grad_u H by least squares per cell; inactive
    components are zero.  Returns (nu, stationarity residuals, cells whose
    active Jacobian is rank deficient)."""
    traj, r, n_arc, nps = _arc_layout(solution)
    C = solution.control_norm.num_cells
    S = solution.opts.substeps
    nu = np.zeros((C, spec.l))
    residuals = np.zeros(C)
    rank_flags: list[int] = []
    for c in range(C):
        a = c // n_arc
        node = c * S
        x = traj.states[node]
        u = solution.control_norm.values[c]
        p = p_arcs[a][node - a * nps]
        grad_u_H = spec.f_jacobian(x, u)[1].T @ p
        cv = spec.c.value(u)
        active = np.flatnonzero(cv >= -delta)
        if active.size:
            rows = spec.c.jacobian(u)[active]  # (|I|, m)
            sol_ls, _, rank, _ = np.linalg.lstsq(rows.T, -grad_u_H, rcond=None)
            if rank < active.size:
                rank_flags.append(c)
            nu[c, active] = sol_ls
            residuals[c] = float(np.linalg.norm(grad_u_H + rows.T @ sol_ls, ord=np.inf))
        else:
            residuals[c] = float(np.linalg.norm(grad_u_H, ord=np.inf))
    return nu, residuals, tuple(rank_flags)


def _hamiltonian_cells(spec: ProblemSpec, solution: Solution, p_arcs) -> np.ndarray:
    """Per-cell H = p.f at the cell's left node with the cell's control."""
    traj, r, n_arc, nps = _arc_layout(solution)
    S = solution.opts.substeps
    C = solution.control_norm.num_cells
    H = np.empty(C)
    for c in range(C):
        a = c // n_arc
        node = c * S
        x = traj.states[node]
        p = p_arcs[a][node - a * nps]
        H[c] = float(p @ spec.f_value(x, solution.control_norm.values[c]))
    return H


def build_certificate(
    spec: ProblemSpec,
    solution: Solution,
    delta: float = ACTIVE_SET_DELTA,
    transversality_tol: float = TRANSVERSALITY_TOL,
    gamma_override: Optional[np.ndarray] = None,
    refine: int = 1,
) -> PontryaginCertificate:
    """Full normalized certificate (alpha = 1) for a solved instance."""
    p_arcs, gamma = compute_costate(
        spec, solution, gamma_override=gamma_override,
        transversality_tol=transversality_tol, refine=refine,
    )
    nu, nu_res, rank_flags = compute_nu(spec, solution, p_arcs, delta=delta)
    H_cells = _hamiltonian_cells(spec, solution, p_arcs)
    n_arc = solution.traj_norm.n_arc
    r = solution.r
    H_arc = np.array([np.median(H_cells[a * n_arc : (a + 1) * n_arc]) for a in range(r + 1)])
    indicator = np.repeat([a % 2 for a in range(r + 1)], n_arc).astype(float)
    H0 = float(np.median(H_cells + indicator))
    lam = solution.multipliers
    gap = float(np.max(np.abs(lam + gamma))) if r and lam.size == r else np.nan
    directions = tuple(1 if j % 2 == 1 else -1 for j in range(1, r + 1))
    return PontryaginCertificate(
        alpha=1.0,
        gamma=gamma,
        tau=solution.tau.copy(),
        directions=directions,
        p_arcs=p_arcs,
        nu=nu,
        nu_residuals=nu_res,
        nu_rank_deficient=rank_flags,
        H_cells=H_cells,
        H_arc=H_arc,
        H0=H0,
        nlp_gamma_gap=gap,
    )


def arc_hamiltonian_integrals(spec: ProblemSpec, solution: Solution, p_arcs) -> np.ndarray:
    """Per-arc integrals of H dt by the midpoint rule on substep intervals
    (exact arc-boundary splitting: arcs are integrated separately)."""
    traj, r, n_arc, nps = _arc_layout(solution)
    S = solution.opts.substeps
    w = solution.cv.slopes()
    out = np.empty(r + 1)
    for a in range(r + 1):
        h_t = w[a] / nps
        acc = 0.0
        for k in range(nps):
            node = a * nps + k
            cell = node // S
            u = solution.control_norm.values[cell]
            x_mid = 0.5 * (traj.states[node] + traj.states[node + 1])
            p_mid = 0.5 * (p_arcs[a][k] + p_arcs[a][k + 1])
            acc += float(p_mid @ spec.f_value(x_mid, u)) * h_t
        out[a] = acc
    return out


def rho_weighted_integral(
    spec: ProblemSpec, solution: Solution, cert: PontryaginCertificate
) -> np.ndarray:
    """Values of int (rho_tau)_j H dt for j = 1..r: the arc-length-weighted
    Hamiltonian averages H_bar_{j-1} - H_bar_j."""
    I = arc_hamiltonian_integrals(spec, solution, cert.p_arcs)
    w = solution.cv.slopes()
    return np.array([I[j - 1] / w[j - 1] - I[j] / w[j] for j in range(1, solution.r + 1)])


# -- doubled-state (single crossing) cross-check -----------------------------


@dataclass(frozen=True)
class AugmentedCertificate:
    """Multiplier of the doubled Mayer form mapped from a certificate.

    Verification rows (sup norms) must vanish for a consistent pair:
    two endpoint transversality rows, lambda(1) + alpha, and stationarity of
    the doubled augmented Hamiltonian in both control blocks.
    """

    alpha: float
    beta1: np.ndarray
    beta2: float
    beta3: np.ndarray
    beta4: float
    mu1: np.ndarray  # (n_arc, l)
    mu2: np.ndarray
    lam_path: np.ndarray  # lambda(s) at arc nodes
    rows: dict
    consistent: bool


def map_to_augmented(
    spec: ProblemSpec, solution: Solution, cert: PontryaginCertificate, row_tol: float = 1e-5
) -> AugmentedCertificate:
    """Map (alpha, gamma, nu, p) onto the doubled-state multiplier and verify
    the transversality rows, lambda(1) = -alpha and stationarity.

    The G-multiplier on the crossing constraint is beta4 = -gamma (the
    endpoint rows p1(1) = -beta3 + beta4 grad g and the jump
    p(tau+) - p(tau-) = gamma grad g force opposite signs)."""
    if solution.r != 1:
        raise StructureError("augmented mapping defined for r = 1")
    traj = solution.traj_norm
    tau = float(solution.cv.tau[0])
    T = spec.T
    p1, p2 = cert.p_arcs[0], cert.p_arcs[1]
    n_arc = traj.n_arc
    nu1 = cert.nu[:n_arc]
    nu2 = cert.nu[n_arc:]
    mu1 = tau * nu1
    mu2 = (T - tau) * nu2
    beta1 = -p1[0]
    beta3 = -p2[0]
    beta4 = -float(cert.gamma[0])
    alpha = cert.alpha

    # lambda(s) from dlambda/ds = -H1(s) + H2(s), lambda(0) = 0 (midpoint rule)
    nps = traj.nodes_per_arc
    S = solution.opts.substeps
    lam_path = np.zeros(nps + 1)
    for k in range(nps):
        cell1 = k // S
        cell2 = n_arc + cell1
        x1m = 0.5 * (traj.states[k] + traj.states[k + 1])
        x2m = 0.5 * (traj.states[nps + k] + traj.states[nps + k + 1])
        p1m = 0.5 * (p1[k] + p1[k + 1])
        p2m = 0.5 * (p2[k] + p2[k + 1])
        H1 = float(p1m @ spec.f_value(x1m, solution.control_norm.values[cell1]))
        H2 = float(p2m @ spec.f_value(x2m, solution.control_norm.values[cell2]))
        lam_path[k + 1] = lam_path[k] + (-H1 + H2) * (1.0 / nps)

    x_c = traj.state_at_arc(1)
    x_T = traj.terminal_state
    row_trans1 = float(np.max(np.abs(p1[-1] - (-beta3 + beta4 * spec.g_gradient(x_c)))))
    row_trans2 = float(np.max(np.abs(p2[-1] - alpha * spec.phi_gradient(x_T))))
    row_lambda = abs(lam_path[-1] + alpha)

    stat = 0.0
    for c in range(n_arc):
        u1 = solution.control_norm.values[c]
        u2 = solution.control_norm.values[n_arc + c]
        x1 = traj.states[c * S]
        x2 = traj.states[nps + c * S]
        r1 = tau * (spec.f_jacobian(x1, u1)[1].T @ p1[c * S]) + spec.c.jacobian(u1).T @ mu1[c]
        r2 = (T - tau) * (spec.f_jacobian(x2, u2)[1].T @ p2[c * S]) + spec.c.jacobian(u2).T @ mu2[c]
        stat = max(stat, float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))

    rows = {
        "transversality_p1": row_trans1,
        "transversality_p2": row_trans2,
        "lambda_terminal": row_lambda,
        "stationarity": stat,
    }
    return AugmentedCertificate(
        alpha=alpha,
        beta1=beta1,
        beta2=0.0,
        beta3=beta3,
        beta4=beta4,
        mu1=mu1,
        mu2=mu2,
        lam_path=lam_path,
        rows=rows,
        consistent=all(v <= row_tol for v in rows.values()),
    )


# -- exports ------------------------------------------------------------------


def certificate_to_json(cert: PontryaginCertificate, path, timestamp: bool = True) -> None:
    obj = {
        "alpha": cert.alpha,
        "gamma": [float(v) for v in cert.gamma],
        "tau": [float(v) for v in cert.tau],
        "directions": ["out" if d > 0 else "in" for d in cert.directions],
        "H_arc": [float(v) for v in cert.H_arc],
        "H0": cert.H0,
        "nu_min": float(cert.nu.min()) if cert.nu.size else 0.0,
        "nu_max": float(cert.nu.max()) if cert.nu.size else 0.0,
        "stationarity_residual_max": float(cert.nu_residuals.max()) if cert.nu_residuals.size else 0.0,
        "nu_rank_deficient_cells": list(cert.nu_rank_deficient),
        "nlp_gamma_gap": cert.nlp_gamma_gap,
    }
    write_json(path, obj, timestamp=timestamp)


def costate_to_csv(
    spec: ProblemSpec, solution: Solution, cert: PontryaginCertificate, path, timestamp: bool = True
) -> None:
    """Costate on the arc-aligned physical grid; crossing nodes appear twice
    with a side flag (-1 before, +1 after, 0 interior)."""
    times = solution.traj_norm.physical_times()
    nps = solution.traj_norm.nodes_per_arc
    header = ["t"] + [f"p_{i + 1}" for i in range(spec.n)] + ["side"]
    rows = []
    for a, p_arc in enumerate(cert.p_arcs):
        for k in range(p_arc.shape[0]):
            node = a * nps + k
            side = 0
            if a > 0 and k == 0:
                side = 1
            elif a < len(cert.p_arcs) - 1 and k == p_arc.shape[0] - 1:
                side = -1
            rows.append([float(times[node])] + [float(v) for v in p_arc[k]] + [side])
    write_csv(path, header, rows, timestamp=timestamp)
