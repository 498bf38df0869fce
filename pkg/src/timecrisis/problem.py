"""Problem data model and data-level regularity checks.

A time-crisis instance is the tuple (f, g, c, phi, U, x0, T): dynamics f on
R^n x R^m, crisis set K = {g <= 0}, control set U = {c <= 0} with l
inequality rows, terminal payoff phi, initial state x0 and horizon T.  All
maps are :class:`~timecrisis.maps.SmoothMap` instances over flat argument
vectors (f takes the concatenation (x, u)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .maps import SmoothMap

__all__ = [
    "ProblemSpec",
    "ActiveSet",
    "ValidationReport",
    "LIGReport",
    "validate_spec",
    "check_LIG",
]

#: Default absolute threshold on c-values for activity decisions.
ACTIVE_SET_DELTA = 1e-6


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable problem instance.  Dimensions are validated at construction;
    value-level regularity (derivative consistency, interior start) is the
    job of :func:`validate_spec`."""

    n: int
    m: int
    l: int
    f: SmoothMap
    g: SmoothMap
    c: SmoothMap
    phi: SmoothMap
    x0: np.ndarray
    T: float
    box: Optional[np.ndarray] = None  # (m, 2) hull of U for sampling/projection
    name: str = ""

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"nonpositive horizon T = {self.T}")
        if self.n < 1 or self.m < 1 or self.l < 1:
            raise ValueError("dimensions n, m, l must be positive")
        dims = {
            "f": (self.f, self.n + self.m, self.n),
            "g": (self.g, self.n, 1),
            "c": (self.c, self.m, self.l),
            "phi": (self.phi, self.n, 1),
        }
        for label, (mp, din, dout) in dims.items():
            if mp.in_dim != din or mp.out_dim != dout:
                raise ValueError(
                    f"map {label}: expected R^{din} -> R^{dout}, "
                    f"got R^{mp.in_dim} -> R^{mp.out_dim}"
                )
        x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        if self.box is not None:
            box = np.asarray(self.box, dtype=float).reshape(self.m, 2)
            if np.any(box[:, 0] >= box[:, 1]):
                raise ValueError("box hull must have lo < hi per control dimension")
            box.flags.writeable = False
            object.__setattr__(self, "box", box)

    # -- convenience evaluators ------------------------------------------

    def f_value(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.f.value(np.concatenate([x, u]))

    def f_jacobian(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        J = self.f.jacobian(np.concatenate([x, u]))
        return J[:, : self.n], J[:, self.n :]

    def g_value(self, x: np.ndarray) -> float:
        return float(self.g.value(x)[0])

    def g_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.g.jacobian(x)[0]

    def phi_value(self, x: np.ndarray) -> float:
        return float(self.phi.value(x)[0])

    def phi_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.phi.jacobian(x)[0]


@dataclass(frozen=True)
class ActiveSet:
    """Index sets of near-active control constraints along a cell grid.

    ``indices[k]`` lists the constraints with c_i(u_k) >= -delta for cell k.
    Setwise monotone nonincreasing in delta for fixed k.
    """

    delta: float
    indices: tuple[tuple[int, ...], ...]

    @staticmethod
    def from_controls(spec: ProblemSpec, u_cells: np.ndarray, delta: float = ACTIVE_SET_DELTA) -> "ActiveSet":
        if delta < 0:
            raise ValueError("active-set threshold must be nonnegative")
        idx = []
        for u in np.atleast_2d(u_cells):
            cv = spec.c.value(u)
            idx.append(tuple(int(i) for i in np.flatnonzero(cv >= -delta)))
        return ActiveSet(delta=delta, indices=tuple(idx))


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of numerical consistency checks on a ProblemSpec."""

    jacobian_mismatch: dict  # map label -> max relative mismatch
    hessian_mismatch: dict  # map label -> max relative mismatch (order-2 maps)
    flags: tuple[str, ...]
    jac_tol: float = 1e-5
    hess_tol: float = 1e-4

    @property
    def ok(self) -> bool:
        if self.flags:
            return False
        if any(v > self.jac_tol for v in self.jacobian_mismatch.values()):
            return False
        return not any(v > self.hess_tol for v in self.hessian_mismatch.values())

    def summary(self) -> str:
        lines = []
        for label, v in self.jacobian_mismatch.items():
            mark = "ok" if v <= self.jac_tol else "FAIL"
            lines.append(f"jacobian[{label}] mismatch {v:.3e} [{mark}]")
        for label, v in self.hessian_mismatch.items():
            mark = "ok" if v <= self.hess_tol else "FAIL"
            lines.append(f"hessian[{label}] mismatch {v:.3e} [{mark}]")
        lines.extend(f"flag: {fl}" for fl in self.flags)
        return "\n".join(lines)


def _fd_jacobian(mp: SmoothMap, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.empty((mp.out_dim, mp.in_dim))
    for i in range(mp.in_dim):
        step = h * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += step
        zm[i] -= step
        out[:, i] = (mp.value(zp) - mp.value(zm)) / (2.0 * step)
    return out


def _fd_hessian(mp: SmoothMap, z: np.ndarray, h: float = 1e-5) -> np.ndarray:
    out = np.empty((mp.out_dim, mp.in_dim, mp.in_dim))
    for i in range(mp.in_dim):
        step = h * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += step
        zm[i] -= step
        out[:, :, i] = (mp.jacobian(zp) - mp.jacobian(zm)) / (2.0 * step)
    return out


def validate_spec(spec: ProblemSpec, samples: int = 20, seed: int = 0) -> ValidationReport:
    """Check analytic derivatives against central finite differences at
    randomly sampled points and flag data-level assumption violations.

    Derivative mismatches above tolerance are reported, not raised; only
    structurally broken specs (dimension errors) fail at construction.
    """
    rng = np.random.default_rng(seed)
    flags: list[str] = []
    if spec.g_value(spec.x0) >= 0:
        flags.append(f"g(x0) = {spec.g_value(spec.x0):.6g} >= 0: initial state not interior to K")

    def sample_x() -> np.ndarray:
        return spec.x0 + rng.uniform(-1.0, 1.0, size=spec.n)

    def sample_u() -> np.ndarray:
        if spec.box is not None:
            return rng.uniform(spec.box[:, 0], spec.box[:, 1])
        return rng.uniform(-1.0, 1.0, size=spec.m)

    points = {
        "f": [np.concatenate([sample_x(), sample_u()]) for _ in range(samples)],
        "g": [sample_x() for _ in range(samples)],
        "c": [sample_u() for _ in range(samples)],
        "phi": [sample_x() for _ in range(samples)],
    }
    jac_mis: dict[str, float] = {}
    hess_mis: dict[str, float] = {}
    for label, mp in (("f", spec.f), ("g", spec.g), ("c", spec.c), ("phi", spec.phi)):
        worst = 0.0
        worst_h = 0.0
        for z in points[label]:
            ana = mp.jacobian(z)
            fd = _fd_jacobian(mp, z)
            worst = max(worst, float(np.max(np.abs(ana - fd) / np.maximum(1.0, np.abs(fd)))))
            if mp.order == 2:
                ana_h = mp.hessian(z)
                fd_h = _fd_hessian(mp, z)
                worst_h = max(
                    worst_h,
                    float(np.max(np.abs(ana_h - fd_h) / np.maximum(1.0, np.abs(fd_h)))),
                )
        jac_mis[label] = worst
        if mp.order == 2:
            hess_mis[label] = worst_h
    return ValidationReport(jacobian_mismatch=jac_mis, hessian_mismatch=hess_mis, flags=tuple(flags))


@dataclass(frozen=True)
class LIGReport:
    ok: bool
    margin: float  # min over grid cells of smallest singular value; +inf if never active
    worst_cell: int = -1


def check_LIG(
    spec: ProblemSpec,
    controls,
    delta: float = ACTIVE_SET_DELTA,
    eps: float = 1e-6,
) -> LIGReport:
    """Uniform linear independence of active control-constraint gradients.

    ``controls`` is a (C, m) array of per-cell control values (a ControlSignal
    works too).  Returns the minimum over cells of the smallest singular value
    of the active-row Jacobian of c, and whether it clears ``eps``.  An empty
    active set everywhere yields margin +inf.
    """
    values = getattr(controls, "values", controls)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    margin = np.inf
    worst = -1
    for k, u in enumerate(values):
        cv = spec.c.value(u)
        active = np.flatnonzero(cv >= -delta)
        if active.size == 0:
            continue
        if active.size > spec.m:
            # more active gradients than control dimensions: never injective
            smin = 0.0
        else:
            rows = spec.c.jacobian(u)[active]
            smin = float(np.linalg.svd(rows, compute_uv=False)[-1])
        if smin < margin:
            margin = smin
            worst = k
    return LIGReport(ok=bool(margin >= eps), margin=float(margin), worst_cell=worst)
