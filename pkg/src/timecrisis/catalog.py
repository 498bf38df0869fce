"""Built-in test problems and the polynomial problem-config loader.

All catalog instances are scalar (n = m = 1) with dynamics xdot = u, crisis
set K = {x <= 0} and box controls |u| <= 1; they differ in the terminal
payoff and horizon.  Each ships with a stored solver initialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .maps import PolynomialMap
from .problem import ProblemSpec

__all__ = ["catalog", "catalog_names", "catalog_init", "SolverInit", "problem_from_dict", "load_problem"]

CATALOG_NAMES = ("linear_payoff_1d", "quad_payoff_1d", "double_crossing_1d")

_F_1D = [[(1.0, (0, 1))]]  # f(x, u) = u
_G_1D = [[(1.0, (1,))]]  # g(x) = x
_C_BOX = [
    [(1.0, (1,)), (-1.0, (0,))],  # u - 1
    [(-1.0, (1,)), (-1.0, (0,))],  # -u - 1
]
_PHI = {
    "linear_payoff_1d": [[(-2.0, (1,))]],  # -2x
    "quad_payoff_1d": [[(-2.0, (1,)), (0.5, (2,))]],  # -2x + x^2/2
    "double_crossing_1d": [[(1.0, (2,)), (2.0, (1,)), (1.0, (0,))]],  # (x+1)^2
}
_HORIZON = {"linear_payoff_1d": 2.0, "quad_payoff_1d": 2.0, "double_crossing_1d": 4.0}


def catalog_names() -> tuple[str, ...]:
    return CATALOG_NAMES


def catalog(name: str) -> ProblemSpec:
    """Return a built-in problem by name."""
    if name not in CATALOG_NAMES:
        raise KeyError(f"unknown catalog problem {name!r}; known: {', '.join(CATALOG_NAMES)}")
    return ProblemSpec(
        n=1,
        m=1,
        l=2,
        f=PolynomialMap(2, 1, _F_1D, name="f"),
        g=PolynomialMap(1, 1, _G_1D, name="g"),
        c=PolynomialMap(1, 2, _C_BOX, name="c"),
        phi=PolynomialMap(1, 1, _PHI[name], name="phi"),
        x0=np.array([-1.0]),
        T=_HORIZON[name],
        box=np.array([[-1.0, 1.0]]),
        name=name,
    )


@dataclass(frozen=True)
class SolverInit:
    """Stored initialization for the solve pipeline.

    ``kind == "normalized"``: start solve_fixed_structure at the constant
    control ``u_const`` with crossing guess ``tau``.  ``kind == "physical"``:
    start solve_time_crisis from the piecewise-constant control given by
    ``pieces`` = ((t_lo, t_hi, value), ...).
    """

    kind: str
    u_const: float = 0.0
    tau: tuple[float, ...] = ()
    pieces: tuple[tuple[float, float, float], ...] = ()


def catalog_init(name: str) -> SolverInit:
    """Stored initial guess for each catalog problem."""
    if name in ("linear_payoff_1d", "quad_payoff_1d"):
        return SolverInit(kind="normalized", u_const=0.5, tau=(1.5,))
    if name == "double_crossing_1d":
        # Two crossings at t = 1 and t = 2; terminal state -1.
        return SolverInit(
            kind="physical",
            pieces=((0.0, 1.5, 1.0), (1.5, 3.0, -1.0), (3.0, 4.0, 0.0)),
        )
    raise KeyError(f"unknown catalog problem {name!r}")


# -- config grammar ---------------------------------------------------------
#
# A problem config is a JSON object:
#   {
#     "name": "...",            optional
#     "n": 1, "m": 1, "l": 2,
#     "T": 2.0,
#     "x0": [-1.0],
#     "box": [[-1.0, 1.0]],     optional, one [lo, hi] per control dim
#     "f":   [[{"c": 1.0, "e": [0, 1]}]],
#     "g":   [[{"c": 1.0, "e": [1]}]],
#     "c":   [[...], [...]],
#     "phi": [[...]]
#   }
# Each map is a list over outputs; each output is a list of monomials
# {"c": coefficient, "e": exponent list}.  Exponents for f run over
# (x_1..x_n, u_1..u_m); g and phi take x only; c takes u only.


def _map_from_tables(tables, in_dim: int, out_dim: int, label: str) -> PolynomialMap:
    if len(tables) != out_dim:
        raise ValueError(f"map {label!r}: expected {out_dim} outputs, got {len(tables)}")
    rows = []
    for row in tables:
        terms = []
        for term in row:
            coef = float(term["c"])
            exps = tuple(int(e) for e in term["e"])
            if len(exps) != in_dim:
                raise ValueError(f"map {label!r}: exponent list must have length {in_dim}")
            terms.append((coef, exps))
        rows.append(terms)
    return PolynomialMap(in_dim, out_dim, rows, name=label)


def problem_from_dict(cfg: dict) -> ProblemSpec:
    """Build a ProblemSpec from a parsed config dictionary."""
    for key in ("n", "m", "l", "T", "x0", "f", "g", "c", "phi"):
        if key not in cfg:
            raise ValueError(f"problem config missing required key {key!r}")
    n, m, l = int(cfg["n"]), int(cfg["m"]), int(cfg["l"])
    box = None
    if cfg.get("box") is not None:
        box = np.asarray(cfg["box"], dtype=float)
    return ProblemSpec(
        n=n,
        m=m,
        l=l,
        f=_map_from_tables(cfg["f"], n + m, n, "f"),
        g=_map_from_tables(cfg["g"], n, 1, "g"),
        c=_map_from_tables(cfg["c"], m, l, "c"),
        phi=_map_from_tables(cfg["phi"], n, 1, "phi"),
        x0=np.asarray(cfg["x0"], dtype=float),
        T=float(cfg["T"]),
        box=box,
        name=str(cfg.get("name", "config")),
    )


def load_problem(path: str) -> ProblemSpec:
    """Load a ProblemSpec from a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))
