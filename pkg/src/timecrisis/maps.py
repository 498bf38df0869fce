"""Differentiable vector maps with analytic derivative evaluators.

All problem data (dynamics, crisis-set level function, control constraints,
terminal payoff) is expressed as a :class:`SmoothMap` over a single flat
argument vector.  :class:`PolynomialMap` is the concrete representation used
by the built-in catalog and the config loader; its derivatives are exact and
it can be packed into flat arrays for the compiled kernels.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["SmoothMap", "PolynomialMap", "constant_map"]


class SmoothMap:
    """A C^1 or C^2 map R^in_dim -> R^out_dim with user-supplied derivatives.

    ``value(z) -> (out,)``, ``jacobian(z) -> (out, in)`` and, when
    ``order == 2``, ``hessian(z) -> (out, in, in)``.  Evaluators must be pure
    functions; instances are immutable and safe to share across threads.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        value: Callable[[np.ndarray], np.ndarray],
        jacobian: Callable[[np.ndarray], np.ndarray],
        hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        order: int = 1,
        name: str = "",
    ):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("map dimensions must be positive")
        if order not in (1, 2):
            raise ValueError("smoothness order must be 1 or 2")
        if order == 2 and hessian is None:
            raise ValueError("order-2 map requires a hessian evaluator")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self._value = value
        self._jacobian = jacobian
        self._hessian = hessian
        self.order = order
        self.name = name

    def value(self, z: np.ndarray) -> np.ndarray:
        out = np.asarray(self._value(np.asarray(z, dtype=float)), dtype=float)
        return out.reshape(self.out_dim)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        out = np.asarray(self._jacobian(np.asarray(z, dtype=float)), dtype=float)
        return out.reshape(self.out_dim, self.in_dim)

    def hessian(self, z: np.ndarray) -> np.ndarray:
        if self._hessian is None:
            raise ValueError(f"map {self.name!r} has no second derivatives (order 1)")
        out = np.asarray(self._hessian(np.asarray(z, dtype=float)), dtype=float)
        return out.reshape(self.out_dim, self.in_dim, self.in_dim)

    def __repr__(self) -> str:
        return f"SmoothMap({self.name or 'anonymous'}: R^{self.in_dim} -> R^{self.out_dim}, order {self.order})"


class PolynomialMap(SmoothMap):
    """Polynomial map given by per-output monomial tables.

    ``terms[o]`` is a sequence of ``(coef, exps)`` pairs where ``exps`` is a
    length-``in_dim`` tuple of nonnegative integer exponents.  Derivatives are
    exact, and the monomial tables can be packed into flat arrays consumed by
    the integration kernels.
    """

    def __init__(self, in_dim: int, out_dim: int, terms, name: str = ""):
        norm: list[tuple[tuple[float, tuple[int, ...]], ...]] = []
        if len(terms) != out_dim:
            raise ValueError(f"expected {out_dim} outputs, got {len(terms)}")
        for row in terms:
            out_row = []
            for coef, exps in row:
                exps = tuple(int(e) for e in exps)
                if len(exps) != in_dim:
                    raise ValueError("exponent tuple length does not match in_dim")
                if any(e < 0 for e in exps):
                    raise ValueError("exponents must be nonnegative")
                out_row.append((float(coef), exps))
            norm.append(tuple(out_row))
        self.terms = tuple(norm)
        super().__init__(
            in_dim,
            out_dim,
            self._poly_value,
            self._poly_jacobian,
            self._poly_hessian,
            order=2,
            name=name,
        )

    @property
    def degree(self) -> int:
        return max((sum(e) for row in self.terms for _, e in row), default=0)

    def _poly_value(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(self.out_dim)
        for o, row in enumerate(self.terms):
            acc = 0.0
            for coef, exps in row:
                p = coef
                for i, e in enumerate(exps):
                    for _ in range(e):
                        p *= z[i]
                acc += p
            out[o] = acc
        return out

    def _poly_jacobian(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros((self.out_dim, self.in_dim))
        for o, row in enumerate(self.terms):
            for coef, exps in row:
                for k, ek in enumerate(exps):
                    if ek == 0:
                        continue
                    p = coef * ek
                    for i, e in enumerate(exps):
                        n = e - 1 if i == k else e
                        for _ in range(n):
                            p *= z[i]
                    out[o, k] += p
        return out

    def _poly_hessian(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros((self.out_dim, self.in_dim, self.in_dim))
        for o, row in enumerate(self.terms):
            for coef, exps in row:
                for k, ek in enumerate(exps):
                    if ek == 0:
                        continue
                    for j, ej in enumerate(exps):
                        mult = ek * (ek - 1) if j == k else ek * ej
                        if mult == 0:
                            continue
                        p = coef * mult
                        for i, e in enumerate(exps):
                            n = e
                            if i == k:
                                n -= 1
                            if i == j:
                                n -= 1
                            for _ in range(n):
                                p *= z[i]
                        out[o, k, j] += p
        return out

    def pack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flatten the monomial tables for the compiled kernels.

        Returns ``(offsets, coefs, exps)``: output ``o`` owns the terms in
        ``[offsets[o], offsets[o+1])``.
        """
        offsets = [0]
        coefs: list[float] = []
        exps: list[tuple[int, ...]] = []
        for row in self.terms:
            for coef, e in row:
                coefs.append(coef)
                exps.append(e)
            offsets.append(len(coefs))
        return (
            np.asarray(offsets, dtype=np.int32),
            np.asarray(coefs, dtype=np.float64),
            np.asarray(exps, dtype=np.int32).reshape(len(coefs), self.in_dim),
        )

    def __repr__(self) -> str:
        return f"PolynomialMap({self.name or 'anonymous'}: R^{self.in_dim} -> R^{self.out_dim}, degree {self.degree})"


def constant_map(in_dim: int, values: Sequence[float], name: str = "") -> PolynomialMap:
    """Polynomial map with constant output."""
    zero = tuple(0 for _ in range(in_dim))
    return PolynomialMap(in_dim, len(values), [[(v, zero)] for v in values], name=name)
