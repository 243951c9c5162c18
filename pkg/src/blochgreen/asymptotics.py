"""Leading-order Green's function asymptotics.

Two regimes are covered:

* gap interior, ``lam`` strictly inside a gap next to a nondegenerate edge at
  a symmetry point ``k0`` (exponential decay governed by ``beta_s``);
* spectral edge, ``lam`` equal to the edge value in ``d >= 3`` (power decay
  ``|a|^{2-d}``, anisotropy through the Hessian).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .continuation import DirectionSolve, solve_beta_s
from .crystal import AdditiveFunction, CoverPoint, CrystalModel, displacement
from .errors import (
    AssumptionViolated,
    DimensionTooLow,
    DirectionMismatch,
    PreconditionError,
    ZeroDisplacement,
)
from .floquet import EdgeData

__all__ = [
    "AsymptoticValue",
    "eval_gap_interior",
    "eval_edge",
    "eval_along_orbit",
    "gap_interior_from_solve",
    "edge_formula",
]

A5_TOL = 1e-6


@dataclass
class AsymptoticValue:
    """Leading term and its factors; ``value`` is the product of ``parts``."""

    value: complex
    parts: dict
    dist: float
    s: np.ndarray
    x: CoverPoint | None = None
    y: CoverPoint | None = None
    meta: dict = field(default_factory=dict)

    def product_of_parts(self) -> complex:
        out = 1.0 + 0j
        for v in self.parts.values():
            out *= v
        return out

    def row(self) -> dict:
        r = {"x": _fmt_point(self.x), "y": _fmt_point(self.y), "dist": self.dist,
             "abs_value": abs(self.value), "arg_value": float(np.angle(self.value))}
        for k, v in self.parts.items():
            r[f"{k}_re"] = complex(v).real
            r[f"{k}_im"] = complex(v).imag
        return r


def _fmt_point(p: CoverPoint | None) -> str:
    if p is None:
        return ""
    return f"{p.vertex}@" + ",".join(str(g) for g in p.deck)


def _check_symmetry_point(edge: EdgeData) -> None:
    dev = float(np.max(np.minimum(np.abs(edge.k0), np.abs(np.pi - np.abs(edge.k0)))))
    if dev > A5_TOL:
        raise AssumptionViolated("A5", dev, f"edge quasimomentum {edge.k0} is not in {{0, pi}}^d")


def gap_interior_from_solve(edge: EdgeData, solve: DirectionSolve, a: np.ndarray,
                            vx: int, vy: int) -> tuple[complex, dict]:
    """Leading term for displacement ``a`` and vertex indices ``vx, vy``."""
    d = a.size
    r = float(np.linalg.norm(a))
    st = solve.state
    phase = complex(np.exp(1j * (a @ edge.k0)))
    decay = float(np.exp(-(a @ solve.beta)))
    alg = (2 * np.pi * r) ** (-(d - 1) / 2) * solve.grad_norm ** ((d - 3) / 2) / math.sqrt(solve.proj_det)
    ratio = edge.sign * st.phi_plus[vx] * np.conj(st.phi_minus[vy]) / st.F
    parts = {"phase": phase, "decay": decay, "algebraic": alg, "ratio": complex(ratio)}
    return phase * decay * alg * complex(ratio), parts


def eval_gap_interior(model: CrystalModel, h: AdditiveFunction, edge: EdgeData,
                      solve: DirectionSolve, x: CoverPoint, y: CoverPoint,
                      align_tol: float = 1e-12) -> AsymptoticValue:
    """Gap-interior leading term at the pair ``(x, y)``.

    Parameters
    ----------
    solve : DirectionSolve
        Must be solved for ``s = (h(x) - h(y)) / |h(x) - h(y)|``.

    Raises
    ------
    DirectionMismatch
        If ``solve.s`` differs from the pair direction by more than ``align_tol``.
    DimensionTooLow
        For ``d < 2``.
    AssumptionViolated
        If the edge quasimomentum is not in ``{0, pi}^d``.
    PreconditionError
        For non-symmetric models or complex weights.
    """
    if model.d < 2:
        raise DimensionTooLow("gap-interior asymptotics need d >= 2")
    _check_symmetry_point(edge)
    if not model.symmetric or not model.is_real:
        raise PreconditionError("gap-interior asymptotics need a symmetric model with real weights")
    a = displacement(h, x, y)
    r = float(np.linalg.norm(a))
    if r == 0.0:
        raise ZeroDisplacement("h(x) equals h(y)")
    s = a / r
    if np.linalg.norm(s - solve.s) > align_tol:
        raise DirectionMismatch(f"pair direction {s} differs from solved direction {solve.s}")
    val, parts = gap_interior_from_solve(edge, solve, a, model.index[x.vertex], model.index[y.vertex])
    return AsymptoticValue(val, parts, r, s, x, y, {"lambda": solve.lam, "beta_s": solve.beta.tolist()})


def edge_formula(edge: EdgeData, a: np.ndarray, vx: int, vy: int) -> tuple[complex, dict]:
    d = a.size
    hinv_a = np.linalg.solve(edge.hessian, a)
    rho = math.sqrt(float(a @ hinv_a))
    phase = complex(np.exp(1j * (a @ edge.k0)))
    alg = math.gamma((d - 2) / 2) / (2 * np.pi ** (d / 2) * math.sqrt(np.linalg.det(edge.hessian))
                                     * rho ** (d - 2))
    phi = edge.phi
    ratio = edge.sign * phi[vx] * np.conj(phi[vy]) / float(np.real(np.vdot(phi, phi)))
    parts = {"phase": phase, "algebraic": alg, "ratio": complex(ratio)}
    return phase * alg * complex(ratio), parts


def eval_edge(model: CrystalModel, h: AdditiveFunction, edge: EdgeData,
              x: CoverPoint, y: CoverPoint) -> AsymptoticValue:
    """Leading term of the Green's function at the edge value, ``d >= 3``.

    Raises
    ------
    DimensionTooLow
        For ``d <= 2``.
    ZeroDisplacement
        For ``h(x) = h(y)`` (the leading term is singular there).
    """
    if model.d < 3:
        raise DimensionTooLow("edge asymptotics need d >= 3")
    a = displacement(h, x, y)
    r = float(np.linalg.norm(a))
    if r == 0.0:
        raise ZeroDisplacement("h(x) equals h(y)")
    val, parts = edge_formula(edge, a, model.index[x.vertex], model.index[y.vertex])
    return AsymptoticValue(val, parts, r, a / r, x, y, {"lambda": edge.lam_edge})


def eval_along_orbit(model: CrystalModel, h: AdditiveFunction, edge: EdgeData, lam: float,
                     x: CoverPoint, g_list) -> list[AsymptoticValue]:
    """Leading terms at the pairs ``(g . x, x)``, one solve per distinct direction."""
    cache: dict = {}
    out = []
    for g in g_list:
        g = np.asarray(g, dtype=int)
        if not np.any(g):
            raise ZeroDisplacement("deck element g = 0 has no direction")
        key = tuple((g // math.gcd(*[abs(int(c)) for c in g])).tolist())
        if key not in cache:
            s = g / np.linalg.norm(g)
            cache[key] = solve_beta_s(model, h, edge, lam, s)
        sol = cache[key]
        xg = x.translate(g)
        out.append(eval_gap_interior(model, h, edge, sol, xg, x))
    return out
