"""Continuation of an edge band to imaginary quasimomenta.

For a band minimum at ``k0`` the function ``E(beta) = lambda_j(k0 + i beta)``
is real and strictly concave near ``beta = 0``.  Its superlevel set
``K_lam = {E >= lam}`` is convex, and for a unit vector ``s`` the point
``beta_s`` on ``Gamma_lam = {E = lam}`` with outward normal ``s`` (that is,
``grad E(beta_s)`` antiparallel to ``s``) sets the exponential decay rate of
the Green's function in direction ``s``.

Everything here works with the working model ``sign * L`` of an
:class:`~blochgreen.floquet.EdgeData`, so the edge is always a minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from ._linalg import gauge, projected_det, simple_eigen_hessian, tangent_basis
from .crystal import (
    AdditiveFunction,
    CrystalModel,
    build_floquet_matrix,
    floquet_k_derivatives,
    floquet_k_second_derivatives,
)
from .errors import (
    BlochGreenError,
    BranchCollision,
    ComplexBranch,
    EigFailure,
    NoDescent,
    OutOfRegion,
    PairingDegenerate,
    PreconditionError,
)
from .floquet import EdgeData

__all__ = [
    "ContinuationState",
    "DirectionSolve",
    "track_eigenpair",
    "solve_beta_s",
    "continuation_radius",
    "gamma_fan_rows",
    "dispersion_value",
]

SIMPLE_TOL = 1e-10
REAL_TOL = 1e-10
PAIR_TOL = 1e-12


@dataclass
class ContinuationState:
    """Continued eigenpair at ``z = k0 + i beta`` (working convention)."""

    beta: np.ndarray
    E: float
    gradE: np.ndarray
    hessE: np.ndarray | None
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    F: complex
    k0: np.ndarray
    separation: float
    imag_E: float
    hess_error: float = float("nan")
    rho_max: float | None = None

    def as_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "E": self.E,
            "gradE": self.gradE.tolist(),
            "hessE": None if self.hessE is None else self.hessE.tolist(),
            "F": {"re": self.F.real, "im": self.F.imag},
            "separation": self.separation,
        }


@dataclass
class DirectionSolve:
    """``beta_s`` on the level set ``E = lam`` for direction ``s``."""

    s: np.ndarray
    lam: float
    beta: np.ndarray
    grad_norm: float
    proj_det: float
    state: ContinuationState
    residual: float
    iterations: int

    def as_dict(self) -> dict:
        return {
            "s": self.s.tolist(),
            "lambda": self.lam,
            "beta_s": self.beta.tolist(),
            "grad_norm": self.grad_norm,
            "proj_det": self.proj_det,
            "residual": self.residual,
        }


# ---------------------------------------------------------------------------
def _check_pre(model: CrystalModel, edge: EdgeData) -> None:
    if not model.symmetric:
        raise PreconditionError("continuation needs a symmetric model")


def _eig_all(mat: np.ndarray):
    try:
        w, vl, vr = sla.eig(mat, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigFailure(f"non-Hermitian eigensolver failed: {exc}") from exc
    return w, vl, vr


def _select(w, vl, vr, ref_vec, ref_val=None):
    """Index of the eigenpair best matching ``ref_vec`` and its overlap."""
    nr = np.linalg.norm(vr, axis=0)
    ov = np.abs(ref_vec.conj() @ vr) / (nr * np.linalg.norm(ref_vec))
    i = int(np.argmax(ov))
    return i, float(ov[i])


def _pair_at(work, h, k0, beta, ref_vec):
    """Eigenpair of ``L(k0 + i beta)`` continuing ``ref_vec``; no checks beyond selection."""
    mat = build_floquet_matrix(work, h, k0 + 1j * beta)
    if work.n == 1:
        e = complex(mat[0, 0])
        one = np.ones(1, dtype=complex)
        return e, one, one, np.inf, 1.0
    w, vl, vr = _eig_all(mat)
    i, ov = _select(w, vl, vr, ref_vec)
    others = np.delete(w, i)
    sep = float(np.min(np.abs(others - w[i])))
    return complex(w[i]), vr[:, i], vl[:, i], sep, ov


def _finish(work, h, k0, beta, e, vr, vl, sep, with_hess=True):
    """Build a :class:`ContinuationState`, checking simplicity, realness, pairing."""
    if sep < SIMPLE_TOL:
        raise BranchCollision(f"eigenvalue not simple at beta={beta} (separation {sep:.3e})",
                              beta=beta.tolist())
    scale = max(1.0, abs(e))
    if abs(e.imag) > REAL_TOL * scale:
        raise ComplexBranch(f"E(beta) not real at beta={beta}: imag={e.imag:.3e}",
                            beta=beta.tolist())
    phi_p = gauge(vr)
    phi_m = gauge(vl)
    F = complex(phi_m.conj() @ phi_p)
    if abs(F) < PAIR_TOL * np.linalg.norm(phi_p) * np.linalg.norm(phi_m):
        raise PairingDegenerate(f"pairing vanishes at beta={beta}", beta=beta.tolist())
    grad = _grad(work, h, k0, beta, phi_p, phi_m, F)
    st = ContinuationState(beta=np.array(beta, dtype=float), E=float(e.real), gradE=grad,
                           hessE=None, phi_plus=phi_p, phi_minus=phi_m, F=F,
                           k0=np.asarray(k0, dtype=float), separation=sep, imag_E=float(e.imag))
    if with_hess:
        st.hessE, st.hess_error = _hess(work, h, st)
    return st


def _grad(work, h, k0, beta, phi_p, phi_m, F):
    dk = floquet_k_derivatives(work, h, k0 + 1j * beta)
    # d/d beta_m = i d/dk_m
    g = 1j * np.einsum("i,mij,j->m", phi_m.conj(), dk, phi_p) / F
    return np.real(g)


def _grad_near(work, h, st, beta):
    e, vr, vl, sep, ov = _pair_at(work, h, st.k0, beta, st.phi_plus)
    if sep < SIMPLE_TOL:
        raise BranchCollision(f"eigenvalue not simple at beta={beta}")
    phi_p, phi_m = gauge(vr), gauge(vl)
    F = complex(phi_m.conj() @ phi_p)
    return _grad(work, h, st.k0, beta, phi_p, phi_m, F)


def _hess(work, h, st):
    k = st.k0 + 1j * st.beta
    mat = build_floquet_matrix(work, h, k)
    # d/d beta = i d/dk, so second partials pick up a factor -1
    d1 = 1j * floquet_k_derivatives(work, h, k)
    d2 = -floquet_k_second_derivatives(work, h, k)
    mu = np.conj(st.phi_minus) @ mat @ st.phi_plus / st.F
    hess, err = simple_eigen_hessian(mat, d1, d2, st.phi_plus, st.phi_minus, mu)
    return np.real(hess), err


def track_eigenpair(model: CrystalModel, h: AdditiveFunction, edge: EdgeData, beta,
                    start: ContinuationState | None = None, with_hess: bool = True,
                    _work: CrystalModel | None = None) -> ContinuationState:
    """Continue the edge eigenpair from ``beta = 0`` (or ``start``) to ``beta``.

    The path is the straight segment; steps adapt so that consecutive right
    eigenvectors overlap by at least 0.9 and the eigenvalue moves
    continuously.  The returned state is in the working convention of
    ``edge`` (edge value a minimum of ``E``).

    Raises
    ------
    BranchCollision
        Simplicity lost along the path (distance to other eigenvalues below 1e-10).
    ComplexBranch
        ``E`` acquires an imaginary part above 1e-10.
    PairingDegenerate
        ``|F| < 1e-12``.
    """
    _check_pre(model, edge)
    work = _work if _work is not None else edge.working_model(model)
    k0 = np.asarray(edge.k0, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if start is None:
        b0 = np.zeros_like(beta)
        vec = np.asarray(edge.phi, dtype=complex)
        e_prev = complex(edge.working_edge)
    else:
        b0 = np.asarray(start.beta, dtype=float)
        vec = start.phi_plus
        e_prev = complex(start.E)
    span = float(np.linalg.norm(beta - b0))

    if work.n > 1 and span > 0:
        t = 0.0
        dt = min(1.0, 0.2 / span)
        while t < 1.0:
            tn = min(1.0, t + dt)
            e, vr, vl, sep, ov = _pair_at(work, h, k0, b0 + tn * (beta - b0), vec)
            if sep < SIMPLE_TOL:
                raise BranchCollision(f"eigenvalue collision on the path at t={tn:.4f}",
                                      beta=(b0 + tn * (beta - b0)).tolist())
            jump = abs(e - e_prev)
            if (ov < 0.9 or jump > 0.5 * sep) and dt > 1e-6:
                dt *= 0.5
                continue
            if abs(e.imag) > REAL_TOL * max(1.0, abs(e)):
                raise ComplexBranch(f"E not real on the path at t={tn:.4f}: imag={e.imag:.3e}",
                                    beta=(b0 + tn * (beta - b0)).tolist())
            t, vec, e_prev = tn, vr, e
            dt = min(2 * dt, 1.0)
    e, vr, vl, sep, _ = _pair_at(work, h, k0, beta, vec)
    return _finish(work, h, k0, beta, e, vr, vl, sep, with_hess=with_hess)


def dispersion_value(model, h, edge, beta) -> float:
    """``E(beta)`` in the caller's convention (sign restored)."""
    st = track_eigenpair(model, h, edge, beta, with_hess=False)
    return edge.sign * st.E


def solve_beta_s(model: CrystalModel, h: AdditiveFunction, edge: EdgeData, lam: float, s,
                 tol: float = 1e-12, maxit: int = 60) -> DirectionSolve:
    """Solve ``E(beta) = lam`` with ``grad E(beta)`` antiparallel to ``s``.

    Damped Newton on ``(E - lam, B^T grad E)`` with ``B`` an orthonormal basis
    of the complement of ``s``, started from the paraboloid model of ``E``.
    ``lam`` is in the caller's convention.

    Raises
    ------
    OutOfRegion
        An iterate leaves the region where the branch is simple and real.
    NoDescent
        Damping exhausted or iteration limit reached.
    """
    _check_pre(model, edge)
    work = edge.working_model(model)
    lam_w = edge.sign * lam
    if not lam_w < edge.working_edge:
        raise PreconditionError(f"lambda={lam} is not on the gap side of the edge {edge.lam_edge}")
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    d = s.size
    B = tangent_basis(s)
    hinv_s = np.linalg.solve(edge.hessian, s)
    c = np.sqrt(2 * (edge.working_edge - lam_w) / (s @ hinv_s))
    beta = c * hinv_s

    def track(b, start):
        try:
            return track_eigenpair(model, h, edge, b, start=start, _work=work)
        except (BranchCollision, ComplexBranch, PairingDegenerate) as exc:
            raise OutOfRegion(f"iterate beta={b} left the continuation region: {exc}",
                              beta=np.asarray(b).tolist()) from exc

    def resid(st):
        return np.concatenate([[st.E - lam_w], B.T @ st.gradE])

    st = track(beta, None)
    r = resid(st)
    it = 0
    while True:
        # converged in the absolute sense, scaled by the size of the data
        if np.max(np.abs(r)) < tol * max(1.0, abs(lam_w)) and st.gradE @ s < 0:
            break
        if it >= maxit:
            raise NoDescent(f"no convergence after {maxit} iterations (residual {np.max(np.abs(r)):.3e})")
        J = np.vstack([st.gradE[None, :], B.T @ st.hessE])
        try:
            step = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise NoDescent(f"singular Newton matrix at beta={st.beta}") from exc
        t = 1.0
        nr = np.linalg.norm(r)
        while True:
            try:
                cand = track(st.beta + t * step, st)
                rc = resid(cand)
                if np.linalg.norm(rc) < (1 - 1e-4 * t) * nr or np.linalg.norm(rc) < tol:
                    break
            except OutOfRegion:
                if t < 1e-10:
                    raise
            t *= 0.5
            if t < 1e-10:
                raise NoDescent(f"damping exhausted at beta={st.beta}")
        st, r = cand, rc
        it += 1

    # one polishing step (quadratic convergence takes the residual to rounding level)
    J = np.vstack([st.gradE[None, :], B.T @ st.hessE])
    try:
        polished = track(st.beta - np.linalg.solve(J, r), st)
        if np.linalg.norm(resid(polished)) <= np.linalg.norm(r):
            st = polished
    except (np.linalg.LinAlgError, OutOfRegion):
        pass
    # final state: re-track from the origin for a path-certified eigenpair
    st = track_eigenpair(model, h, edge, st.beta, _work=work)
    r = resid(st)
    gnorm = float(np.linalg.norm(st.gradE))
    pd = projected_det(-st.hessE, s)
    return DirectionSolve(s=s, lam=lam, beta=st.beta, grad_norm=gnorm, proj_det=pd, state=st,
                          residual=float(np.max(np.abs(r))), iterations=it)


def continuation_radius(model, h, edge, u, rho_cap: float = 20.0, tol: float = 1e-3) -> float:
    """Largest ``rho <= rho_cap`` such that the branch continues to ``rho * u``.

    Bisection on the first failure of :func:`track_eigenpair`.
    """
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    work = edge.working_model(model)

    def ok(rho):
        try:
            track_eigenpair(model, h, edge, rho * u, with_hess=False, _work=work)
            return True
        except BlochGreenError:
            return False

    if ok(rho_cap):
        return rho_cap
    lo, hi = 0.0, rho_cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def gamma_fan_rows(model, h, edge, lam, directions) -> list[dict]:
    """Rows ``s_1..s_d, beta_1..beta_d, E, grad_norm, proj_det`` for CSV output."""
    rows = []
    for s in directions:
        sol = solve_beta_s(model, h, edge, lam, s)
        row = {f"s_{m + 1}": float(sol.s[m]) for m in range(sol.s.size)}
        row.update({f"beta_{m + 1}": float(sol.beta[m]) for m in range(sol.s.size)})
        row.update({"E": edge.sign * sol.state.E, "grad_norm": sol.grad_norm, "proj_det": sol.proj_det})
        rows.append(row)
    return rows
