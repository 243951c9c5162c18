"""Nonsymmetric (Perron) theory.

For a model in Perron mode (strictly negative real hopping weights on a
strongly connected quotient) the matrix ``A(i beta)`` has entries
``delta pot + sum w exp(-beta . tau)`` and, after the shift ``S I - A`` with
``S`` above every diagonal entry, is nonnegative and irreducible.  Its
principal eigenvalue

    Lambda(beta) = S - spectral_radius(S I - A(i beta))

carries strictly positive left and right eigenvectors, is real analytic and
strictly concave.  Its maximum ``Lambda_A = Lambda(beta_0)`` is the
generalized principal eigenvalue.  Below ``Lambda_A`` the level set
``Gamma_lam = {Lambda = lam}`` parametrizes the exponential decay of the
minimal Green's function and the Martin boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._linalg import projected_det, simple_eigen_hessian, tangent_basis
from .crystal import (
    AdditiveFunction,
    CoverPoint,
    CrystalModel,
    Edge,
    build_floquet_matrix,
    displacement,
    floquet_k_derivatives,
    floquet_k_second_derivatives,
    is_strongly_connected,
)
from .errors import (
    BadSign,
    ConfigError,
    DimensionTooLow,
    EigFailure,
    NoConvergence,
    NoDescent,
    OutOfRegion,
    PreconditionError,
    Reducible,
    ZeroDisplacement,
)

__all__ = [
    "PerronState",
    "LevelSolve",
    "MartinCheck",
    "perron_dispersion",
    "find_beta0",
    "solve_gamma_level",
    "eval_nonsymmetric_asymptotics",
    "martin_kernel_check",
    "conjugated_model",
    "green_at_principal",
    "multiplicative_solution",
    "minimal_solution_residual",
    "rational_direction",
]

POSITIVITY_TOL = 1e-14
LEVEL_TOL = 1e-10


@dataclass
class PerronState:
    """Principal eigen-data of ``A(i beta)``; ``right`` and ``left`` are positive."""

    beta: np.ndarray
    Lam: float
    right: np.ndarray
    left: np.ndarray
    gradLam: np.ndarray
    hessLam: np.ndarray | None = None
    hess_error: float = float("nan")

    @property
    def pairing(self) -> float:
        return float(self.left @ self.right)

    def as_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "Lambda": self.Lam,
            "right": self.right.tolist(),
            "left": self.left.tolist(),
            "gradLambda": self.gradLam.tolist(),
            "hessLambda": None if self.hessLam is None else self.hessLam.tolist(),
        }


@dataclass
class LevelSolve:
    """``beta_s`` on ``Gamma_lam`` with outward normal ``s``."""

    s: np.ndarray
    lam: float
    beta: np.ndarray
    grad_norm: float
    proj_det: float
    state: PerronState
    residual: float
    iterations: int

    def as_dict(self) -> dict:
        return {"s": self.s.tolist(), "lambda": self.lam, "beta_s": self.beta.tolist(),
                "grad_norm": self.grad_norm, "proj_det": self.proj_det,
                "residual": self.residual, "iterations": self.iterations}


@dataclass
class MartinCheck:
    """Martin-kernel samples along the ray ``y_m = (v, -m g_s)``."""

    x: CoverPoint
    x0: CoverPoint
    s: np.ndarray
    g_s: tuple[int, ...]
    lam: float
    m_values: list
    kernels: list
    predicted: float
    case: str
    meta: dict = field(default_factory=dict)

    @property
    def errors(self) -> list[float]:
        return [abs(k - self.predicted) for k in self.kernels]

    @property
    def decreasing(self) -> bool:
        e = self.errors
        return all(b < a for a, b in zip(e, e[1:]))

    def rows(self) -> list[dict]:
        return [{"m": m, "kernel": k, "predicted": self.predicted, "absError": e}
                for m, k, e in zip(self.m_values, self.kernels, self.errors)]


# ---------------------------------------------------------------------------
def _check_perron(model: CrystalModel) -> None:
    w = model.weights
    if np.any(w.imag != 0) or np.any(~(w.real < 0)):
        raise BadSign("Perron dispersion needs strictly negative real weights")
    if not is_strongly_connected(model):
        raise Reducible("directed quotient graph is not strongly connected")


def _positive(v: np.ndarray, what: str) -> np.ndarray:
    v = np.real(v)
    v = v / v[int(np.argmax(np.abs(v)))]
    if not np.all(v > POSITIVITY_TOL):
        raise EigFailure(f"{what} Perron vector not strictly positive: min {v.min():.3e}")
    return v


def _perron_pair(model, h, beta, S):
    A = np.real(build_floquet_matrix(model, h, 1j * np.asarray(beta, dtype=float)))
    M = S * np.eye(model.n) - A
    if model.n == 1:
        one = np.ones(1)
        return float(S - M[0, 0]), one, one
    w, vr = np.linalg.eig(M)
    i = int(np.argmax(w.real))
    wl, vl = np.linalg.eig(M.T)
    il = int(np.argmax(wl.real))
    return float(S - w[i].real), _positive(vr[:, i], "right"), _positive(vl[:, il], "left")


def _perron_grad(model, h, beta, right, left) -> np.ndarray:
    # d/d beta of A(i beta) is i d/dk L at k = i beta
    dA = np.real(1j * floquet_k_derivatives(model, h, 1j * np.asarray(beta, dtype=float)))
    return np.einsum("i,dij,j->d", left, dA, right) / float(left @ right)


def perron_dispersion(model: CrystalModel, h: AdditiveFunction, beta,
                      with_hess: bool = True) -> PerronState:
    """Principal eigenvalue ``Lambda(beta)`` of ``A(i beta)`` with its derivatives.

    The gradient follows from the Hellmann-Feynman formula with the positive
    left and right vectors; the Hessian from second-order perturbation
    theory.

    Raises
    ------
    BadSign
        A weight is not strictly negative real.
    Reducible
        The directed quotient is not strongly connected.
    """
    _check_perron(model)
    beta = np.asarray(beta, dtype=float).reshape(model.d)
    S = model.weight_bound()
    lam, r, l_ = _perron_pair(model, h, beta, S)
    grad = _perron_grad(model, h, beta, r, l_)
    hess, herr = None, float("nan")
    if with_hess:
        k = 1j * beta
        A = np.real(build_floquet_matrix(model, h, k))
        d1 = np.real(1j * floquet_k_derivatives(model, h, k))
        d2 = np.real(-floquet_k_second_derivatives(model, h, k))
        hc, herr = simple_eigen_hessian(A, d1, d2, r, l_, lam)
        hess = np.real(hc)
    return PerronState(beta, lam, r, l_, grad, hess, herr)


def find_beta0(model: CrystalModel, h: AdditiveFunction, tol: float = 1e-12,
               maxit: int = 100) -> tuple[np.ndarray, float]:
    """Maximizer ``beta_0`` of ``Lambda`` and ``Lambda_A = Lambda(beta_0)``.

    Damped Newton on ``grad Lambda`` from ``beta = 0``.

    Raises
    ------
    NoConvergence
        ``|grad Lambda| >= tol`` after ``maxit`` iterations.
    """
    st = perron_dispersion(model, h, np.zeros(model.d))
    for _ in range(maxit):
        if np.linalg.norm(st.gradLam) < tol:
            return st.beta, st.Lam
        try:
            step = -np.linalg.solve(st.hessLam, st.gradLam)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular Hessian at beta={st.beta}") from exc
        if st.gradLam @ step <= 0:
            step = st.gradLam.copy()
        t = 1.0
        while t > 1e-12:
            cand = perron_dispersion(model, h, st.beta + t * step)
            if cand.Lam >= st.Lam - 1e-14 * max(1.0, abs(st.Lam)) or \
                    np.linalg.norm(cand.gradLam) < np.linalg.norm(st.gradLam):
                break
            t *= 0.5
        st = cand
    raise NoConvergence(f"|grad Lambda| = {np.linalg.norm(st.gradLam):.3e} after {maxit} iterations")


def solve_gamma_level(model: CrystalModel, h: AdditiveFunction, lam: float, s,
                      tol: float = 1e-12, maxit: int = 80, beta0=None) -> LevelSolve:
    """Point ``beta_s`` of ``Gamma_lam`` where ``grad Lambda`` is antiparallel to ``s``.

    Newton on ``(Lambda - lam, B^T grad Lambda)`` started from the quadratic
    model of ``Lambda`` about ``beta_0``, with backtracking on the residual.
    At ``lam = Lambda_A`` the level set is the single point ``beta_0``.

    Raises
    ------
    PreconditionError
        ``lam > Lambda_A``.
    OutOfRegion
        Backtracking exhausted.
    NoDescent
        Iteration limit reached.
    """
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    if beta0 is None:
        beta0, lam_a = find_beta0(model, h)
    else:
        beta0 = np.asarray(beta0, dtype=float)
        lam_a = perron_dispersion(model, h, beta0, with_hess=False).Lam
    if lam > lam_a + LEVEL_TOL * max(1.0, abs(lam_a)):
        raise PreconditionError(f"lambda={lam} exceeds Lambda_A={lam_a}")
    st0 = perron_dispersion(model, h, beta0)
    H = -st0.hessLam
    if abs(lam - lam_a) <= LEVEL_TOL * max(1.0, abs(lam_a)):
        return LevelSolve(s, lam, beta0, 0.0, projected_det(H, s), st0, abs(st0.Lam - lam), 0)
    B = tangent_basis(s)
    hinv_s = np.linalg.solve(H, s)
    beta = beta0 + math.sqrt(2 * (lam_a - lam) / (s @ hinv_s)) * hinv_s

    def resid(st):
        return np.concatenate([[st.Lam - lam], B.T @ st.gradLam])

    st = perron_dispersion(model, h, beta)
    r = resid(st)
    it = 0
    while not (np.max(np.abs(r)) < tol * max(1.0, abs(lam)) and st.gradLam @ s < 0):
        if it >= maxit:
            raise NoDescent(f"no convergence after {maxit} iterations (residual {np.max(np.abs(r)):.3e})")
        J = np.vstack([st.gradLam[None, :], B.T @ st.hessLam])
        step = -np.linalg.solve(J, r)
        t, nr = 1.0, np.linalg.norm(r)
        while True:
            cand = perron_dispersion(model, h, st.beta + t * step)
            rc = resid(cand)
            if np.linalg.norm(rc) < (1 - 1e-4 * t) * nr or np.linalg.norm(rc) < tol:
                break
            t *= 0.5
            if t < 1e-10:
                raise OutOfRegion(f"backtracking exhausted at beta={st.beta}")
        st, r = cand, rc
        it += 1
    return LevelSolve(s, lam, st.beta, float(np.linalg.norm(st.gradLam)),
                      projected_det(-st.hessLam, s), st, float(np.max(np.abs(r))), it)


# ---------------------------------------------------------------------------
def _at_principal(lam: float, lam_a: float) -> bool:
    return abs(lam - lam_a) <= LEVEL_TOL * max(1.0, abs(lam_a))


def eval_nonsymmetric_asymptotics(model: CrystalModel, h: AdditiveFunction, lam: float,
                                  x: CoverPoint, y: CoverPoint, solve: LevelSolve | None = None,
                                  beta0=None):
    """Leading term of the minimal Green's function of ``A - lam``.

    Below ``Lambda_A`` (``d >= 2``) the decay is ``exp(-a . beta_s)`` with
    ``s = a / |a|``, ``a = h(x) - h(y)``; at ``Lambda_A`` (``d >= 3``) it is
    ``exp(-a . beta_0) |H^{-1/2} a|^{2-d}`` with ``H = -hess Lambda(beta_0)``.

    Raises
    ------
    DimensionTooLow
        ``d < 2`` below ``Lambda_A`` or ``d < 3`` at ``Lambda_A``.
    ZeroDisplacement
        ``h(x) = h(y)``.
    PreconditionError
        ``lam > Lambda_A``.
    """
    from .asymptotics import AsymptoticValue

    a = displacement(h, x, y)
    r = float(np.linalg.norm(a))
    if r == 0.0:
        raise ZeroDisplacement("h(x) equals h(y)")
    s = a / r
    if beta0 is None:
        beta0, lam_a = find_beta0(model, h)
    else:
        beta0 = np.asarray(beta0, dtype=float)
        lam_a = perron_dispersion(model, h, beta0, with_hess=False).Lam
    vx, vy = model.index[x.vertex], model.index[y.vertex]
    d = model.d
    if _at_principal(lam, lam_a):
        if d < 3:
            raise DimensionTooLow("the Green's function at Lambda_A exists only for d >= 3")
        st = perron_dispersion(model, h, beta0)
        H = -st.hessLam
        rho = math.sqrt(float(a @ np.linalg.solve(H, a)))
        decay = float(np.exp(-(a @ beta0)))
        alg = math.gamma((d - 2) / 2) / (2 * np.pi ** (d / 2) * math.sqrt(np.linalg.det(H)) * rho ** (d - 2))
        ratio = st.right[vx] * st.left[vy] / st.pairing
        parts = {"decay": decay, "algebraic": alg, "ratio": ratio}
        meta = {"lambda": lam, "case": "principal", "beta_0": beta0.tolist()}
    else:
        if lam > lam_a:
            raise PreconditionError(f"lambda={lam} exceeds Lambda_A={lam_a}")
        if d < 2:
            raise DimensionTooLow("the algebraic prefactor needs d >= 2")
        if solve is None or np.linalg.norm(solve.s - s) > 1e-12 or solve.lam != lam:
            solve = solve_gamma_level(model, h, lam, s, beta0=beta0)
        st = solve.state
        decay = float(np.exp(-(a @ solve.beta)))
        alg = (2 * np.pi * r) ** (-(d - 1) / 2) * solve.grad_norm ** ((d - 3) / 2) / math.sqrt(solve.proj_det)
        ratio = st.right[vx] * st.left[vy] / st.pairing
        parts = {"decay": decay, "algebraic": alg, "ratio": ratio}
        meta = {"lambda": lam, "case": "below", "beta_s": solve.beta.tolist()}
    val = decay * alg * ratio
    return AsymptoticValue(complex(val), {k: complex(v) for k, v in parts.items()}, r, s, x, y, meta)


# ---------------------------------------------------------------------------
def multiplicative_solution(h: AdditiveFunction, state: PerronState, x: CoverPoint) -> float:
    """``u(x) = exp(-beta . h(x)) phi_beta(v(x))``, a positive solution of ``A u = Lambda u``."""
    return float(np.exp(-(state.beta @ h(x))) * state.right[h.index[x.vertex]])


def minimal_solution_residual(model: CrystalModel, h: AdditiveFunction, state: PerronState,
                              points) -> float:
    """Largest relative residual of ``(A - Lambda(beta)) u`` at the given cover points.

    Each residual is divided by the sum of the moduli of the terms entering it.
    """
    worst = 0.0
    for x in points:
        v = x.vertex
        terms = [model.potential[model.index[v]] * multiplicative_solution(h, state, x),
                 -state.Lam * multiplicative_solution(h, state, x)]
        for e in model.edges:
            if e.src == v:
                terms.append(complex(e.weight).real *
                             multiplicative_solution(h, state, CoverPoint(e.dst, x.translate(e.shift).deck)))
        worst = max(worst, abs(sum(terms)) / sum(abs(t) for t in terms))
    return worst


def conjugated_model(model: CrystalModel, h: AdditiveFunction, beta) -> CrystalModel:
    """Model with weights ``w exp(-beta . tau)``: the operator ``e^{beta.h} A e^{-beta.h}``."""
    beta = np.asarray(beta, dtype=float)
    tau = h.edge_displacements(model)
    fac = np.exp(-(tau @ beta))
    edges = tuple(Edge(e.src, e.dst, e.shift, complex(e.weight) * float(f))
                  for e, f in zip(model.edges, fac))
    return CrystalModel(model.d, model.vertices, edges, model.potential, False,
                        (model.name + ":conj") if model.name else "conj", model.validated)


def green_at_principal(model: CrystalModel, h: AdditiveFunction, x: CoverPoint, y: CoverPoint,
                       beta0=None, **edge_kw) -> float:
    """Minimal Green's function of ``A - Lambda_A`` (``d >= 3``) by ``eps`` extrapolation.

    The conjugated operator has its principal eigenvalue at ``k = 0`` with
    ``Hessian = -hess Lambda(beta_0)``; its edge limit is rescaled by
    ``exp(-beta_0 . a)``.
    """
    from .floquet import AssumptionReport, EdgeData
    from .oracle import green_edge_limit

    if model.d < 3:
        raise DimensionTooLow("the Green's function at Lambda_A exists only for d >= 3")
    if beta0 is None:
        beta0, _ = find_beta0(model, h)
    beta0 = np.asarray(beta0, dtype=float)
    st = perron_dispersion(model, h, beta0)
    conj = conjugated_model(model, h, beta0)
    edge = EdgeData(1, "lower", np.zeros(model.d), st.Lam, -st.hessLam, st.right.astype(complex),
                    1.0, 1, st.hess_error, float("nan"), AssumptionReport())
    a = displacement(h, x, y)
    return float(np.exp(-(beta0 @ a))) * green_edge_limit(conj, h, edge, x, y, **edge_kw)


def rational_direction(s, max_den: int = 64, tol: float = 1e-12) -> tuple[int, ...]:
    """Primitive integer vector ``g`` with ``g / |g| = s``.

    Raises
    ------
    ConfigError
        No such vector with entries of denominator at most ``max_den``.
    """
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    ref = s / np.max(np.abs(s))
    fr = [Fraction(float(c)).limit_denominator(max_den) for c in ref]
    den = math.lcm(*[f.denominator for f in fr])
    g = np.array([int(f * den) for f in fr])
    gg = math.gcd(*[abs(int(c)) for c in g])
    g = g // gg
    if np.linalg.norm(g / np.linalg.norm(g) - s) > tol:
        raise ConfigError(f"direction {s.tolist()} is not rational within denominator {max_den}")
    return tuple(int(c) for c in g)


def martin_kernel_check(model: CrystalModel, h: AdditiveFunction, lam: float, x: CoverPoint,
                        x0: CoverPoint, s, m_values=(10, 20, 40), spec=None,
                        edge_kw: dict | None = None) -> MartinCheck:
    """Sample ``K(x, y_m) = G(x, y_m) / G(x0, y_m)`` along ``y_m = (v(x0), -m g_s)``.

    With ``h(x) - h(y_m)`` pointing along ``s`` the kernel tends to
    ``exp(-(h(x) - h(x0)) . beta_s) phi(v(x)) / phi(v(x0))``.  Below
    ``Lambda_A`` the Green's function comes from the shifted-contour
    trapezoid rule; at ``Lambda_A`` (``d >= 3``) every ray has the limit
    built from ``beta_0``, and the Green's function comes from
    :func:`green_at_principal`.
    """
    from .oracle import green_quadrature

    g = rational_direction(s)
    s = np.asarray(g, dtype=float) / np.linalg.norm(g)
    beta0, lam_a = find_beta0(model, h)
    principal = _at_principal(lam, lam_a)
    if principal:
        if model.d < 3:
            raise DimensionTooLow("the Martin boundary at Lambda_A needs d >= 3")
        st = perron_dispersion(model, h, beta0)
    else:
        if lam > lam_a:
            raise PreconditionError(f"lambda={lam} exceeds Lambda_A={lam_a}")
        st = solve_gamma_level(model, h, lam, s, beta0=beta0).state
    pred = float(np.exp(-(st.beta @ (h(x) - h(x0)))) * st.right[h.index[x.vertex]]
                 / st.right[h.index[x0.vertex]])
    kernels = []
    for m in m_values:
        y = CoverPoint.of(x0.vertex, tuple(-m * c for c in g))
        if principal:
            kw = edge_kw or {}
            gx = green_at_principal(model, h, x, y, beta0, **kw)
            g0 = green_at_principal(model, h, x0, y, beta0, **kw)
        else:
            gx = green_quadrature(model, h, lam, x, y, spec, shift="auto").real
            g0 = green_quadrature(model, h, lam, x0, y, spec, shift="auto").real
        kernels.append(float(gx / g0))
    return MartinCheck(x, x0, s, g, lam, list(m_values), kernels, pred,
                       "principal" if principal else "below",
                       {"beta": st.beta.tolist(), "Lambda_A": lam_a})
