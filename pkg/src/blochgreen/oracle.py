"""Reference Green's functions of the periodic operator on the full cover.

Three independent routes are provided:

* :func:`green_quadrature` -- periodic trapezoid rule for the Floquet
  inversion integral, optionally on a contour shifted to ``k + i b``;
* :func:`green_edge_limit` -- the edge value as the ``eps -> 0`` limit of the
  resolvent, from a square-root extrapolation;
* :func:`green_truncated` -- sparse solve on a finite deck box.

:func:`reduced_green_quadrature` evaluates the single-band part of the
resolvent near the edge, used to exhibit the split of the Green's function into
a leading piece and a rapidly decaying remainder.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.optimize import brentq

from ._linalg import smallest_singular, tangent_basis, torus_distance
from .crystal import AdditiveFunction, CoverPoint, CrystalModel, build_floquet_matrix, displacement
from .errors import (
    BlochGreenError,
    BranchCollision,
    Budget,
    ConfigError,
    DimensionTooLow,
    Indefinite,
    OnSpectrum,
    PoorFit,
    PreconditionError,
    SolverFailure,
)
from .floquet import BrillouinGrid, EdgeData, sample_bands

__all__ = [
    "QuadratureSpec",
    "QuadratureResult",
    "GreenComparison",
    "EdgeLimitResult",
    "ReducedGreenResult",
    "green_quadrature",
    "green_quadrature_full",
    "green_edge_limit",
    "green_truncated",
    "reduced_green_quadrature",
    "reduced_green_complement",
    "auto_shift",
    "plateau_bump",
    "ON_SPECTRUM_TOL",
]

ON_SPECTRUM_TOL = 1e-10


@dataclass(frozen=True)
class QuadratureSpec:
    """Trapezoid parameters: starting nodes per axis, relative tolerance, node cap."""

    m: int = 32
    tol: float = 1e-9
    max_m: int = 4096

    def __post_init__(self):
        if self.m < 32 or self.m % 2:
            raise ConfigError(f"quadrature m must be even and >= 32, got {self.m}")
        if self.max_m < self.m:
            raise ConfigError("max_m must be at least m")


@dataclass
class QuadratureResult:
    value: complex
    m: int
    change: float
    shift: np.ndarray
    min_sigma: float
    history: list = field(default_factory=list)


@dataclass
class GreenComparison:
    """An oracle value next to an asymptotic value at one pair."""

    x: CoverPoint
    y: CoverPoint
    lam: float
    oracle: complex
    asymptotic: complex
    dist: float = float("nan")

    @property
    def rel_error(self) -> float:
        if self.oracle == 0:
            return float("nan")
        return abs(self.oracle - self.asymptotic) / abs(self.oracle)

    def row(self) -> dict:
        return {
            "x": f"{self.x.vertex}@" + ",".join(map(str, self.x.deck)),
            "y": f"{self.y.vertex}@" + ",".join(map(str, self.y.deck)),
            "n": self.dist,
            "lambda": self.lam,
            "oracle": complex(self.oracle).real,
            "oracle_im": complex(self.oracle).imag,
            "asymptotic": complex(self.asymptotic).real,
            "asymptotic_im": complex(self.asymptotic).imag,
            "relError": self.rel_error,
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BLOCHGREEN_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# trapezoid engine
# ---------------------------------------------------------------------------
class _Integrand:
    """Tensor-grid evaluator of ``exp(i k.a) [(L(k + i b) - lam)^{-1}]_{vx, vy}``.

    Edges are grouped by the trailing components of their displacement so
    that each slice of constant ``k_1`` costs one small matrix product.
    """

    def __init__(self, model, h, lam, vx, vy, a, b):
        self.model = model
        self.n = model.n
        self.d = model.d
        self.lam = lam
        self.vx, self.vy = vx, vy
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        tau = h.edge_displacements(model)
        self.tau = tau
        w = model.weights * np.exp(-(tau @ self.b))
        keys = [tuple(t[1:]) for t in tau]
        self.groups = sorted(set(keys))
        gi = np.array([self.groups.index(k) for k in keys], dtype=np.intp)
        self.gi = gi
        self.w = w
        self.inc = model.incidence

    def _slice_setup(self, m):
        d = self.d
        ax = -np.pi + 2 * np.pi * np.arange(m) / m
        if d == 1:
            phase_g = np.ones((1, len(self.groups)), dtype=complex)
            phase_a = np.ones(1, dtype=complex)
            even = np.ones(1, dtype=bool)
        else:
            grids = np.meshgrid(*([ax] * (d - 1)), indexing="ij")
            kr = np.stack([g.ravel() for g in grids], axis=-1)
            gt = np.array(self.groups, dtype=float).reshape(len(self.groups), d - 1)
            phase_g = np.exp(1j * (kr @ gt.T))
            phase_a = np.exp(1j * (kr @ self.a[1:]))
            idx = np.meshgrid(*([np.arange(m)] * (d - 1)), indexing="ij")
            even = np.all(np.stack([i.ravel() % 2 == 0 for i in idx]), axis=0)
        return ax, phase_g, phase_a, even

    def evaluate(self, m, want_sigma=True):
        """Return ``(Q_m, Q_{m/2}, min_sigma)``."""
        ax, phase_g, phase_a, even = self._slice_setup(m)
        n = self.n
        G = len(self.groups)
        pot = self.model.pot
        lam = self.lam
        vx, vy = self.vx, self.vy
        t1 = self.tau[:, 0]

        def one(i):
            k1 = ax[i]
            coef = self.w * np.exp(1j * k1 * t1)
            C = np.zeros((G, n * n), dtype=complex)
            np.add.at(C, self.gi, coef[:, None] * self.inc)
            flat = phase_g @ C
            diag = np.arange(n) * (n + 1)
            flat[:, diag] += pot - lam
            if n == 1:
                den = flat[:, 0]
                val = 1.0 / den
                sig = np.abs(den) if want_sigma else None
            elif n == 2:
                p, q, r, s_ = flat[:, 0], flat[:, 1], flat[:, 2], flat[:, 3]
                det = p * s_ - q * r
                adj = {(0, 0): s_, (0, 1): -q, (1, 0): -r, (1, 1): p}[(vx, vy)]
                val = adj / det
                sig = (np.abs(det) / np.sqrt(np.sum(np.abs(flat) ** 2, axis=1))) if want_sigma else None
            else:
                mats = flat.reshape(-1, n, n)
                rhs = np.zeros((mats.shape[0], n, 1), dtype=complex)
                rhs[:, vy, 0] = 1.0
                val = np.linalg.solve(mats, rhs)[:, vx, 0]
                sig = None
            f = np.exp(1j * k1 * self.a[0]) * phase_a * val
            full = f.sum()
            half = f[even].sum() if i % 2 == 0 else 0.0
            smin = float(np.min(sig)) if sig is not None else np.inf
            return full, half, smin

        nt = _threads()
        if nt > 1:
            with ThreadPoolExecutor(nt) as ex:
                parts = list(ex.map(one, range(m)))
        else:
            parts = [one(i) for i in range(m)]
        full = sum(p[0] for p in parts)
        half = sum(p[1] for p in parts)
        smin = min(p[2] for p in parts)
        dm = m ** self.d
        q_m = full / dm
        q_half = half / (dm / 2 ** self.d)
        scale = np.exp(-(self.b @ self.a))
        return q_m * scale, q_half * scale, smin


def _coarse_sigma(model, h, lam, b, m=None) -> float:
    d = model.d
    if m is None:
        m = {1: 64, 2: 32}.get(d, 12)
    k = BrillouinGrid(d, m).nodes()
    mats = build_floquet_matrix(model, h, k + 1j * np.asarray(b)) - lam * np.eye(model.n)
    return float(np.min(smallest_singular(mats)))


def _perron_value(model, h, b) -> float:
    from .martin import perron_dispersion  # local import: martin uses this module

    return perron_dispersion(model, h, b).Lam


def _check_on_spectrum(model, h, lam) -> None:
    if model.symmetric:
        d = model.d
        m = {1: 256, 2: 64}.get(d, 16)
        bands = sample_bands(model, h, BrillouinGrid(d, m))
        r = bands.ranges()
        inside = np.any((r[:, 0] - 1e-12 <= lam) & (lam <= r[:, 1] + 1e-12))
        if inside:
            raise OnSpectrum(f"lambda={lam} lies in a sampled spectral band", ranges=r.tolist())
    sig = _coarse_sigma(model, h, lam, np.zeros(model.d))
    if sig < ON_SPECTRUM_TOL:
        raise OnSpectrum(f"L(k) - lambda is singular on the sampling grid (sigma_min={sig:.3e})")


def _admissible(model, h, lam, b, nt: int = 9) -> float:
    """Smallest coarse-grid singular value along the segment ``t b``, ``t in [0, 1]``."""
    if not model.symmetric:
        lam_b = _perron_value(model, h, b)
        lam_0 = _perron_value(model, h, np.zeros(model.d))
        return min(lam_b, lam_0) - lam
    return min(_coarse_sigma(model, h, lam, t * np.asarray(b)) for t in np.linspace(0, 1, nt))


def auto_shift(model: CrystalModel, h: AdditiveFunction, lam: float, a, t_cap: float = 0.95,
               tau_max: float = 12.0) -> np.ndarray:
    """Contour shift along ``a / |a|`` that keeps the resolvent analytic.

    The boundary ``tau*`` of admissible shifts along the ray is located (a
    singular-value scan for symmetric models, the Perron level set otherwise)
    and the shift ``t tau* a/|a|`` with ``t = clip(1 - 8 / (tau* |a|), 0, t_cap)``
    is returned.  Far pairs thus lose only about ``e^{-8}`` to cancellation.
    """
    a = np.asarray(a, dtype=float)
    r = float(np.linalg.norm(a))
    if r == 0:
        return np.zeros_like(a)
    u = a / r
    if model.symmetric:
        s0 = _coarse_sigma(model, h, lam, np.zeros_like(a))
        step = 0.02
        tau = 0.0
        prev = s0
        tau_star = None
        while tau < tau_max:
            tn = tau + step
            sn = _coarse_sigma(model, h, lam, tn * u)
            if sn < 1e-8 * max(1.0, s0) or sn > prev and prev < 0.05 * s0:
                tau_star = tn if sn < 1e-8 * max(1.0, s0) else tau
                break
            tau, prev = tn, sn
        if tau_star is None:
            tau_star = tau_max
    else:
        f = lambda t: _perron_value(model, h, t * u) - lam  # noqa: E731
        if f(0.0) <= 0:
            raise PreconditionError("real contour is not admissible; pass a shift inside K_lambda")
        hi = 0.25
        while f(hi) > 0 and hi < tau_max:
            hi *= 2
        tau_star = brentq(f, 0.0, min(hi, tau_max), xtol=1e-12) if f(min(hi, tau_max)) < 0 else tau_max
    t = min(max(1.0 - 8.0 / (tau_star * r), 0.0), t_cap)
    return t * tau_star * u


def green_quadrature_full(model: CrystalModel, h: AdditiveFunction, lam: float,
                          x: CoverPoint, y: CoverPoint, spec: QuadratureSpec | None = None,
                          shift=None, check_spectrum: bool = True) -> QuadratureResult:
    """:func:`green_quadrature` with diagnostics.

    Parameters
    ----------
    shift : array_like, ``"auto"`` or None
        Contour shift ``b``.  ``None`` integrates over real ``k``.
    """
    if spec is None:
        spec = QuadratureSpec()
    a = displacement(h, x, y)
    vx, vy = model.index[x.vertex], model.index[y.vertex]
    if check_spectrum:
        _check_on_spectrum(model, h, lam)
    if shift is None:
        b = np.zeros(model.d)
    elif isinstance(shift, str):
        if shift != "auto":
            raise ConfigError(f"unknown shift mode {shift!r}")
        b = auto_shift(model, h, lam, a)
    else:
        b = np.asarray(shift, dtype=float)
    if np.any(b != 0):
        marg = _admissible(model, h, lam, b)
        if not marg > ON_SPECTRUM_TOL:
            raise PreconditionError(f"contour shift {b} is not admissible (margin {marg:.3e})")
    ig = _Integrand(model, h, lam, vx, vy, a, b)
    m = max(spec.m, 8 * int(math.ceil(np.max(np.abs(a)))) if a.size else spec.m)
    m += m % 2
    m *= 2
    history = []
    while True:
        if m > spec.max_m:
            raise Budget(f"quadrature did not converge within m <= {spec.max_m}", history=history)
        q, q_half, smin = ig.evaluate(m)
        if smin < ON_SPECTRUM_TOL:
            raise OnSpectrum(f"integrand singular at a node (sigma_min={smin:.3e})")
        change = abs(q - q_half) / abs(q) if q != 0 else abs(q - q_half)
        history.append((m, q, change))
        if change < spec.tol:
            return QuadratureResult(complex(q), m, float(change), b, smin, history)
        m *= 2


def green_quadrature(model: CrystalModel, h: AdditiveFunction, lam: float, x: CoverPoint,
                     y: CoverPoint, spec: QuadratureSpec | None = None, shift=None) -> complex:
    """Green's function ``G_lam(x, y)`` by the periodic trapezoid rule.

    ``G_lam(x, y) = (2 pi)^-d int exp(i k.a) [(L(k) - lam)^-1]_{v(x) v(y)} dk``
    with ``a = h(x) - h(y)``.  The node count per axis starts at
    ``max(m, 8 |a|_inf)`` and doubles until two successive rules agree to
    ``spec.tol``.  With ``shift`` the same integral is taken over
    ``k + i b``; by analyticity the value is unchanged, but tiny far-field
    values no longer suffer cancellation.

    Raises
    ------
    OnSpectrum
        ``lam`` in a band, or ``L(k) - lam`` singular at a node.
    Budget
        No convergence below ``spec.max_m``.
    """
    return green_quadrature_full(model, h, lam, x, y, spec, shift).value


# ---------------------------------------------------------------------------
@dataclass
class EdgeLimitResult:
    value: float
    residual: float
    eps: list
    values: list
    m: list
    slope: float


def green_edge_limit(model: CrystalModel, h: AdditiveFunction, edge: EdgeData, x: CoverPoint,
                     y: CoverPoint, levels: int = 4, eps_max: float = 1e-2, u_max: float = 0.15,
                     c_nodes: float = 1.5, max_m: int = 4096, fit_tol: float = 1e-3,
                     full: bool = False):
    """Green's function at the edge value, ``d >= 3``, by ``eps`` extrapolation.

    The resolvent is evaluated at ``lam_edge -/+ eps_j`` (outside the band),
    ``eps_j = eps_top 4^-j``, with ``eps_top = min(eps_max, u_max^2 / (2 rho^2))``
    where ``rho = |H^{-1/2} a|``, so that the decay length ``(2 eps)^{-1/2}``
    always exceeds the distance.  Level ``j`` uses ``m_0 2^j`` nodes per axis
    with ``m_0 = max(32, 8 |a|_inf, c_nodes / sqrt(eps_top))``, which keeps
    ``m sqrt(eps)`` fixed across levels.  The model
    ``G(eps) = G_0 + c sqrt(eps)`` is fitted by least squares to the last three
    levels and ``G_0`` is returned.  Periodic images left by the finite node
    count scale like ``sqrt(eps)`` and are absorbed by the fit.

    Raises
    ------
    DimensionTooLow
        For ``d < 3``.
    PoorFit
        Fit residual above ``fit_tol |G_0|``.
    Budget
        A level needs more than ``max_m`` nodes per axis.
    """
    if model.d < 3:
        raise DimensionTooLow("the edge limit exists only for d >= 3")
    a = displacement(h, x, y)
    vx, vy = model.index[x.vertex], model.index[y.vertex]
    rho2 = float(a @ np.linalg.solve(edge.hessian, a))
    eps_top = eps_max if rho2 == 0 else min(eps_max, u_max ** 2 / (2 * rho2))
    eps = [eps_top * 4.0 ** -j for j in range(levels)]
    vals, ms = [], []
    m0 = max(32, 8 * int(math.ceil(np.max(np.abs(a)))), int(math.ceil(c_nodes / math.sqrt(eps[0]))))
    m0 += m0 % 2
    for j, e in enumerate(eps):
        # m doubles as eps quarters: m sqrt(eps) stays fixed, so periodic images scale like sqrt(eps)
        m = m0 * 2 ** j
        if m > max_m:
            raise Budget(f"edge limit needs m={m} > {max_m}")
        lam = edge.lam_edge - edge.sign * e
        ig = _Integrand(model, h, lam, vx, vy, a, np.zeros(model.d))
        q, _, smin = ig.evaluate(m, want_sigma=False)
        vals.append(q)
        ms.append(m)
    fe = np.sqrt(np.array(eps[-3:]))
    A = np.vstack([np.ones(3), fe]).T
    y_ = np.real(np.array(vals[-3:]))
    coef, *_ = np.linalg.lstsq(A, y_, rcond=None)
    g0 = float(coef[0])
    resid = float(np.max(np.abs(A @ coef - y_)))
    if resid > fit_tol * abs(g0):
        raise PoorFit(f"sqrt(eps) fit residual {resid:.3e} exceeds {fit_tol:g}*|G0|", residual=resid)
    res = EdgeLimitResult(g0, resid, eps, [complex(v) for v in vals], ms, float(coef[1]))
    return res if full else g0


# ---------------------------------------------------------------------------
def _cover_operator(model: CrystalModel, R: int, center) -> sp.csr_matrix:
    d, n = model.d, model.n
    side = 2 * R + 1
    nb = side ** d
    rows, cols, data = [], [], []
    coords = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * d), indexing="ij"), -1).reshape(nb, d)
    box_idx = np.arange(nb)
    strides = side ** np.arange(d - 1, -1, -1)
    for e, s_, t_, w in zip(model.edges, model.src_idx, model.dst_idx, model.weights):
        tgt = coords + np.asarray(e.shift)
        ok = np.all((tgt >= -R) & (tgt <= R), axis=1)
        ti = (tgt[ok] + R) @ strides
        rows.append(box_idx[ok] * n + s_)
        cols.append(ti * n + t_)
        data.append(np.full(ok.sum(), w))
    rows.append(np.arange(nb * n))
    cols.append(np.arange(nb * n))
    data.append(np.tile(model.pot, nb).astype(complex))
    mat = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(nb * n, nb * n))
    if model.is_real:
        mat = mat.real.tocsr()
    return mat


def _spectrum_bottom(model, h) -> float:
    bands = sample_bands(model, h, BrillouinGrid(model.d, {1: 256, 2: 64}.get(model.d, 24)))
    bottom = float(bands.values[:, 0].min())
    if model.n == 1:
        # single band: the exact minimum over k lies at a node or is refined below
        pass
    return bottom


def green_truncated(model: CrystalModel, lam: float, x: CoverPoint, y: CoverPoint, R: int,
                    h: AdditiveFunction | None = None, extrapolate: bool = False,
                    rtol: float = 1e-12, full: bool = False):
    """Green's function of the operator restricted to the deck box ``y + [-R, R]^d``.

    Zero (Dirichlet) conditions outside the box; ``(L - lam) u = delta_y`` is
    solved by a sparse direct method for small systems and by conjugate
    gradients otherwise.  With ``extrapolate`` the box ``2R`` is solved too
    and ``2 u_{2R} - u_R`` returned, removing the ``1/R`` truncation error that
    dominates at the edge value in three dimensions.

    Raises
    ------
    Indefinite
        ``lam`` above the bottom of the spectrum (the truncated operator is then
        not positive definite).
    SolverFailure
        The iterative solver did not converge.
    """
    if h is None:
        h = AdditiveFunction.zero(model)
    if R < 0:
        raise ConfigError("box radius must be nonnegative")
    if not model.symmetric:
        raise PreconditionError("truncated oracle is implemented for symmetric models")
    bottom = _spectrum_bottom(model, h)
    if lam > bottom + 1e-12:
        raise Indefinite(f"lambda={lam} is above the spectrum bottom {bottom}")
    if abs(lam - bottom) <= 1e-12 and model.d < 3:
        raise PreconditionError("edge value admits a Green's function only for d >= 3")

    def solve(Rb):
        dx = np.asarray(x.deck) - np.asarray(y.deck)
        if np.any(np.abs(dx) > Rb):
            raise ConfigError(f"x lies outside the box of radius {Rb}")
        side = 2 * Rb + 1
        strides = side ** np.arange(model.d - 1, -1, -1)
        A = _cover_operator(model, Rb, y.deck) - lam * sp.identity(side ** model.d * model.n, format="csr")
        iy = int((np.zeros(model.d, int) + Rb) @ strides) * model.n + model.index[y.vertex]
        ix = int((dx + Rb) @ strides) * model.n + model.index[x.vertex]
        rhs = np.zeros(A.shape[0], dtype=A.dtype)
        rhs[iy] = 1.0
        if A.shape[0] <= 60000:
            u = spl.spsolve(A.tocsc(), rhs)
        else:
            u, info = spl.cg(A, rhs, rtol=rtol, maxiter=20000)
            if info != 0:
                raise SolverFailure(f"conjugate gradients stopped with info={info}")
        return complex(u[ix])

    u1 = solve(R)
    if not extrapolate:
        val = u1
        out = {"value": val, "R": R, "u_R": u1}
    else:
        u2 = solve(2 * R)
        val = 2 * u2 - u1
        out = {"value": val, "R": R, "u_R": u1, "u_2R": u2}
    if model.is_real:
        out = {k: (v.real if isinstance(v, complex) else v) for k, v in out.items()}
    return out if full else out["value"]


# ---------------------------------------------------------------------------
# reduced Green's function
# ---------------------------------------------------------------------------
def _smooth_step(u):
    """C-infinity step: 1 for u <= 0, 0 for u >= 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f0 = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
        f1 = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    return f0 / (f0 + f1)


def plateau_bump(rho, radius: float, flat: float | None = 0.75):
    """Smooth radial cutoff about the origin, zero for ``rho >= radius``.

    With ``flat`` in ``(0, 1)`` the cutoff equals one for ``rho <= flat * radius``
    and falls smoothly to zero on ``[flat * radius, radius]``.  With
    ``flat=None`` it is the classical bump ``exp(1 - 1 / (1 - (rho/radius)^2))``.
    """
    rho = np.asarray(rho, dtype=float)
    if radius <= 0:
        return np.zeros_like(rho)
    if flat is None:
        x2 = np.minimum((rho / radius) ** 2, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(x2 < 1, np.exp(1.0 - 1.0 / np.where(x2 < 1, 1 - x2, 1.0)), 0.0)
    if not 0 < flat < 1:
        raise ConfigError(f"flat must lie in (0, 1), got {flat}")
    return _smooth_step((rho - flat * radius) / ((1 - flat) * radius))


@dataclass
class ReducedGreenResult:
    value: complex
    error: float
    nodes: int


def _tracked_branch(work, h, k_real, beta, band, steps: int = 12, sep_ratio: float = 0.5):
    """Eigen-decomposition of ``L(k + i beta)`` and the index of the continued band.

    For each real ``k`` the band of index ``band`` (ascending order at
    ``t = 0``) is followed along ``k + i t beta`` by nearest-eigenvalue matching.

    Raises
    ------
    BranchCollision
        Matching becomes ambiguous (the branch is not isolated).
    """
    n = work.n
    B = k_real.shape[0]
    if n == 1:
        mats = build_floquet_matrix(work, h, k_real + 1j * beta)
        one = np.ones((B, 1, 1), dtype=complex)
        return mats[:, 0, :], one, one, np.zeros(B, dtype=np.intp)
    cur = np.linalg.eigvalsh(build_floquet_matrix(work, h, k_real))[:, band - 1].astype(complex)
    rows = np.arange(B)
    for t in np.linspace(0.0, 1.0, steps + 1)[1:]:
        mu = np.linalg.eigvals(build_floquet_matrix(work, h, k_real + 1j * t * beta))
        dist = np.abs(mu - cur[:, None])
        srt = np.sort(dist, axis=1)
        if np.any(srt[:, 0] > sep_ratio * srt[:, 1]):
            bad = int(np.argmax(srt[:, 0] / np.maximum(srt[:, 1], 1e-300)))
            raise BranchCollision(f"tracked branch not isolated near k={k_real[bad]}, t={t:.3f}")
        cur = mu[rows, np.argmin(dist, axis=1)]
    mu, V = np.linalg.eig(build_floquet_matrix(work, h, k_real + 1j * beta))
    idx = np.argmin(np.abs(mu - cur[:, None]), axis=1)
    Vi = np.linalg.inv(V)
    return mu, V, Vi, idx


def _gl(n, lo, hi):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _polar_nodes(d, s, T, radius, flat, n_rho, n_psi, n_phi, qmin, gnorm):
    """Nodes ``delta`` and weights (including ``eta`` and the Jacobian) on the cutoff ball."""
    u, wu = _gl(n_rho, 0.0, 1.0)
    r1 = (0.5 if flat is None else flat) * radius
    # [0, r1] with rho = r1 u^2 clusters nodes at the singular center
    rho = np.concatenate([r1 * u ** 2, _gl(n_rho, r1, radius)[0]])
    wr = np.concatenate([r1 * 2 * u * wu, _gl(n_rho, r1, radius)[1]])
    eta = plateau_bump(rho, radius, flat)
    keep = eta > 0
    rho, wr, eta = rho[keep], wr[keep], eta[keep]
    deltas, weights = [], []
    uu, wuu = _gl(n_psi, 0.0, 1.0)
    for r_, w_, e_ in zip(rho, wr, eta):
        # near-singular angle psi = pi/2 (linear part of the denominator vanishes)
        width = min(1.0, max(r_ * qmin / gnorm, 1e-14))
        umax = np.arcsinh((np.pi / 2) / width)
        xoff = width * np.sinh(uu * umax)
        wx = width * np.cosh(uu * umax) * umax * wuu
        psi = np.concatenate([np.pi / 2 - xoff, np.pi / 2 + xoff])
        wpsi = np.concatenate([wx, wx])
        if d == 2:
            c, sn = np.cos(psi)[:, None], np.sin(psi)[:, None]
            dirs = np.concatenate([c * s + sn * T[:, 0], c * s - sn * T[:, 0]])
            wd = np.concatenate([wpsi, wpsi]) * r_
        else:
            phi = 2 * np.pi * np.arange(n_phi) / n_phi
            perp = np.cos(phi)[:, None] * T[:, 0] + np.sin(phi)[:, None] * T[:, 1]
            dirs = (np.cos(psi)[:, None, None] * s + np.sin(psi)[:, None, None] * perp[None]).reshape(-1, 3)
            wd = np.repeat(np.sin(psi) * wpsi, n_phi) * (2 * np.pi / n_phi) * r_ ** 2
        deltas.append(r_ * dirs)
        weights.append(w_ * e_ * wd)
    return np.concatenate(deltas), np.concatenate(weights)


def reduced_green_quadrature(model: CrystalModel, h: AdditiveFunction, edge: EdgeData, lam: float,
                             s, x: CoverPoint, y: CoverPoint, cut_radius: float = 0.5,
                             solve=None, flat: float | None = 0.75, n_rho: int = 48, n_psi: int = 32,
                             n_phi: int = 24, tol: float = 1e-10, max_refine: int = 4,
                             full: bool = False):
    """Reduced Green's function ``G_0(x, y)`` of the edge branch.

    ``G_0 = (2 pi)^-d int exp(i k.a) eta(k) P(k + i beta_s)_{v(x) v(y)} /
    (E(k + i beta_s) - lam) dk`` where ``P`` is the spectral projector of the
    continued edge eigenvalue ``E`` and ``eta`` a smooth radial cutoff about
    ``k0`` (see :func:`plateau_bump`), zero beyond ``cut_radius`` (at most
    ``pi``, so the ball stays inside one cell).  The
    integrand has an integrable singularity at ``k0``; it is integrated in
    polar (``d = 2``) or spherical (``d = 3``) coordinates about ``k0`` with
    angular nodes clustered where the linear part of the denominator vanishes.
    Node counts grow by 1.5 until successive values agree to ``tol``.

    Raises
    ------
    BranchCollision
        The continued eigenvalue is not isolated on the cutoff ball.
    """
    from .continuation import solve_beta_s

    if model.d not in (2, 3):
        raise PreconditionError("reduced Green's function implemented for d = 2, 3")
    if cut_radius > np.pi + 1e-12:
        raise ConfigError("cut_radius must not exceed pi")
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    if cut_radius <= 0:
        res = ReducedGreenResult(0j, 0.0, 0)
        return res if full else res.value
    if solve is None:
        solve = solve_beta_s(model, h, edge, lam, s)
    work = edge.working_model(model)
    lam_w = edge.sign * lam
    a = displacement(h, x, y)
    vx, vy = model.index[x.vertex], model.index[y.vertex]
    beta = solve.beta
    qmin = 0.5 * float(np.linalg.eigvalsh(-solve.state.hessE)[0])
    T = tangent_basis(s)

    def integrate(nr, npsi, nphi):
        delta, w = _polar_nodes(model.d, s, T, cut_radius, flat, nr, npsi, nphi, qmin, solve.grad_norm)
        total = 0j
        chunk = 200000
        for i in range(0, delta.shape[0], chunk):
            dl, wl = delta[i:i + chunk], w[i:i + chunk]
            mu, V, Vi, idx = _tracked_branch(work, h, edge.k0 + dl, beta, edge.working_band)
            rows = np.arange(dl.shape[0])
            P = V[rows, vx, idx] * Vi[rows, idx, vy]
            total += np.sum(wl * np.exp(1j * (dl @ a)) * P / (mu[rows, idx] - lam_w))
        return total * np.exp(1j * (edge.k0 @ a)) / (2 * np.pi) ** model.d, delta.shape[0]

    prev, nodes = integrate(n_rho, n_psi, n_phi)
    err = np.inf
    for _ in range(max_refine):
        n_rho, n_psi, n_phi = int(1.5 * n_rho), int(1.5 * n_psi), int(1.5 * n_phi)
        cur, nodes = integrate(n_rho, n_psi, n_phi)
        err = abs(cur - prev) / max(abs(cur), 1e-300)
        prev = cur
        if err < tol:
            break
    res = ReducedGreenResult(complex(edge.sign * prev), float(err), nodes)
    return res if full else res.value


def reduced_green_complement(model: CrystalModel, h: AdditiveFunction, edge: EdgeData, lam: float,
                             s, x: CoverPoint, y: CoverPoint, cut_radius: float = 0.5, solve=None,
                             flat: float | None = 0.75, spec: QuadratureSpec | None = None) -> complex:
    """Smooth remainder ``K = exp(beta_s . a) G_lam - G_0`` by the trapezoid rule.

    The integrand ``R(k + i beta_s) - eta P / (E - lam)`` is smooth on the
    torus.  On the cutoff ball it is assembled from the eigen-decomposition
    with the continued branch weighted by ``1 - eta``, so the pole at ``k0``
    never enters.
    """
    from .continuation import solve_beta_s

    if spec is None:
        spec = QuadratureSpec()
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    if solve is None:
        solve = solve_beta_s(model, h, edge, lam, s)
    work = edge.working_model(model)
    lam_w = edge.sign * lam
    a = displacement(h, x, y)
    vx, vy = model.index[x.vertex], model.index[y.vertex]
    beta = solve.beta
    d, n = model.d, model.n

    def evaluate(m):
        k = BrillouinGrid(d, m, tuple(edge.k0)).nodes()
        rho = torus_distance(k, edge.k0)
        out = np.zeros(k.shape[0], dtype=complex)
        inside = rho < cut_radius
        if np.any(~inside):
            mats = build_floquet_matrix(work, h, k[~inside] + 1j * beta) - lam_w * np.eye(n)
            rhs = np.zeros((mats.shape[0], n, 1), dtype=complex)
            rhs[:, vy, 0] = 1.0
            out[~inside] = np.linalg.solve(mats, rhs)[:, vx, 0]
        if np.any(inside):
            kin = k[inside]
            eta = plateau_bump(rho[inside], cut_radius, flat)
            mu, V, Vi, idx = _tracked_branch(work, h, kin, beta, edge.working_band)
            P = V[:, vx, :] * Vi[:, :, vy]
            wgt = np.ones(mu.shape)
            rows = np.arange(mu.shape[0])
            wgt[rows, idx] = 1.0 - eta
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(wgt != 0, wgt * P / (mu - lam_w), 0.0)
            out[inside] = terms.sum(axis=1)
        return np.mean(np.exp(1j * (k @ a)) * out)

    m = max(spec.m, 8 * int(math.ceil(np.max(np.abs(a)))))
    m += m % 2
    prev = evaluate(m)
    while True:
        m *= 2
        if m > spec.max_m:
            raise Budget(f"complement quadrature did not converge within m <= {spec.max_m}")
        cur = evaluate(m)
        if abs(cur - prev) <= spec.tol * abs(cur) or abs(cur - prev) < 1e-15:
            return complex(edge.sign * cur)
        prev = cur
