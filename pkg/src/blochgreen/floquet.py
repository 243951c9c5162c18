"""Band functions, spectral gaps and gap edges.

Band functions are the ascending eigenvalues of the Hermitian Floquet
matrices ``L(k)``.  Upper band edges are handled by negating the model, so the
internal code path only ever refines minima.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ._linalg import gauge, simple_eigen_hessian, smallest_singular, torus_distance, wrap_angle
from .crystal import (
    AdditiveFunction,
    CrystalModel,
    build_floquet_matrix,
    floquet_k_derivatives,
    floquet_k_second_derivatives,
)
from .errors import (
    AssumptionViolated,
    BlochGreenError,
    ConfigError,
    DegenerateEdge,
    EigFailure,
    NoGap,
    NonConvexEdge,
    PreconditionError,
)

__all__ = [
    "BrillouinGrid",
    "BandStructure",
    "GapRecord",
    "EdgeData",
    "AssumptionReport",
    "sample_bands",
    "detect_gaps",
    "locate_edge",
    "verify_assumptions",
    "band_gradient",
    "band_hessian",
    "edge_for_lambda",
    "band_rows",
    "GAP_TOLERANCE",
]

GAP_TOLERANCE = 1e-8
SIMPLE_TOL = 1e-10


@dataclass(frozen=True)
class BrillouinGrid:
    """Uniform tensor grid ``k_center + (-pi + 2 pi i / m)`` per axis."""

    d: int
    m: int
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.m < 8:
            raise ConfigError(f"grid needs m >= 8, got {self.m}")

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.m

    def axis(self) -> np.ndarray:
        return -np.pi + self.spacing * np.arange(self.m)

    def nodes(self) -> np.ndarray:
        """All nodes, shape (m^d, d), last axis varying fastest."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        k = np.stack([g.ravel() for g in mesh], axis=-1)
        if self.center is not None:
            k = k + np.asarray(self.center, dtype=float)
        return k

    @property
    def size(self) -> int:
        return self.m ** self.d


@dataclass
class BandStructure:
    """Sorted band values ``values[node, j-1]`` on a grid."""

    grid: BrillouinGrid
    values: np.ndarray
    sign: float = 1.0

    @property
    def nbands(self) -> int:
        return self.values.shape[1]

    def band(self, j: int) -> np.ndarray:
        """Band ``j`` (1-based) at every node."""
        return self.values[:, j - 1]

    def ranges(self) -> np.ndarray:
        """Per-band ``[min, max]`` over the grid, shape (N, 2)."""
        return np.stack([self.values.min(axis=0), self.values.max(axis=0)], axis=1)


@dataclass(frozen=True)
class GapRecord:
    """Open gap ``(lo, hi)`` above band ``lower_band`` (0 for the semi-infinite gap)."""

    lower_band: int
    lo: float
    hi: float
    kind: str  # "finite" | "semi-infinite"

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, lam: float) -> bool:
        return self.lo < lam < self.hi

    def edges(self) -> list[tuple[int, str]]:
        """``(band, side)`` pairs bounding the gap: top of the band below, bottom of the band above."""
        out = [(self.lower_band + 1, "lower")]
        if self.lower_band >= 1:
            out.insert(0, (self.lower_band, "upper"))
        return out


@dataclass
class AssumptionReport:
    """Outcome and margin of each checked item (A1..A5, singularity)."""

    items: dict = field(default_factory=dict)

    def set(self, name: str, ok: bool | None, margin, note: str = ""):
        self.items[name] = {"ok": ok, "margin": margin, "note": note}

    def ok(self, name: str) -> bool | None:
        return self.items.get(name, {}).get("ok")

    def margin(self, name: str):
        return self.items.get(name, {}).get("margin")

    def failures(self, required=None) -> list[str]:
        names = required if required is not None else self.items.keys()
        return [n for n in names if n in self.items and self.items[n]["ok"] is False]

    def as_dict(self) -> dict:
        return {k: dict(v) for k, v in self.items.items()}


@dataclass
class EdgeData:
    """A located band edge.

    ``lam_edge`` and ``k0`` are in the caller's convention.  ``hessian`` and
    ``phi`` belong to the working model ``sign * L``, whose band has a
    minimum at ``k0``, so ``hessian`` is positive definite once certified.
    """

    j: int
    side: str
    k0: np.ndarray
    lam_edge: float
    hessian: np.ndarray
    phi: np.ndarray
    sign: float
    working_band: int
    hessian_error: float
    gap_to_neighbors: float
    report: AssumptionReport = field(default_factory=AssumptionReport)

    def working_model(self, model: CrystalModel) -> CrystalModel:
        return model if self.sign > 0 else model.negated()

    @property
    def working_edge(self) -> float:
        """Edge value in the working convention (a band minimum)."""
        return self.sign * self.lam_edge

    @property
    def min_hessian_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.hessian)[0])

    def as_dict(self) -> dict:
        return {
            "band": self.j,
            "side": self.side,
            "k0": [float(x) for x in self.k0],
            "lambda_edge": float(self.lam_edge),
            "hessian": self.hessian.tolist(),
            "min_hessian_eig": self.min_hessian_eig,
            "hessian_error": float(self.hessian_error),
            "phi": {"re": self.phi.real.tolist(), "im": self.phi.imag.tolist()},
            "assumptions": self.report.as_dict(),
        }


# ---------------------------------------------------------------------------
def _require_symmetric(model: CrystalModel) -> None:
    if not model.symmetric:
        raise PreconditionError("band computations need a symmetric model")


def sample_bands(model: CrystalModel, h: AdditiveFunction, grid: BrillouinGrid,
                 chunk: int = 8192) -> BandStructure:
    """Eigenvalues of ``L(k)`` at every grid node, ascending per node.

    Raises
    ------
    EigFailure
        If the Hermitian eigensolver does not converge.
    """
    _require_symmetric(model)
    k = grid.nodes()
    out = np.empty((k.shape[0], model.n))
    for i in range(0, k.shape[0], chunk):
        mats = build_floquet_matrix(model, h, k[i:i + chunk])
        try:
            out[i:i + chunk] = np.linalg.eigvalsh(mats)
        except np.linalg.LinAlgError as exc:
            raise EigFailure(f"eigensolver failed: {exc}") from exc
    return BandStructure(grid, out)


def detect_gaps(bands: BandStructure, tol: float = GAP_TOLERANCE) -> list[GapRecord]:
    """Semi-infinite gap below the spectrum plus every finite gap wider than ``tol``."""
    r = bands.ranges()
    gaps = [GapRecord(0, -np.inf, float(r[0, 0]), "semi-infinite")]
    for j in range(1, bands.nbands):
        lo = float(np.max(r[:j, 1]))
        hi = float(r[j, 0])
        if hi - lo > tol:
            gaps.append(GapRecord(j, lo, hi, "finite"))
    return gaps


def band_rows(bands: BandStructure) -> list[dict]:
    """Rows ``k_1..k_d, lambda_1..lambda_N`` for CSV output."""
    k = bands.grid.nodes()
    rows = []
    for i in range(k.shape[0]):
        row = {f"k_{m + 1}": float(k[i, m]) for m in range(k.shape[1])}
        row.update({f"lambda_{j + 1}": float(bands.values[i, j]) for j in range(bands.nbands)})
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
def _eigpair(model, h, k, j):
    """Band ``j`` (1-based) eigenvalue, eigenvector and distance to neighbors at real ``k``."""
    mat = build_floquet_matrix(model, h, k)
    try:
        w, v = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(f"eigensolver failed at k={k}: {exc}") from exc
    i = j - 1
    others = np.delete(w, i)
    gap = float(np.min(np.abs(others - w[i]))) if others.size else np.inf
    return float(w[i]), v[:, i], gap


def band_gradient(model, h, k, j) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Value, Hellmann-Feynman gradient, eigenvector and neighbor gap of band ``j`` at ``k``."""
    lam, phi, gap = _eigpair(model, h, k, j)
    dl = floquet_k_derivatives(model, h, k)
    g = np.real(np.einsum("i,mij,j->m", phi.conj(), dl, phi))
    return lam, g, phi, gap


def band_hessian(model, h, k, j) -> tuple[np.ndarray, float]:
    """Exact Hessian of the simple band ``j`` at real ``k``.

    Second-order perturbation theory; the returned error is the relative
    residual of the reduced-resolvent solves.
    """
    k = np.asarray(k, dtype=float)
    lam, phi, _ = _eigpair(model, h, k, j)
    mat = build_floquet_matrix(model, h, k)
    d1 = floquet_k_derivatives(model, h, k)
    d2 = floquet_k_second_derivatives(model, h, k)
    hess, err = simple_eigen_hessian(mat, d1, d2, phi, phi, lam)
    return np.real(hess), err


def _refine_min(model, h, k, j, tol=1e-12, maxit=100):
    """Damped Newton on the gradient of band ``j`` started at ``k``."""
    k = np.array(k, dtype=float)
    lam, g, phi, gap = band_gradient(model, h, k, j)
    for _ in range(maxit):
        if np.linalg.norm(g) < tol:
            break
        if gap < SIMPLE_TOL:
            raise DegenerateEdge(f"band {j} is not simple near k={k} (gap {gap:.3e})", gap=gap)
        hess, _ = band_hessian(model, h, k, j)
        try:
            step = -np.linalg.solve(hess, g)
            if not g @ step < 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        while t > 1e-8:
            kn = k + t * step
            ln, gn, pn, gapn = band_gradient(model, h, kn, j)
            if ln <= lam + 1e-14 * max(1.0, abs(lam)) or np.linalg.norm(gn) < np.linalg.norm(g):
                break
            t *= 0.5
        k, lam, g, phi, gap = kn, ln, gn, pn, gapn
    return k, lam, g, phi, gap


def locate_edge(model: CrystalModel, h: AdditiveFunction, j: int, side: str = "lower",
                grid: BrillouinGrid | None = None, bands: BandStructure | None = None) -> EdgeData:
    """Locate the minimum (``side='lower'``) or maximum (``'upper'``) of band ``j``.

    Parameters
    ----------
    j : int
        1-based band index in the caller's model.
    grid : BrillouinGrid, optional
        Coarse grid for the global search (default ``m = 32``).

    Raises
    ------
    DegenerateEdge
        The band is not simple at the edge.
    NonConvexEdge
        The Hessian is not positive definite.
    """
    _require_symmetric(model)
    if side not in ("lower", "upper"):
        raise ConfigError(f"side must be 'lower' or 'upper', got {side!r}")
    if not 1 <= j <= model.n:
        raise ConfigError(f"band index {j} outside 1..{model.n}")
    if grid is None:
        grid = BrillouinGrid(model.d, 32)
    sign = 1.0 if side == "lower" else -1.0
    work = model if sign > 0 else model.negated()
    jw = j if sign > 0 else model.n + 1 - j

    if bands is None or bands.grid != grid:
        bands = sample_bands(model, h, grid)
    vals = sign * bands.values[:, ::-1] if sign < 0 else bands.values
    nodes = grid.nodes()
    i0 = int(np.argmin(vals[:, jw - 1]))
    k, lam, g, phi, gap = _refine_min(work, h, nodes[i0], jw)
    k0 = wrap_angle(k)
    lam, g, phi, gap = band_gradient(work, h, k0, jw)
    if gap < SIMPLE_TOL:
        raise DegenerateEdge(f"band {j} is not simple at k0={k0} (gap {gap:.3e})", gap=gap)
    hess, herr = band_hessian(work, h, k0, jw)
    if np.linalg.eigvalsh(hess)[0] <= 0:
        raise NonConvexEdge(f"Hessian at k0={k0} is not positive definite", hessian=hess.tolist())
    return EdgeData(j=j, side=side, k0=k0, lam_edge=sign * lam, hessian=hess,
                    phi=gauge(phi), sign=sign, working_band=jw,
                    hessian_error=herr, gap_to_neighbors=gap)


def edge_for_lambda(model: CrystalModel, h: AdditiveFunction, lam: float,
                    grid: BrillouinGrid | None = None) -> tuple[GapRecord, EdgeData]:
    """Find the gap containing ``lam`` and locate its nearer edge.

    Raises
    ------
    NoGap
        If ``lam`` lies in no sampled gap.
    """
    if grid is None:
        grid = BrillouinGrid(model.d, 32)
    bands = sample_bands(model, h, grid)
    for gap in detect_gaps(bands):
        if gap.contains(lam):
            if gap.kind == "semi-infinite" or lam - gap.lo > gap.hi - lam:
                band, side = gap.lower_band + 1, "lower"
            else:
                band, side = gap.lower_band, "upper"
            return gap, locate_edge(model, h, band, side, grid, bands)
    raise NoGap(f"lambda={lam} is not inside any spectral gap")


# ---------------------------------------------------------------------------
def _fan(d: int) -> list[np.ndarray]:
    out = []
    for m in range(d):
        for sgn in (1.0, -1.0):
            e = np.zeros(d)
            e[m] = sgn
            out.append(e)
    for signs in product((1.0, -1.0), repeat=d):
        out.append(np.array(signs) / np.sqrt(d))
    return out


def singularity_margin(work: CrystalModel, h: AdditiveFunction, k0, beta, lam_w: float,
                       t_max: float = 0.99, nt: int = 12, m: int | None = None) -> float:
    """``min sigma_min(L(k + i t beta) - lam)`` over a ``(t, k)`` grid, ``t <= t_max``.

    The k-grid is centered at ``k0`` so that the point ``k = k0`` is sampled.
    """
    d = len(k0)
    if m is None:
        m = {1: 64, 2: 24}.get(d, 10)
    ks = BrillouinGrid(d, m, tuple(k0)).nodes()
    best = np.inf
    eye = np.eye(work.n)
    for t in np.linspace(0.0, t_max, nt):
        mats = build_floquet_matrix(work, h, ks + 1j * t * np.asarray(beta)) - lam_w * eye
        best = min(best, float(np.min(smallest_singular(mats))))
    return best


def verify_assumptions(model: CrystalModel, h: AdditiveFunction, edge: EdgeData,
                       gap: GapRecord | None = None, lam: float | None = None,
                       grid: BrillouinGrid | None = None, require_a5: bool = True,
                       directions=None, raise_errors: bool = True) -> AssumptionReport:
    """Check A1-A5 at the edge and, when ``lam`` is given, the singularity scan.

    The singularity scan needs the decay vectors ``beta_s``; they are solved
    for a fan of directions (or ``directions``) with :mod:`blochgreen.continuation`.

    Raises
    ------
    AssumptionViolated
        Naming the first failing required item and its margin.
    """
    if grid is None:
        grid = BrillouinGrid(model.d, 32)
    rep = AssumptionReport()
    work = edge.working_model(model)
    jw = edge.working_band
    bands = sample_bands(work, h, grid)
    vals = bands.values
    lam_w_edge = edge.working_edge

    # A1: the edge value is attained at k0
    lam0 = _eigpair(work, h, edge.k0, jw)[0]
    rep.set("A1", abs(lam0 - lam_w_edge) < 1e-10, abs(lam0 - lam_w_edge))

    # A2: other bands stay away from the edge value
    if work.n == 1:
        rep.set("A2", True, None, "vacuous: single band")
    else:
        others = np.delete(vals, jw - 1, axis=1)
        a2 = float(np.min(np.abs(others - lam_w_edge)))
        rep.set("A2", a2 > 1e-6, a2)

    # A3: the minimum is unique modulo 2 pi Z^d
    band = vals[:, jw - 1]
    hmin = edge.min_hessian_eig
    width = float(band.max() - band.min())
    margin = min(hmin / 16.0, 0.05 * width) if width > 0 else hmin / 16.0
    near = band < lam_w_edge + margin
    below = band < lam_w_edge - 1e-10
    dist = torus_distance(grid.nodes()[near], edge.k0)
    far = float(np.max(dist)) if dist.size else 0.0
    a3_ok = bool(far < 0.5) and not np.any(below)
    rep.set("A3", a3_ok, 0.5 - far,
            "grid node below the edge value" if np.any(below) else "")

    # A4: nondegenerate minimum
    rep.set("A4", hmin > 0, hmin)

    # A5: k0 at a symmetry point
    dev = float(np.max(np.minimum(np.abs(edge.k0), np.abs(np.pi - np.abs(edge.k0)))))
    rep.set("A5", dev < 1e-6, dev, "" if require_a5 else "not required")

    required = ["A1", "A2", "A3", "A4"] + (["A5"] if require_a5 else [])

    if lam is not None:
        lam_w = edge.sign * lam
        if gap is not None and not (gap.lo <= lam <= gap.hi):
            rep.set("gap", False, min(lam - gap.lo, gap.hi - lam), "lambda outside the gap")
            required.append("gap")
        if lam_w > lam_w_edge:
            rep.set("side", False, lam_w_edge - lam_w, "lambda on the wrong side of the edge")
            required.append("side")
        if rep.ok("A5") and lam_w < lam_w_edge and model.d >= 1:
            from .continuation import solve_beta_s  # local import: continuation builds on this module

            dirs = _fan(model.d) if directions is None else [np.asarray(s, float) for s in directions]
            best = np.inf
            try:
                for s in dirs:
                    sol = solve_beta_s(model, h, edge, lam, s)
                    best = min(best, singularity_margin(work, h, edge.k0, sol.beta, lam_w))
                rep.set("singularity", best > 1e-9, best)
            except BlochGreenError as exc:
                rep.set("singularity", False, None, f"{exc.code}: {exc}")
            required.append("singularity")

    edge.report = rep
    if raise_errors:
        bad = rep.failures(required)
        if bad:
            raise AssumptionViolated(bad[0], rep.margin(bad[0]))
    return rep
