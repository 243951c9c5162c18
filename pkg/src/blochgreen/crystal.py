"""Periodic operators on Z^d crystal graphs.

A crystal graph is the cover ``X = V x Z^d`` of a finite quotient graph with
vertex set ``V``.  Every quotient edge ``(v, w, sigma, a)`` lifts to the
family of cover edges ``(v, g) -> (w, g + sigma)`` carrying weight ``a`` and
the periodic operator acts as

    (L u)(v, g) = p[v] u(v, g) + sum_{(v, w, sigma, a)} a u(w, g + sigma).

Additive functions are realized by per-vertex offsets, ``h(v, g) = g + c(v)``.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BadSign,
    DisconnectedQuotient,
    MissingAdjointEdge,
    PreconditionError,
    Reducible,
    SchemaError,
    ZeroDisplacement,
)

__all__ = [
    "Edge",
    "CrystalModel",
    "AdditiveFunction",
    "CoverPoint",
    "validate_model",
    "build_floquet_matrix",
    "floquet_k_derivatives",
    "floquet_k_second_derivatives",
    "cover_distance",
    "direction",
    "displacement",
    "quasi_isometry_constants",
    "is_strongly_connected",
]


@dataclass(frozen=True)
class Edge:
    """Directed quotient edge ``src -> dst`` at deck shift ``shift``."""

    src: str
    dst: str
    shift: tuple[int, ...]
    weight: complex

    def adjoint(self) -> "Edge":
        return Edge(self.dst, self.src, tuple(-s for s in self.shift),
                    complex(self.weight).conjugate())


@dataclass(frozen=True, eq=False)
class CrystalModel:
    """Quotient data of a periodic operator on a Z^d crystal graph.

    Parameters
    ----------
    d : int
        Rank of the deck group.
    vertices : tuple of str
        Ordered quotient vertex labels; the order fixes matrix indices.
    edges : tuple of Edge
        Directed edges with integer shifts and complex weights.
    potential : tuple of float
        Diagonal term, one entry per vertex in ``vertices`` order.
    symmetric : bool
        Self-adjoint mode when true, Perron (Z-matrix) mode otherwise.
    name : str, optional
        Free-form label for reports.
    """

    d: int
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    potential: tuple[float, ...]
    symmetric: bool = True
    name: str = ""
    validated: bool = field(default=False, compare=False)

    @classmethod
    def build(cls, d: int, vertices: Sequence[str], edges: Iterable,
              potential: Mapping[str, float] | Sequence[float],
              symmetric: bool = True, name: str = "") -> "CrystalModel":
        """Convenience constructor accepting tuples and a potential mapping."""
        vertices = tuple(str(v) for v in vertices)
        elist = []
        for e in edges:
            if isinstance(e, Edge):
                elist.append(e)
            else:
                src, dst, shift, w = e
                elist.append(Edge(str(src), str(dst), tuple(int(s) for s in shift), complex(w)))
        if isinstance(potential, Mapping):
            missing = [v for v in vertices if v not in potential]
            if missing:
                raise SchemaError(f"potential missing for vertices {missing}")
            pot = tuple(float(potential[v]) for v in vertices)
        else:
            pot = tuple(float(p) for p in potential)
        return cls(int(d), vertices, tuple(elist), pot, bool(symmetric), name)

    # -- cached array views ------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def src_idx(self) -> np.ndarray:
        return np.array([self.index[e.src] for e in self.edges], dtype=np.intp)

    @cached_property
    def dst_idx(self) -> np.ndarray:
        return np.array([self.index[e.dst] for e in self.edges], dtype=np.intp)

    @cached_property
    def shifts(self) -> np.ndarray:
        return np.array([e.shift for e in self.edges], dtype=float).reshape(len(self.edges), self.d)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.edges], dtype=complex)

    @cached_property
    def pot(self) -> np.ndarray:
        return np.array(self.potential, dtype=float)

    @cached_property
    def flat_index(self) -> np.ndarray:
        """Position of each edge in the row-major flattened N x N matrix."""
        return self.src_idx * self.n + self.dst_idx

    @cached_property
    def incidence(self) -> np.ndarray:
        """Edge-to-entry 0/1 matrix, shape (E, N*N)."""
        inc = np.zeros((len(self.edges), self.n * self.n))
        inc[np.arange(len(self.edges)), self.flat_index] = 1.0
        return inc

    @cached_property
    def is_real(self) -> bool:
        return bool(np.all(self.weights.imag == 0.0))

    # -- derived models ----------------------------------------------------
    def negated(self) -> "CrystalModel":
        """The model of ``-L`` (used to turn upper edges into lower ones)."""
        return CrystalModel(self.d, self.vertices,
                            tuple(Edge(e.src, e.dst, e.shift, -e.weight) for e in self.edges),
                            tuple(-p for p in self.potential), self.symmetric,
                            (self.name + ":neg") if self.name else "neg", self.validated)

    def adjoint(self) -> "CrystalModel":
        """Formal adjoint: reversed edges, negated shifts, conjugated weights."""
        return CrystalModel(self.d, self.vertices, tuple(e.adjoint() for e in self.edges),
                            self.potential, self.symmetric,
                            (self.name + ":adj") if self.name else "adj", self.validated)

    def with_potential(self, potential: Mapping[str, float]) -> "CrystalModel":
        pot = tuple(float(potential.get(v, p)) for v, p in zip(self.vertices, self.potential))
        return CrystalModel(self.d, self.vertices, self.edges, pot, self.symmetric, self.name)

    def without_edge(self, i: int) -> "CrystalModel":
        edges = self.edges[:i] + self.edges[i + 1:]
        return CrystalModel(self.d, self.vertices, edges, self.potential, self.symmetric, self.name)

    def as_nonsymmetric(self) -> "CrystalModel":
        return CrystalModel(self.d, self.vertices, self.edges, self.potential, False, self.name)

    def weight_bound(self) -> float:
        """``max potential + sum |weights| + 1``, a safe Perron shift."""
        return float(np.max(self.pot) + np.sum(np.abs(self.weights)) + 1.0)


@dataclass(frozen=True)
class CoverPoint:
    """Cover vertex ``(vertex, g)``."""

    vertex: str
    deck: tuple[int, ...]

    @classmethod
    def of(cls, vertex: str, deck: Sequence[int]) -> "CoverPoint":
        return cls(str(vertex), tuple(int(g) for g in deck))

    def translate(self, g: Sequence[int]) -> "CoverPoint":
        """Deck action ``g . (v, h) = (v, h + g)``."""
        return CoverPoint(self.vertex, tuple(a + int(b) for a, b in zip(self.deck, g)))


@dataclass(frozen=True, eq=False)
class AdditiveFunction:
    """Additive function ``h(v, g) = g + c(v)`` given by vertex offsets."""

    vertices: tuple[str, ...]
    offsets: np.ndarray  # shape (N, d)

    @classmethod
    def zero(cls, model: CrystalModel) -> "AdditiveFunction":
        return cls(model.vertices, np.zeros((model.n, model.d)))

    @classmethod
    def from_mapping(cls, model: CrystalModel, offsets: Mapping[str, Sequence[float]]) -> "AdditiveFunction":
        c = np.zeros((model.n, model.d))
        for v, off in offsets.items():
            if v not in model.index:
                raise SchemaError(f"offset given for unknown vertex {v!r}")
            off = np.asarray(off, dtype=float).ravel()
            if off.shape != (model.d,):
                raise SchemaError(f"offset for vertex {v!r} must have length {model.d}")
            c[model.index[v]] = off
        return cls(model.vertices, c)

    @property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    def offset(self, vertex: str) -> np.ndarray:
        return self.offsets[self.vertices.index(vertex)]

    def __call__(self, x: CoverPoint) -> np.ndarray:
        return np.asarray(x.deck, dtype=float) + self.offset(x.vertex)

    def edge_displacements(self, model: CrystalModel) -> np.ndarray:
        """``tau_e = sigma_e + c(dst) - c(src)`` for every edge, shape (E, d)."""
        c = self.offsets
        return model.shifts + c[model.dst_idx] - c[model.src_idx]


def _check_connected(model: CrystalModel) -> None:
    adj = {v: set() for v in range(model.n)}
    for s, t in zip(model.src_idx, model.dst_idx):
        adj[int(s)].add(int(t))
        adj[int(t)].add(int(s))
    seen = {0}
    todo = [0]
    while todo:
        u = todo.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    if len(seen) != model.n:
        missing = [model.vertices[i] for i in range(model.n) if i not in seen]
        raise DisconnectedQuotient(f"quotient graph is disconnected; unreachable: {missing}")


def is_strongly_connected(model: CrystalModel) -> bool:
    """Strong connectivity of the directed quotient graph."""
    n = model.n
    fwd = [[] for _ in range(n)]
    bwd = [[] for _ in range(n)]
    for s, t in zip(model.src_idx, model.dst_idx):
        fwd[int(s)].append(int(t))
        bwd[int(t)].append(int(s))

    def reach(adj):
        seen = {0}
        todo = [0]
        while todo:
            u = todo.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        return len(seen) == n

    return reach(fwd) and reach(bwd)


def validate_model(raw: CrystalModel) -> CrystalModel:
    """Check the standing structural assumptions and return a validated model.

    Raises
    ------
    SchemaError
        Malformed vertex, shift or weight data.
    MissingAdjointEdge
        Symmetric mode and some edge lacks its adjoint partner.
    DisconnectedQuotient
        The undirected quotient graph is disconnected.
    BadSign
        Perron mode and some weight is not a strictly negative real.
    Reducible
        Perron mode and the directed quotient is not strongly connected.
    """
    if raw.d < 1:
        raise SchemaError("dimension must be positive")
    if raw.n == 0:
        raise SchemaError("model has no vertices")
    if len(set(raw.vertices)) != raw.n:
        raise SchemaError("duplicate vertex labels")
    if len(raw.potential) != raw.n or not np.all(np.isfinite(raw.potential)):
        raise SchemaError("potential must be a finite real per vertex")
    for i, e in enumerate(raw.edges):
        if e.src not in raw.index or e.dst not in raw.index:
            raise SchemaError(f"edge {i}: unknown endpoint", edge=i)
        if len(e.shift) != raw.d:
            raise SchemaError(f"edge {i}: shift must have length {raw.d}", edge=i)
        if not np.isfinite(complex(e.weight)):
            raise SchemaError(f"edge {i}: weight is not finite", edge=i)

    _check_connected(raw)

    if raw.symmetric:
        have = Counter((e.src, e.dst, e.shift, complex(e.weight)) for e in raw.edges)
        want = Counter()
        for e in raw.edges:
            a = e.adjoint()
            want[(a.src, a.dst, a.shift, complex(a.weight))] += 1
        if have != want:
            bad = next(k for k in want if want[k] != have.get(k, 0))
            raise MissingAdjointEdge(f"adjoint partner missing or multiplicity differs for edge {bad}",
                                     edge=str(bad))
    else:
        for i, e in enumerate(raw.edges):
            w = complex(e.weight)
            if w.imag != 0.0 or not w.real < 0.0:
                raise BadSign(f"edge {i}: Perron mode requires a strictly negative real weight, got {w}",
                              edge=i)
        if not is_strongly_connected(raw):
            raise Reducible("directed quotient graph is not strongly connected")

    return CrystalModel(raw.d, raw.vertices, raw.edges, raw.potential, raw.symmetric,
                        raw.name, validated=True)


def build_floquet_matrix(model: CrystalModel, h: AdditiveFunction, k) -> np.ndarray:
    """Floquet matrix ``L(k)`` for one or many quasimomenta.

    Parameters
    ----------
    model : CrystalModel
    h : AdditiveFunction
    k : array_like, shape (..., d)
        Real or complex quasimomenta.  ``k = i beta`` gives the
        exponentially twisted matrix ``A(i beta)`` with entries
        ``a exp(-beta . tau)``.

    Returns
    -------
    ndarray, shape (..., N, N)
        ``L(k)_{vw} = delta_{vw} p[v] + sum a exp(i k . tau)``.
    """
    k = np.asarray(k)
    batch = k.shape[:-1]
    n = model.n
    tau = h.edge_displacements(model)
    ph = np.exp(1j * (k @ tau.T)) * model.weights
    flat = np.zeros(batch + (n * n,), dtype=complex)
    if len(model.edges):
        inc = model.incidence
        flat += ph @ inc
    out = flat.reshape(batch + (n, n))
    out[..., np.arange(n), np.arange(n)] += model.pot
    return out


def floquet_k_derivatives(model: CrystalModel, h: AdditiveFunction, k) -> np.ndarray:
    """Partial derivatives ``dL/dk_m`` at a single ``k``, shape (d, N, N).

    The derivative along an imaginary direction follows from analyticity,
    ``d/d beta_m L(k0 + i beta) = i dL/dk_m``.
    """
    k = np.asarray(k)
    n = model.n
    tau = h.edge_displacements(model)
    ph = np.exp(1j * (tau @ k)) * model.weights
    out = np.zeros((model.d, n * n), dtype=complex)
    inc = model.incidence
    for m in range(model.d):
        out[m] = (1j * tau[:, m] * ph) @ inc
    return out.reshape(model.d, n, n)


def floquet_k_second_derivatives(model: CrystalModel, h: AdditiveFunction, k) -> np.ndarray:
    """Second partials ``d^2 L / dk_m dk_n`` at a single ``k``, shape (d, d, N, N)."""
    k = np.asarray(k)
    n = model.n
    tau = h.edge_displacements(model)
    ph = np.exp(1j * (tau @ k)) * model.weights
    w = -(tau[:, :, None] * tau[:, None, :]) * ph[:, None, None]
    out = np.einsum("emn,ef->mnf", w, model.incidence) if len(model.edges) else \
        np.zeros((model.d, model.d, n * n), dtype=complex)
    return out.reshape(model.d, model.d, n, n)


def displacement(h: AdditiveFunction, x: CoverPoint, y: CoverPoint) -> np.ndarray:
    """``h(x) - h(y)``."""
    return h(x) - h(y)


def direction(h: AdditiveFunction, x: CoverPoint, y: CoverPoint) -> np.ndarray:
    """Unit vector ``(h(x) - h(y)) / |h(x) - h(y)|``.

    Raises
    ------
    ZeroDisplacement
        If ``h(x) = h(y)``.
    """
    a = displacement(h, x, y)
    r = float(np.linalg.norm(a))
    if r == 0.0:
        raise ZeroDisplacement("h(x) equals h(y); direction undefined")
    return a / r


def cover_distance(model: CrystalModel, x: CoverPoint, y: CoverPoint, pad: int | None = None) -> int:
    """Graph distance between two cover vertices.

    Breadth-first search over cover vertices restricted to the bounding box
    of the two deck coordinates, padded by ``pad`` (default: number of
    quotient vertices times the largest shift, plus one).  Edges are
    traversed in both directions.
    """
    if x.vertex not in model.index or y.vertex not in model.index:
        raise PreconditionError("cover point vertex not in model")
    if x == y:
        return 0
    if pad is None:
        smax = int(np.max(np.abs(model.shifts))) if len(model.edges) else 1
        pad = model.n * max(smax, 1) + 1
    gx = np.array(x.deck)
    gy = np.array(y.deck)
    lo = np.minimum(gx, gy) - pad
    hi = np.maximum(gx, gy) + pad

    nbrs: list[list[tuple[int, tuple[int, ...]]]] = [[] for _ in range(model.n)]
    for e in model.edges:
        s, t = model.index[e.src], model.index[e.dst]
        nbrs[s].append((t, e.shift))
        nbrs[t].append((s, tuple(-c for c in e.shift)))

    start = (model.index[y.vertex], tuple(y.deck))
    goal = (model.index[x.vertex], tuple(x.deck))
    dist = {start: 0}
    q = deque([start])
    while q:
        u = q.popleft()
        du = dist[u]
        v, g = u
        for w, sh in nbrs[v]:
            g2 = tuple(a + b for a, b in zip(g, sh))
            if any(c < l or c > hh for c, l, hh in zip(g2, lo, hi)):
                continue
            nxt = (w, g2)
            if nxt not in dist:
                if nxt == goal:
                    return du + 1
                dist[nxt] = du + 1
                q.append(nxt)
    raise PreconditionError("target not reachable inside the search box; increase pad")


def quasi_isometry_constants(model: CrystalModel, h: AdditiveFunction,
                             pairs: Sequence[tuple[CoverPoint, CoverPoint]],
                             r_h: float = 0.0) -> dict:
    """Empirical constants for ``C^-1 d_X - R <= |h(x)-h(y)| <= C d_X + R``.

    Returns the per-pair ratios together with the smallest ``C`` for which
    ``d_X / C <= |h(x) - h(y)| <= C d_X`` on every pair whose cover
    distance exceeds ``r_h``.
    """
    ratios = []
    for x, y in pairs:
        dx = cover_distance(model, x, y)
        if dx <= r_h:
            continue
        dh = float(np.linalg.norm(displacement(h, x, y)))
        ratios.append((dx, dh))
    if not ratios:
        return {"C": float("nan"), "R_h": r_h, "count": 0}
    ar = np.array(ratios, dtype=float)
    with np.errstate(divide="ignore"):
        c1 = np.max(ar[:, 0] / np.where(ar[:, 1] > 0, ar[:, 1], np.nan))
        c2 = np.max(ar[:, 1] / ar[:, 0])
    return {"C": float(max(c1, c2, 1.0)), "R_h": r_h, "count": len(ratios),
            "max_dX_over_dh": float(c1), "max_dh_over_dX": float(c2)}
