"""Command line driver.

Each task loads a model, runs one pipeline and writes CSV tables plus a
``summary.json`` into the output directory.  Errors are reported in the
summary and on stderr as JSON and mapped to the exit code of the error class.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import eval_edge, eval_gap_interior
from .continuation import gamma_fan_rows, solve_beta_s
from .crystal import AdditiveFunction, CoverPoint, CrystalModel
from .errors import BlochGreenError, ConfigError, DimensionTooLow, FileError, all_error_classes
from .floquet import (
    BrillouinGrid,
    band_rows,
    detect_gaps,
    edge_for_lambda,
    locate_edge,
    sample_bands,
    verify_assumptions,
)
from .io import emit_csv, fixture_names, load_fixture, parse_model, parse_offsets
from .martin import (
    find_beta0,
    martin_kernel_check,
    minimal_solution_residual,
    perron_dispersion,
    solve_gamma_level,
)
from .oracle import GreenComparison, QuadratureSpec, green_edge_limit, green_quadrature

__all__ = ["PipelineConfig", "build_parser", "config_from_args", "run", "main", "TASKS"]

TASKS = ("bands", "gaps", "edge", "gap-asymptotics", "edge-asymptotics", "martin")


@dataclass
class PipelineConfig:
    """Validated inputs of one pipeline run."""

    model: str
    task: str
    out: Path
    offsets: str | None = None
    lam: float | None = None
    directions: list = field(default_factory=list)
    decks: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    grid: int | None = None
    tolerance: float = 1e-9
    seed: int = 0
    band: int | None = None
    side: str = "lower"
    vertices: tuple[str, str] | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.task == "gap-asymptotics" and self.lam is None:
            raise ConfigError("task gap-asymptotics requires --lambda")
        if self.task in ("gap-asymptotics", "edge-asymptotics") and not self.decks:
            raise ConfigError(f"task {self.task} requires at least one --deck vector")
        if self.task in ("gap-asymptotics", "edge-asymptotics", "martin") and not self.distances:
            raise ConfigError(f"task {self.task} requires --distances")
        if any(n <= 0 for n in self.distances):
            raise ConfigError("distances must be positive integers")
        if self.grid is not None and self.grid < 8:
            raise ConfigError("--grid must be at least 8")
        if not self.tolerance > 0:
            raise ConfigError("--tolerance must be positive")
        if self.side not in ("lower", "upper"):
            raise ConfigError("--side must be lower or upper")


def _vector(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}") from exc


def _int_vector(text: str) -> list[int]:
    vals = _vector(text)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"deck vector {text!r} must be integral")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blochgreen",
                                description="Band structure and Green's function asymptotics "
                                            "of periodic operators on crystal graphs.")
    p.add_argument("--model", required=True,
                   help="model JSON file, or the name of a bundled fixture "
                        f"({', '.join(fixture_names())})")
    p.add_argument("--offsets", help="offsets JSON file (vertex -> d-vector)")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--lambda", dest="lam", type=float, help="spectral parameter")
    p.add_argument("--direction", action="append", default=[],
                   help="unit direction s as comma list; repeatable")
    p.add_argument("--deck", action="append", default=[],
                   help="deck vector g as comma list; pairs are (vx, n g), (vy, 0); repeatable")
    p.add_argument("--distances", default="", help="comma list of multipliers n")
    p.add_argument("--vertices", help="vertex labels of x and y as 'vx,vy' (default: first vertex)")
    p.add_argument("--band", type=int, help="band index for --task edge")
    p.add_argument("--side", default="lower", help="edge side for --task edge: lower or upper")
    p.add_argument("--grid", type=int, help="Brillouin grid nodes per axis")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--tolerance", type=float, default=1e-9, help="quadrature relative tolerance")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def config_from_args(ns: argparse.Namespace) -> PipelineConfig:
    verts = None
    if ns.vertices:
        parts = [v.strip() for v in ns.vertices.split(",")]
        if len(parts) != 2:
            raise ConfigError("--vertices expects 'vx,vy'")
        verts = (parts[0], parts[1])
    dist = [int(v) for v in _int_vector(ns.distances)] if ns.distances else []
    return PipelineConfig(model=ns.model, task=ns.task, out=Path(ns.out), offsets=ns.offsets,
                          lam=ns.lam, directions=[_vector(s) for s in ns.direction],
                          decks=[_int_vector(g) for g in ns.deck], distances=dist, grid=ns.grid,
                          tolerance=ns.tolerance, seed=ns.seed, band=ns.band, side=ns.side,
                          vertices=verts)


# ---------------------------------------------------------------------------
def _load(cfg: PipelineConfig) -> tuple[CrystalModel, AdditiveFunction]:
    path = Path(cfg.model)
    if path.exists():
        model = parse_model(path)
    elif cfg.model in fixture_names():
        model = load_fixture(cfg.model)
    else:
        raise FileError(f"model file not found: {cfg.model}")
    h = parse_offsets(cfg.offsets, model) if cfg.offsets else AdditiveFunction.zero(model)
    return model, h


def _grid(cfg: PipelineConfig, model: CrystalModel) -> BrillouinGrid:
    m = cfg.grid if cfg.grid is not None else {1: 256, 2: 64}.get(model.d, 16)
    return BrillouinGrid(model.d, m)


def _pair_vertices(cfg: PipelineConfig, model: CrystalModel) -> tuple[str, str]:
    vx, vy = cfg.vertices or (model.vertices[0], model.vertices[0])
    for v in (vx, vy):
        if v not in model.index:
            raise ConfigError(f"unknown vertex {v!r}")
    return vx, vy


def _check_deck(g, d):
    if len(g) != d:
        raise ConfigError(f"deck vector {g} must have length {d}")
    if not any(g):
        raise ConfigError("deck vector must be nonzero")


def _task_bands(cfg, model, h, summary):
    bands = sample_bands(model, h, _grid(cfg, model))
    emit_csv(band_rows(bands), cfg.out / "bands.csv")
    r = bands.ranges()
    summary["bands"] = {"rows": int(bands.values.shape[0]), "ranges": r.tolist(),
                        "min": float(r[:, 0].min()), "max": float(r[:, 1].max())}
    return bands


def _task_gaps(cfg, model, h, summary):
    bands = _task_bands(cfg, model, h, summary)
    gaps = detect_gaps(bands)
    rows = [{"lower_band": g.lower_band, "lo": g.lo, "hi": g.hi, "kind": g.kind, "width": g.width}
            for g in gaps]
    emit_csv(rows, cfg.out / "gaps.csv", ["lower_band", "lo", "hi", "kind", "width"])
    summary["gaps"] = rows


def _task_edge(cfg, model, h, summary):
    grid = _grid(cfg, model)
    if cfg.lam is not None and cfg.band is None:
        gap, edge = edge_for_lambda(model, h, cfg.lam, grid)
    else:
        gap, edge = None, locate_edge(model, h, cfg.band or 1, cfg.side, grid)
    summary["edge"] = edge.as_dict()
    verify_assumptions(model, h, edge, gap, cfg.lam, grid, require_a5=cfg.lam is not None)
    summary["edge"] = edge.as_dict()
    if cfg.lam is not None and cfg.directions:
        rows = gamma_fan_rows(model, h, edge, cfg.lam, cfg.directions)
        emit_csv(rows, cfg.out / "gamma.csv")
        summary["gamma"] = rows
    return edge


def _task_gap_asymptotics(cfg, model, h, summary):
    grid = _grid(cfg, model)
    gap, edge = edge_for_lambda(model, h, cfg.lam, grid)
    summary["gap"] = {"lo": gap.lo, "hi": gap.hi, "kind": gap.kind}
    summary["edge"] = edge.as_dict()
    dirs = [np.asarray(g, float) / np.linalg.norm(g) for g in cfg.decks] + \
        [np.asarray(s, float) for s in cfg.directions]
    verify_assumptions(model, h, edge, gap, cfg.lam, grid, directions=dirs or None)
    summary["edge"] = edge.as_dict()
    vx, vy = _pair_vertices(cfg, model)
    spec = QuadratureSpec(tol=cfg.tolerance)
    comp, factors, fan = [], [], []
    for g in cfg.decks:
        _check_deck(g, model.d)
        sol = solve_beta_s(model, h, edge, cfg.lam, np.asarray(g, float) / np.linalg.norm(g))
        fan.append(sol.as_dict())
        for n in cfg.distances:
            x = CoverPoint.of(vx, [n * c for c in g])
            y = CoverPoint.of(vy, [0] * model.d)
            s_pair = h(x) - h(y)
            if np.linalg.norm(s_pair / np.linalg.norm(s_pair) - sol.s) > 1e-12:
                sol_n = solve_beta_s(model, h, edge, cfg.lam, s_pair)
            else:
                sol_n = sol
            av = eval_gap_interior(model, h, edge, sol_n, x, y)
            G = green_quadrature(model, h, cfg.lam, x, y, spec, shift="auto")
            comp.append(GreenComparison(x, y, cfg.lam, G, av.value, av.dist).row())
            factors.append(av.row())
    _write_comparison(cfg, comp, factors, summary)
    summary["directions"] = fan


def _task_edge_asymptotics(cfg, model, h, summary):
    if model.d < 3:
        raise DimensionTooLow("edge asymptotics need d >= 3")
    grid = _grid(cfg, model)
    edge = locate_edge(model, h, cfg.band or 1, cfg.side, grid)
    verify_assumptions(model, h, edge, None, None, grid, require_a5=False)
    summary["edge"] = edge.as_dict()
    vx, vy = _pair_vertices(cfg, model)
    comp, factors = [], []
    for g in cfg.decks:
        _check_deck(g, model.d)
        for n in cfg.distances:
            x = CoverPoint.of(vx, [n * c for c in g])
            y = CoverPoint.of(vy, [0] * model.d)
            av = eval_edge(model, h, edge, x, y)
            G = green_edge_limit(model, h, edge, x, y)
            comp.append(GreenComparison(x, y, edge.lam_edge, G, av.value, av.dist).row())
            factors.append(av.row())
    _write_comparison(cfg, comp, factors, summary)


def _write_comparison(cfg, comp, factors, summary):
    emit_csv(comp, cfg.out / "comparison.csv",
             ["x", "y", "n", "lambda", "oracle", "oracle_im", "asymptotic", "asymptotic_im", "relError"])
    emit_csv(factors, cfg.out / "asymptotics.csv")
    summary["comparisons"] = comp


def _task_martin(cfg, model, h, summary):
    beta0, lam_a = find_beta0(model, h)
    lam = lam_a if cfg.lam is None else cfg.lam
    summary["perron"] = {"beta_0": beta0.tolist(), "Lambda_A": lam_a, "lambda": lam}
    dirs = [np.asarray(s, float) for s in cfg.directions] or \
        [np.asarray(g, float) for g in cfg.decks]
    if not dirs:
        raise ConfigError("task martin requires --direction or --deck")
    rng = np.random.default_rng(cfg.seed)
    vx, vy = _pair_vertices(cfg, model)
    fan, kernel_rows, checks = [], [], []
    if lam < lam_a:
        for s in dirs:
            sol = solve_gamma_level(model, h, lam, s, beta0=beta0)
            pts = [CoverPoint.of(model.vertices[int(rng.integers(model.n))],
                                 rng.integers(-5, 6, size=model.d).tolist()) for _ in range(8)]
            row = {f"s_{m + 1}": float(sol.s[m]) for m in range(model.d)}
            row.update({f"beta_{m + 1}": float(sol.beta[m]) for m in range(model.d)})
            row.update({"Lambda": sol.state.Lam, "grad_norm": sol.grad_norm, "proj_det": sol.proj_det,
                        "residual": sol.residual,
                        "solution_residual": minimal_solution_residual(model, h, sol.state, pts)})
            fan.append(row)
        emit_csv(fan, cfg.out / "gamma.csv")
    elif model.d < 3:
        raise DimensionTooLow("the Green's function at Lambda_A exists only for d >= 3")
    x = CoverPoint.of(vx, [1] * model.d)
    x0 = CoverPoint.of(vy, [0] * model.d)
    for s in dirs:
        chk = martin_kernel_check(model, h, lam, x, x0, s, cfg.distances,
                                  QuadratureSpec(tol=cfg.tolerance))
        for r in chk.rows():
            r = {"g_s": ",".join(map(str, chk.g_s)), **r}
            kernel_rows.append(r)
        checks.append({"g_s": list(chk.g_s), "predicted": chk.predicted, "kernels": chk.kernels,
                       "errors": chk.errors, "decreasing": chk.decreasing})
    emit_csv(kernel_rows, cfg.out / "martin.csv", ["g_s", "m", "kernel", "predicted", "absError"])
    summary["gamma"] = fan
    summary["martin"] = checks
    st = perron_dispersion(model, h, beta0)
    summary["perron"]["hessLambda"] = st.hessLam.tolist()


_DISPATCH = {
    "bands": _task_bands,
    "gaps": _task_gaps,
    "edge": _task_edge,
    "gap-asymptotics": _task_gap_asymptotics,
    "edge-asymptotics": _task_edge_asymptotics,
    "martin": _task_martin,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def run(cfg: PipelineConfig) -> int:
    """Run one pipeline; return the process exit status.

    ``summary.json`` is written in every case, with ``status`` ``"ok"`` or
    ``"error"`` and the machine-readable error record.
    """
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileError(f"cannot create output directory {cfg.out}: {exc}") from exc
    summary: dict = {"task": cfg.task, "model": cfg.model, "lambda": cfg.lam, "seed": cfg.seed,
                     "version": __version__}
    status = 0
    try:
        model, h = _load(cfg)
        summary["model_name"] = model.name
        summary["dimension"] = model.d
        summary["symmetric"] = model.symmetric
        _DISPATCH[cfg.task](cfg, model, h, summary)
        summary["status"] = "ok"
    except BlochGreenError as exc:
        summary["status"] = "error"
        summary["error"] = {**exc.to_dict(), "exit_code": exc.exit_code}
        print(json.dumps(_jsonable(summary["error"])), file=sys.stderr)
        status = exc.exit_code
    with open(cfg.out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(summary), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except BlochGreenError as exc:
        print(json.dumps({**exc.to_dict(), "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code
    try:
        return run(cfg)
    except BlochGreenError as exc:
        print(json.dumps({**exc.to_dict(), "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code


def exit_code_table() -> dict[str, int]:
    """Error code to exit status, as documented."""
    return {cls.code: cls.exit_code for cls in all_error_classes()}


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
