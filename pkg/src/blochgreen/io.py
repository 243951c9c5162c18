"""JSON model files and CSV reports."""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from numbers import Real
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .crystal import AdditiveFunction, CrystalModel, Edge, validate_model
from .errors import FileError, SchemaError

__all__ = [
    "parse_model",
    "model_from_dict",
    "model_to_dict",
    "parse_offsets",
    "load_fixture",
    "fixture_names",
    "emit_csv",
    "read_csv",
    "format_value",
]


def _load_json(path) -> object:
    p = Path(path)
    if not p.is_file():
        raise FileError(f"no such file: {p}")
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot read {p}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{p}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          line=exc.lineno) from exc


def _weight(raw, where: str) -> complex:
    # bare numbers are real weights
    if isinstance(raw, bool):
        raise SchemaError(f"{where}: weight must be a number or {{re, im}}")
    if isinstance(raw, Real):
        return complex(float(raw), 0.0)
    if isinstance(raw, Mapping):
        extra = set(raw) - {"re", "im"}
        if extra or "re" not in raw:
            raise SchemaError(f"{where}: weight object needs key 're' and optional 'im'")
        re, im = raw["re"], raw.get("im", 0.0)
        if not all(isinstance(v, Real) and not isinstance(v, bool) for v in (re, im)):
            raise SchemaError(f"{where}: weight components must be numbers")
        return complex(float(re), float(im))
    raise SchemaError(f"{where}: weight must be a number or {{re, im}}")


def model_from_dict(obj, validate: bool = True, source: str = "model") -> CrystalModel:
    """Build a model from its JSON object form.

    Raises
    ------
    SchemaError
        With the offending field or edge index in the message.
    """
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{source}: top level must be an object")
    for key in ("dimension", "vertices", "edges", "potential"):
        if key not in obj:
            raise SchemaError(f"{source}: missing key '{key}'", field=key)
    d = obj["dimension"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise SchemaError(f"{source}: 'dimension' must be a positive integer", field="dimension")
    verts = obj["vertices"]
    if not isinstance(verts, list) or not verts or not all(isinstance(v, str) for v in verts):
        raise SchemaError(f"{source}: 'vertices' must be a nonempty array of strings", field="vertices")
    if len(set(verts)) != len(verts):
        raise SchemaError(f"{source}: duplicate vertex labels", field="vertices")
    pot = obj["potential"]
    if not isinstance(pot, Mapping):
        raise SchemaError(f"{source}: 'potential' must be an object vertex -> number", field="potential")
    for v in verts:
        if v not in pot or not isinstance(pot[v], Real) or isinstance(pot[v], bool):
            raise SchemaError(f"{source}: potential of vertex {v!r} missing or not a number",
                              field="potential")
    unknown = set(pot) - set(verts)
    if unknown:
        raise SchemaError(f"{source}: potential given for unknown vertices {sorted(unknown)}",
                          field="potential")
    symmetric = obj.get("symmetric", True)
    if not isinstance(symmetric, bool):
        raise SchemaError(f"{source}: 'symmetric' must be a boolean", field="symmetric")
    raw_edges = obj["edges"]
    if not isinstance(raw_edges, list):
        raise SchemaError(f"{source}: 'edges' must be an array", field="edges")
    edges = []
    for i, e in enumerate(raw_edges):
        where = f"{source}: edge {i}"
        if not isinstance(e, Mapping):
            raise SchemaError(f"{where}: must be an object", edge=i)
        for key in ("from", "to", "shift", "weight"):
            if key not in e:
                raise SchemaError(f"{where}: missing key '{key}'", edge=i)
        if e["from"] not in verts or e["to"] not in verts:
            raise SchemaError(f"{where}: unknown endpoint", edge=i)
        sh = e["shift"]
        if not isinstance(sh, list) or len(sh) != d:
            raise SchemaError(f"{where}: shift must be an array of length {d}", edge=i)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in sh):
            raise SchemaError(f"{where}: shift entries must be integers", edge=i)
        edges.append(Edge(e["from"], e["to"], tuple(sh), _weight(e["weight"], where)))
    model = CrystalModel(d, tuple(verts), tuple(edges),
                         tuple(float(pot[v]) for v in verts), symmetric,
                         str(obj.get("name", "")))
    return validate_model(model) if validate else model


def model_to_dict(model: CrystalModel) -> dict:
    return {
        "name": model.name,
        "dimension": model.d,
        "vertices": list(model.vertices),
        "edges": [{"from": e.src, "to": e.dst, "shift": list(e.shift),
                   "weight": {"re": complex(e.weight).real, "im": complex(e.weight).imag}}
                  for e in model.edges],
        "potential": dict(zip(model.vertices, model.potential)),
        "symmetric": model.symmetric,
    }


def parse_model(path, validate: bool = True) -> CrystalModel:
    """Read, schema-check and validate a model file."""
    obj = _load_json(path)
    m = model_from_dict(obj, validate=validate, source=str(path))
    if not m.name:
        m = CrystalModel(m.d, m.vertices, m.edges, m.potential, m.symmetric,
                         Path(path).stem, m.validated)
    return m


def parse_offsets(path, model: CrystalModel) -> AdditiveFunction:
    """Read an offsets file (object vertex -> array of d numbers)."""
    obj = _load_json(path)
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{path}: offsets must be an object vertex -> array")
    for v, off in obj.items():
        if not isinstance(off, list) or not all(isinstance(c, Real) and not isinstance(c, bool)
                                                for c in off):
            raise SchemaError(f"{path}: offset of vertex {v!r} must be an array of numbers")
    return AdditiveFunction.from_mapping(model, obj)


def fixture_names() -> list[str]:
    root = resources.files("blochgreen") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str, validate: bool = True) -> CrystalModel:
    """Load one of the shipped fixtures by name (``free2``, ``stripe2`` ...)."""
    root = resources.files("blochgreen") / "fixtures"
    f = root / f"{name}.json"
    if not f.is_file():
        raise FileError(f"unknown fixture {name!r}; available: {fixture_names()}")
    obj = json.loads(f.read_text(encoding="utf-8"))
    return model_from_dict(obj, validate=validate, source=name)


def format_value(v) -> str:
    """Text form used in CSV cells: 17 significant digits for floats."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    if isinstance(v, (complex, np.complexfloating)):
        raise TypeError("split complex values into real columns before writing")
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(format_value(x) for x in v)
    return str(v)


def emit_csv(rows: Iterable[Mapping], path, columns: Sequence[str] | None = None) -> None:
    """Write a header row plus one row per mapping, LF line endings.

    When ``rows`` is empty, ``columns`` gives the header (possibly empty).
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([format_value(r[c]) for c in columns])
    except OSError as exc:
        raise FileError(f"cannot write {p}: {exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw text cells of a CSV written by :func:`emit_csv`."""
    with open(path, encoding="utf-8", newline="") as f:
        data = list(csv.reader(f))
    if not data:
        return [], []
    return data[0], data[1:]
