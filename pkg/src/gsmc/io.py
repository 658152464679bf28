"""File formats: graphs, run configuration, plan archives and run manifests."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, fields
from importlib import metadata
from typing import Any, Iterable, Mapping

import numpy as np

from .graph import ConfigurationError, DistrictingScheme, GraphError, MapGraph, Plan
from .smc import Ensemble, RunConfig
from .target import PopulationBounds, TargetSpec


class SchemaError(GraphError):
    """A graph or configuration document does not follow its schema."""


def library_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def digest(obj: Any) -> str:
    return hashlib.sha256(_canonical_json(obj).encode()).hexdigest()


# ----------------------------------------------------------------------
# graphs
# ----------------------------------------------------------------------


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise SchemaError(f"{path}: {msg}")


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def graph_from_dict(doc: Mapping[str, Any]) -> MapGraph:
    """Build a graph from the JSON document layout used by :func:`load_graph`."""
    _require(isinstance(doc, Mapping), "$", "expected an object")
    _require("vertices" in doc, "$", "missing field 'vertices'")
    _require("edges" in doc, "$", "missing field 'edges'")
    verts = doc["vertices"]
    _require(isinstance(verts, list) and len(verts) > 0, "$.vertices", "expected a non-empty array")
    ids: list[str] = []
    pops: list[int] = []
    units: list[str | None] = []
    attr_names: set[str] | None = None
    attrs: dict[str, list[float]] = {}
    index: dict[str, int] = {}
    for i, v in enumerate(verts):
        p = f"$.vertices[{i}]"
        _require(isinstance(v, Mapping), p, "expected an object")
        _require(isinstance(v.get("id"), str), f"{p}.id", "expected a string")
        _require(v["id"] not in index, f"{p}.id", f"duplicate vertex id {v['id']!r}")
        pop = v.get("pop")
        _require(isinstance(pop, int) and not isinstance(pop, bool) and pop >= 0, f"{p}.pop",
                 "expected a non-negative integer")
        a = v.get("attributes", {})
        _require(isinstance(a, Mapping), f"{p}.attributes", "expected an object")
        for k, x in a.items():
            _require(_is_number(x), f"{p}.attributes.{k}", "expected a number")
        if attr_names is None:
            attr_names = set(a)
        _require(set(a) == attr_names, f"{p}.attributes",
                 f"attribute names {sorted(a)} differ from the first vertex's {sorted(attr_names)}")
        for k, x in a.items():
            attrs.setdefault(k, []).append(float(x))
        unit = v.get("unit")
        _require(unit is None or isinstance(unit, str), f"{p}.unit", "expected a string")
        index[v["id"]] = i
        ids.append(v["id"])
        pops.append(pop)
        units.append(unit)
    edges_doc = doc["edges"]
    _require(isinstance(edges_doc, list), "$.edges", "expected an array")
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for j, e in enumerate(edges_doc):
        p = f"$.edges[{j}]"
        _require(isinstance(e, list) and len(e) == 2, p, "expected a pair of vertex ids")
        for side in e:
            _require(isinstance(side, str) and side in index, p, f"unknown vertex id {side!r}")
        a, b = index[e[0]], index[e[1]]
        _require(a != b, p, f"self loop at {e[0]!r}")
        key = (min(a, b), max(a, b))
        _require(key not in seen, p, f"duplicate edge ({ids[key[0]]!r}, {ids[key[1]]!r})")
        seen.add(key)
        edges.append((a, b))
    admin_unit = None
    unit_names = None
    if any(u is not None for u in units):
        missing = [i for i, u in enumerate(units) if u is None]
        _require(not missing, f"$.vertices[{missing[0] if missing else 0}].unit",
                 "either every vertex has a unit or none does")
        unit_names = list(dict.fromkeys(units))
        lookup = {u: k for k, u in enumerate(unit_names)}
        admin_unit = [lookup[u] for u in units]
    return MapGraph(ids, pops, edges, attributes=attrs or None, admin_unit=admin_unit, unit_names=unit_names)


def graph_to_dict(graph: MapGraph) -> dict:
    verts = []
    for i, vid in enumerate(graph.ids):
        rec: dict[str, Any] = {"id": vid, "pop": int(graph.pop[i])}
        if graph.attributes:
            rec["attributes"] = {k: float(v[i]) for k, v in graph.attributes.items()}
        if graph.admin_unit is not None:
            rec["unit"] = graph.unit_names[graph.admin_unit[i]]
        verts.append(rec)
    edges = [[graph.ids[a], graph.ids[b]] for a, b in graph.edges]
    return {"vertices": verts, "edges": edges}


def load_graph(path: str | os.PathLike) -> MapGraph:
    """Read a graph document; vertex indices follow file order."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_dict(doc)


def save_graph(graph: MapGraph, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph), fh, indent=1)
        fh.write("\n")


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

_RUN_FIELDS = {f.name for f in fields(RunConfig)}
_TARGET_FIELDS = {"rho", "pop_tolerance", "pop_bounds", "soft_terms", "space", "hierarchical"}
_SCHEME_FIELDS = {"D", "S", "d_min", "d_max"}


def _check_keys(section: Mapping, allowed: set[str], path: str) -> None:
    _require(isinstance(section, Mapping), path, "expected an object")
    for k in section:
        _require(k in allowed, f"{path}.{k}", f"unknown field; allowed: {sorted(allowed)}")


def load_config(path: str | os.PathLike | None) -> dict:
    """Read a run configuration: ``{"scheme": ..., "target": ..., "run": ...}``."""
    if path is None:
        return {"scheme": {}, "target": {}, "run": {}}
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    _check_keys(doc, {"scheme", "target", "run"}, "$")
    out = {"scheme": dict(doc.get("scheme", {})), "target": dict(doc.get("target", {})), "run": dict(doc.get("run", {}))}
    _check_keys(out["scheme"], _SCHEME_FIELDS, "$.scheme")
    _check_keys(out["target"], _TARGET_FIELDS, "$.target")
    _check_keys(out["run"], _RUN_FIELDS, "$.run")
    return out


def parse_scheme(text: str) -> DistrictingScheme:
    """``"D"`` for single-member districts or ``"D,S,dmin,dmax"``."""
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"scheme {text!r} must be 'D' or 'D,S,dmin,dmax'") from exc
    if len(parts) == 1:
        return DistrictingScheme.single_member(parts[0])
    if len(parts) == 4:
        return DistrictingScheme(*parts)
    raise ConfigurationError(f"scheme {text!r} must be 'D' or 'D,S,dmin,dmax'")


def build_scheme(section: Mapping[str, Any]) -> DistrictingScheme:
    if "D" not in section:
        raise ConfigurationError("the scheme needs a district count D")
    D = int(section["D"])
    return DistrictingScheme(D, int(section.get("S", D)), int(section.get("d_min", 1)), int(section.get("d_max", 1)))


def build_target(graph: MapGraph, scheme: DistrictingScheme, section: Mapping[str, Any]) -> TargetSpec:
    if "pop_bounds" in section:
        lo, hi = section["pop_bounds"]
        bounds = PopulationBounds(float(lo), float(hi), graph.total_pop / scheme.S)
    else:
        bounds = PopulationBounds.tolerance(graph, scheme.S, float(section.get("pop_tolerance", 0.0)))
    return TargetSpec(
        bounds,
        rho=float(section.get("rho", 1.0)),
        soft_terms=dict(section.get("soft_terms", {})),
        space=section.get("space", "graph"),
        hierarchical=bool(section.get("hierarchical", False)),
    )


def build_run(section: Mapping[str, Any]) -> RunConfig:
    return RunConfig(**section)


# ----------------------------------------------------------------------
# plan archives and manifests
# ----------------------------------------------------------------------


def _spec_dict(spec: TargetSpec) -> dict:
    b = spec.pop_bounds
    return {
        "rho": spec.rho,
        "pop_bounds": [b.lower, b.upper],
        "soft_terms": dict(sorted(spec.soft_terms.items())),
        "space": spec.space,
        "hierarchical": spec.hierarchical,
    }


def run_document(graph: MapGraph, scheme: DistrictingScheme, spec: TargetSpec, config: RunConfig) -> dict:
    """Everything that determines a run's output at one thread."""
    return {
        "graph_digest": digest(graph_to_dict(graph)),
        "scheme": asdict(scheme),
        "target": _spec_dict(spec),
        "run": config.to_dict(),
    }


def manifest(ens: Ensemble) -> dict:
    doc = run_document(ens.graph, ens.scheme, ens.spec, ens.config)
    return {
        "config_digest": digest(doc),
        "seed": ens.config.seed,
        "version": library_version(),
        "config": doc,
        "n_particles": ens.n,
        "log_z": ens.log_z,
        "stages": [asdict(s) for s in ens.stages],
    }


def manifest_path(path: str | os.PathLike) -> str:
    return f"{os.fspath(path)}.manifest.json"


def timing_path(path: str | os.PathLike) -> str:
    return f"{os.fspath(path)}.timing.json"


def write_plans(ens: Ensemble, path: str | os.PathLike, timing: Mapping[str, float] | None = None) -> None:
    """Write one JSON line per particle, a manifest next to it and, if given,
    wall-clock timings in a separate file so the manifest stays reproducible."""
    w = ens.weights
    with open(path, "w") as fh:
        for i in range(ens.n):
            rec = {
                "assignment": [int(x) for x in ens.assignment[i]],
                "sizes": [int(x) for x in ens.sizes[i, : ens.r]],
                "log_weight": float(ens.log_weights[i]),
                "normalized_weight": float(w[i]),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(manifest_path(path), "w") as fh:
        json.dump(manifest(ens), fh, indent=1, sort_keys=True)
        fh.write("\n")
    if timing is not None:
        with open(timing_path(path), "w") as fh:
            json.dump(dict(timing), fh, indent=1, sort_keys=True)
            fh.write("\n")


def read_plans(path: str | os.PathLike) -> tuple[list[Plan], np.ndarray, np.ndarray]:
    """Plans, log weights and normalized weights from a plan archive.

    Archives written by :func:`write_enumeration` have no weights; those come
    back as uniform.
    """
    plans: list[Plan] = []
    logw: list[float] = []
    w: list[float] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                plans.append(Plan(rec["assignment"], rec["sizes"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: malformed plan record ({exc})") from exc
            logw.append(float(rec.get("log_weight", 0.0)))
            w.append(float(rec.get("normalized_weight", np.nan)))
    wa = np.array(w)
    if len(wa) and np.isnan(wa).all():
        wa = np.full(len(plans), 1.0 / len(plans))
    return plans, np.array(logw), wa


def write_enumeration(plans: Iterable[Plan], path: str | os.PathLike, extra: Mapping[str, Any] | None = None) -> int:
    """Write an enumerated plan archive plus a manifest with the plan count."""
    n = 0
    with open(path, "w") as fh:
        for p in plans:
            a, s = p.canonical()
            fh.write(json.dumps({"assignment": list(a), "sizes": list(s)}, separators=(",", ":")) + "\n")
            n += 1
    with open(manifest_path(path), "w") as fh:
        json.dump({"count": n, "version": library_version(), **dict(extra or {})}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return n
