"""Scene files: JSON descriptions of a domain, plates, metric configuration and run settings.

Scenes are validated against :data:`SCHEMA` (unknown keys are rejected) and
then rebuilt into library objects, which re-checks every containment
invariant.  Failures raise :class:`~capbound.errors.SceneError` carrying the
JSON path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema

from .capacity import Condenser
from .capmetric import Budget, MetricConfig
from .errors import CapboundError, SceneError
from .geometry import DomainSpec, PlateSpec, Point, domain_from_dict, plate_from_dict, shape_from_dict

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=(), **extra) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False, **extra}


_SHAPE = {"oneOf": [
    _obj({"type": {"const": "segment"}, "a": _point, "b": _point}, ["type", "a", "b"]),
    _obj({"type": {"const": "arc"}, "center": _point, "radius": _pos, "start": _num, "stop": _num},
         ["type", "center", "radius", "start", "stop"]),
    _obj({"type": {"const": "disk"}, "center": _point, "radius": _pos}, ["type", "center", "radius"]),
    _obj({"type": {"const": "annulus"}, "center": _point, "inner": _pos, "outer": _pos},
         ["type", "center", "inner", "outer"]),
    _obj({"type": {"const": "box"}, "xmin": _num, "ymin": _num, "xmax": _num, "ymax": _num},
         ["type", "xmin", "ymin", "xmax", "ymax"]),
    _obj({"type": {"const": "polygon"}, "vertices": {"type": "array", "items": _point, "minItems": 3}},
         ["type", "vertices"]),
]}

_PLATE = _obj({"role": {"enum": ["inner_continuum", "boundary_plate"]},
               "geometry": {"type": "array", "items": _SHAPE}}, ["role"])

_DOMAIN = {"oneOf": [
    _obj({"kind": {"const": "disk"}, "params": _obj({"center": _point, "radius": _pos})}, ["kind"]),
    _obj({"kind": {"const": "rectangle"},
          "params": _obj({"xmin": _num, "ymin": _num, "xmax": _num, "ymax": _num})}, ["kind"]),
    _obj({"kind": {"const": "slit_disk"},
          "params": _obj({"radius": _pos, "slits": {"type": "array", "items": {
              "type": "array", "items": _point, "minItems": 2, "maxItems": 2}}})}, ["kind"]),
    _obj({"kind": {"const": "comb"}, "params": _obj({"levels": {"type": "integer", "minimum": 1}})}, ["kind"]),
    _obj({"kind": {"const": "cantor_fan"},
          "params": _obj({"depth": {"type": "integer", "minimum": 0}, "radius": _pos})}, ["kind"]),
    _obj({"kind": {"const": "polygon"},
          "params": _obj({"vertices": {"type": "array", "items": _point, "minItems": 3}}, ["vertices"])},
         ["kind", "params"]),
    _obj({"kind": {"const": "snowflake"},
          "params": _obj({"iterations": {"type": "integer", "minimum": 0}, "radius": _pos})}, ["kind"]),
]}

_MAP = {"type": "object", "properties": {
    "kind": {"enum": ["mobius", "power", "affine_stretch", "joukowski", "compose", "disk_automorphism"]},
    "params": {"type": "array"},
    "parts": {"type": "array", "items": {"$ref": "#/$defs/map"}},
}, "required": ["kind"], "additionalProperties": False}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"map": _MAP},
    **_obj({
        "name": {"type": "string"},
        "domain": _DOMAIN,
        "condenser": _obj({"plate0": _PLATE, "plate1": _PLATE}, ["plate0", "plate1"]),
        "metric": _obj({"F": _PLATE, "V": _SHAPE, "noise_floor": _pos}, ["F", "V"]),
        "h": _pos,
        "refine": {"type": "integer", "minimum": 0, "maximum": 3},
        "seed": {"type": "integer", "minimum": 0},
        "budget": _obj({"rounds": {"type": "integer", "minimum": 0},
                        "moves_per_round": {"type": "integer", "minimum": 0},
                        "vertices": {"type": "integer", "minimum": 3},
                        "coarse": {"type": "boolean"}}),
        "pairs": {"type": "array", "items": {"type": "array", "items": _point, "minItems": 2, "maxItems": 2}},
        "boundary": _obj({"suite": {"enum": ["disk", "slit", "comb", "fan"]}, "tol": _pos,
                          "eps": {"type": "array", "items": _pos, "minItems": 1}}),
        "function": _obj({"tag": {"type": "string"}, "h": _pos, "z0": _point, "eps": {"type": "array", "items": {"type": "number", "minimum": 0}}}),
        "map": {"$ref": "#/$defs/map"},
    }, ["domain", "h"]),
}


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


@dataclass(frozen=True, eq=False)
class Scene:
    data: dict
    domain: DomainSpec
    h: float
    refine: int
    seed: int
    budget: Budget
    condenser: Condenser | None
    metric: MetricConfig | None
    source: str = ""

    @property
    def hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def name(self) -> str:
        return self.data.get("name", Path(self.source).stem if self.source else "scene")

    @property
    def pairs(self) -> list[tuple[Point, Point]]:
        return [(Point(*a), Point(*b)) for a, b in self.data.get("pairs", [])]

    def section(self, key: str) -> dict:
        return dict(self.data.get(key, {}))

    def with_overrides(self, **kw) -> "Scene":
        data = dict(self.data)
        for k, v in kw.items():
            if v is not None:
                data[k] = v
        return parse(data, self.source)


def _specific(err: jsonschema.ValidationError) -> jsonschema.ValidationError:
    """Descend into the oneOf branch whose ``kind``/``type`` discriminator matched."""
    while err.validator == "oneOf" and err.context:
        branches: dict[int, list] = {}
        for e in err.context:
            branches.setdefault(e.schema_path[0], []).append(e)
        live = [errs for errs in branches.values() if not any(e.validator == "const" for e in errs)]
        if len(live) != 1:
            break
        err = max(live[0], key=lambda e: len(e.absolute_path))
    return err


def validate(data: Any) -> None:
    """Raise :class:`SceneError` with the JSON path of the first offending field."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = list(v.iter_errors(data))
    if errors:
        err = _specific(jsonschema.exceptions.best_match(errors))
        path = _path(err.absolute_path)
        raise SceneError(err.message, path)


def parse(data: dict, source: str = "") -> Scene:
    """Validate and build a scene from decoded JSON."""
    validate(data)

    def build(path, fn, *args):
        try:
            return fn(*args)
        except (ValueError, TypeError, KeyError, CapboundError) as exc:
            raise SceneError(str(exc), path) from exc

    domain = build("$.domain", domain_from_dict, data["domain"])
    b = data.get("budget", {})
    budget = Budget(**b)
    condenser = None
    if "condenser" in data:
        c = data["condenser"]
        p0 = build("$.condenser.plate0", plate_from_dict, c["plate0"])
        p1 = build("$.condenser.plate1", plate_from_dict, c["plate1"])
        condenser = build("$.condenser", Condenser, domain, p0, p1)
    metric = None
    if "metric" in data:
        m = data["metric"]
        F = build("$.metric.F", plate_from_dict, m["F"])
        V = build("$.metric.V", shape_from_dict, m["V"])
        kw = {"noise_floor": m["noise_floor"]} if "noise_floor" in m else {}
        metric = build("$.metric", MetricConfig, domain, F, V, float(data["h"]), budget,
                       int(data.get("seed", 0)), **kw)
    return Scene(data, domain, float(data["h"]), int(data.get("refine", 0)), int(data.get("seed", 0)),
                 budget, condenser, metric, source)


def load(path: str | Path) -> Scene:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise SceneError(f"scene file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"invalid JSON: {exc}") from exc
    return parse(data, str(path))


def shipped(name: str) -> Path:
    """Path of a scene shipped with the package."""
    p = Path(__file__).with_name("scenes") / f"{name}.json"
    if not p.exists():
        raise SceneError(f"no shipped scene named {name!r}")
    return p
