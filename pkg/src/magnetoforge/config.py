"""Run configuration files.

A run is fully described by one JSON document::

    {
      "mesh": {"box": {"n": 8, "inclusion": [[0.25, 0.25, 0.25], [0.75, 0.75, 0.75]], "graded": true}},
      "materials": {"1": {"type": "linear", "mu_r": 1.0},
                    "2": {"type": "bh_csv", "path": "steel_synthetic.csv"}},
      "source": {"type": "rectangle", "center": [0.5, 0.5, 0.5], "half_widths": [0.4, 0.4],
                 "current": 1000.0, "turns": 300, "wire_radius": 0.05},
      "formulation": "mixed",
      "p": 1,
      "newton": {"tol_rel": 1e-8},
      "output": {"dir": "out", "fields": false},
      "benchmark": {"levels": [4, 6, 8], "p": [1, 2], "ampere_turns": [3e5, 1e6]}
    }

``mesh`` is either ``{"path": "model.msh"}`` or a generated ``box``.
Relative paths are resolved against the directory of the config file.
``CONFIG_SCHEMA`` is the structural reference; :func:`load_config` adds the
semantic checks (tags bound, files present, p in {1, 2}).
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .material import MU0, EnergyLaw, LinearLaw, MaterialError, fit_energy, load_bh_csv
from .mesh import Mesh, MeshError, generate_box, load_msh
from .solver import NewtonConfig
from .sources import SourceError, SourceField, source_from_config

logger = logging.getLogger(__name__)

FORMULATION_CHOICES = ("mixed", "scalar", "vector", "all")

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_LOOP = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["uniform", "filament", "rectangle"]},
        "h0": _VEC3,
        "vertices": {"type": "array", "items": _VEC3, "minItems": 4},
        "center": _VEC3,
        "half_widths": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                        "minItems": 2, "maxItems": 2},
        "axis": {"enum": [0, 1, 2]},
        "current": {"type": "number"},
        "turns": {"type": "number"},
        "guard": {"type": "number", "exclusiveMinimum": 0},
        "wire_radius": {"type": "number", "minimum": 0},
        "gauge": {
            "type": "object",
            "required": ["lo", "hi", "ramp"],
            "properties": {"lo": _VEC3, "hi": _VEC3, "ramp": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "magnetoforge run configuration",
    "type": "object",
    "required": ["mesh", "materials", "source"],
    "properties": {
        "mesh": {
            "type": "object",
            "oneOf": [
                {"required": ["path"]},
                {"required": ["box"]},
            ],
            "properties": {
                "path": {"type": "string"},
                "box": {
                    "type": "object",
                    "required": ["n"],
                    "properties": {
                        "n": {"type": "integer", "minimum": 1},
                        "inclusion": {"type": "array", "items": _VEC3, "minItems": 2, "maxItems": 2},
                        "graded": {"type": "boolean"},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "materials": {
            "type": "object",
            "minProperties": 1,
            "patternProperties": {
                "^[0-9]+$": {
                    "type": "object",
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["linear", "bh_csv"]},
                        "mu": {"type": "number", "exclusiveMinimum": 0},
                        "mu_r": {"type": "number", "exclusiveMinimum": 0},
                        "path": {"type": "string"},
                    },
                    "additionalProperties": False,
                }
            },
            "additionalProperties": False,
        },
        "source": {"oneOf": [_LOOP, {"type": "array", "items": _LOOP, "minItems": 1}]},
        "formulation": {"enum": list(FORMULATION_CHOICES)},
        "p": {"type": "integer"},
        "newton": {"type": "object"},
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "fields": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "benchmark": {
            "type": "object",
            "properties": {
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "p": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "ampere_turns": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    formulation: str = "mixed"
    p: int = 1
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    out_dir: Path = Path("out")
    write_fields: bool = False
    name: str = "run"

    @property
    def mesh_spec(self) -> dict:
        return self.raw["mesh"]

    @property
    def is_generated(self) -> bool:
        return "box" in self.mesh_spec

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def build_mesh(self, n: int | None = None) -> Mesh:
        """The configured mesh; ``n`` overrides the box subdivision."""
        spec = self.mesh_spec
        try:
            if "path" in spec:
                if n is not None:
                    raise ConfigError("mesh levels need a generated box mesh")
                return load_msh(self.resolve(spec["path"]))
            box = spec["box"]
            return generate_box(box["n"] if n is None else n, box.get("inclusion"), box.get("graded", False))
        except MeshError as exc:
            raise ConfigError(f"mesh: {exc}") from exc

    def build_laws(self, regions=None) -> dict[int, EnergyLaw]:
        laws = {}
        for tag, spec in self.raw["materials"].items():
            try:
                laws[int(tag)] = material_from_config(spec, self.base_dir)
            except MaterialError as exc:
                raise ConfigError(f"material for region {tag}: {exc}") from exc
        if regions is not None:
            missing = [t for t in regions if t not in laws]
            if missing:
                raise ConfigError(f"no material bound to region tag(s) {missing}")
        return laws

    def build_source(self, ampere_turns: float | None = None) -> SourceField:
        try:
            src = source_from_config(self.raw["source"])
            if ampere_turns is not None:
                src = src.scaled(ampere_turns / src.ampere_turns)
        except (SourceError, KeyError, TypeError) as exc:
            raise ConfigError(f"source: {exc}") from exc
        return src

    @property
    def benchmark(self) -> dict:
        return self.raw.get("benchmark", {})


def material_from_config(spec: dict, base_dir: Path) -> EnergyLaw:
    if spec["type"] == "linear":
        if "mu" in spec and "mu_r" in spec:
            raise ConfigError("give either mu or mu_r for a linear material, not both")
        mu = spec["mu"] if "mu" in spec else spec.get("mu_r", 1.0) * MU0
        return LinearLaw(mu)
    if "path" not in spec:
        raise ConfigError("bh_csv material needs a path")
    path = Path(spec["path"])
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"B-H file not found: {path}")
    return fit_energy(load_bh_csv(path))


def parse_config(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    raw = copy.deepcopy(raw)
    base_dir = Path(base_dir)
    p = raw.get("p", 1)
    if p not in (1, 2):
        raise ConfigError(f"polynomial degree p={p} not supported (1 or 2)")
    for q in raw.get("benchmark", {}).get("p", []):
        if q not in (1, 2):
            raise ConfigError(f"benchmark degree p={q} not supported (1 or 2)")
    try:
        newton = NewtonConfig.from_dict(raw.get("newton"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"newton: {exc}") from exc
    for spec in raw["materials"].values():
        if spec["type"] == "bh_csv":
            if "path" not in spec:
                raise ConfigError("bh_csv material needs a path")
            path = Path(spec["path"])
            if not (path if path.is_absolute() else base_dir / path).exists():
                raise ConfigError(f"B-H file not found: {spec['path']}")
    if "path" in raw["mesh"]:
        path = Path(raw["mesh"]["path"])
        if not (path if path.is_absolute() else base_dir / path).exists():
            raise ConfigError(f"mesh file not found: {raw['mesh']['path']}")
    out = raw.get("output", {})
    return RunConfig(raw=raw, base_dir=base_dir, formulation=raw.get("formulation", "mixed"), p=p,
                     newton=newton, out_dir=Path(out.get("dir", "out")),
                     write_fields=bool(out.get("fields", False)), name=raw.get("name", "run"))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, path.parent)


def packaged_config(name: str = "plate_in_box.json") -> Path:
    """Path of a config shipped in the package data directory."""
    return Path(__file__).parent / "data" / name
