"""Experiment configuration: nested dataclasses read from TOML with dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import toml

from .reconstruct import SolverConfig


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` is the dotted field name."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class MeshConfig:
    dim: int = 3
    coarse_refinement: int = 12  # 15625 vertices in 3D
    fine_refinement: int = 18  # 50653 vertices, > 3x the coarse mesh
    coarse_file: str = ""  # Gmsh file overriding the built-in coarse mesh
    fine_file: str = ""


@dataclass
class PhantomConfig:
    preset: str = "default"
    background: float = 1.0
    # explicit inclusions replace the preset, each a table with
    # shape, center, radii, value and optionally angle
    inclusions: list = field(default_factory=list)


@dataclass
class PatternConfig:
    kind: str = "full"  # full | upper | lower
    n_max: int = 5


@dataclass
class DataConfig:
    noise: float = 0.01
    seed: int = 0
    allow_inverse_crime: bool = False


@dataclass
class RegularizationConfig:
    alpha: float = 1e-4
    prior: str = "off"  # off | dilated
    dilation: float = 1.1
    mu_in: float = 1e-2


@dataclass
class CheckConfig:
    ndmap_bound: float = 0.03
    ndmap_n_max: int = 3
    ndmap_conductivity: float = 1.0
    gradient_directions: int = 5
    gradient_h: float = 1e-4
    gradient_bound: float = 1e-3


@dataclass
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    patterns: PatternConfig = field(default_factory=PatternConfig)
    data: DataConfig = field(default_factory=DataConfig)
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    checks: CheckConfig = field(default_factory=CheckConfig)
    output_dir: str = "output"

    def validate(self) -> "ExperimentConfig":
        m, p, d, r = self.mesh, self.patterns, self.data, self.regularization
        if m.dim not in (2, 3):
            raise ConfigError("mesh.dim", f"must be 2 or 3, got {m.dim}")
        for name in ("coarse_refinement", "fine_refinement"):
            if getattr(m, name) < 1:
                raise ConfigError(f"mesh.{name}", "must be >= 1")
        for name in ("coarse_file", "fine_file"):
            path = getattr(m, name)
            if path and not Path(path).is_file():
                raise ConfigError(f"mesh.{name}", f"file {path!r} does not exist")
        if self.phantom.preset != "default" and not self.phantom.inclusions:
            raise ConfigError("phantom.preset", f"unknown preset {self.phantom.preset!r}")
        if self.phantom.background <= 0:
            raise ConfigError("phantom.background", "must be positive")
        if p.kind not in ("full", "upper", "lower"):
            raise ConfigError("patterns.kind", f"must be full, upper or lower, got {p.kind!r}")
        if p.n_max < 1:
            raise ConfigError("patterns.n_max", "must be >= 1")
        if d.noise < 0:
            raise ConfigError("data.noise", f"must be >= 0, got {d.noise}")
        if d.seed < 0:
            raise ConfigError("data.seed", "must be >= 0")
        if r.alpha <= 0:
            raise ConfigError("regularization.alpha", f"must be > 0, got {r.alpha}")
        if r.prior not in ("off", "dilated"):
            raise ConfigError("regularization.prior", f"must be off or dilated, got {r.prior!r}")
        if r.dilation < 1:
            raise ConfigError("regularization.dilation", "must be >= 1")
        if not 0 < r.mu_in <= 1:
            raise ConfigError("regularization.mu_in", "must lie in (0, 1]")
        if self.checks.gradient_directions < 1:
            raise ConfigError("checks.gradient_directions", "must be >= 1")
        try:
            SolverConfig(**dataclasses.asdict(self.solver))
        except ValueError as exc:
            raise ConfigError("solver", str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results (the output location does not)."""
        doc = self.to_dict()
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def dumps(self) -> str:
        doc = self.to_dict()
        # TOML has no null; drop unset optional values
        doc["solver"] = {k: v for k, v in doc["solver"].items() if v is not None}
        return toml.dumps(doc)


def _coerce(value, hint, path):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {hint}")


def _build(cls, doc, prefix=""):
    if not isinstance(doc, dict):
        raise ConfigError(prefix.rstrip("."), "expected a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown key")
    kwargs = {}
    for name in names:
        if name not in doc:
            continue
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, doc[name], f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(doc[name], hint, prefix + name)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(prefix.rstrip("."), str(exc)) from None


def _parse_value(text: str):
    try:
        return toml.loads(f"v = {text}")["v"]
    except toml.TomlDecodeError:
        return text  # bare strings such as kind=upper


def apply_overrides(doc: dict, overrides) -> dict:
    """Set ``a.b.c=value`` entries in a nested dict (values parsed as TOML)."""
    for item in overrides or ():
        key, sep, text = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(item, "override must look like key=value")
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"{part} is not a table")
        node[parts[-1]] = _parse_value(text.strip())
    return doc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the TOML file at ``path`` (if any), then overrides."""
    doc = {}
    if path is not None:
        try:
            doc = toml.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from None
        except toml.TomlDecodeError as exc:
            raise ConfigError("", f"malformed config {path}: {exc}") from None
    apply_overrides(doc, overrides)
    return _build(ExperimentConfig, doc).validate()
