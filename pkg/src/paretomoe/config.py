"""YAML run configuration.

Every section maps onto a dataclass; unknown keys and ill-typed values raise
``ConfigError`` carrying the dotted field path, before any work starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data import DEFAULT_LAGS, SRU_PROCESS, SRU_QUALITY, SplitSpec
from .errors import ConfigError, DomainError
from .model import OMoEConfig
from .solver import FWConfig
from .training import TrainConfig

SYNTH = "synth"
CSV = "csv"


@dataclass
class DataConfig:
    source: str = SYNTH
    path: str | None = None  # csv only; relative to the config file
    seed: int = 0  # synth only
    rows: int = 10_000
    noise: float = 0.15
    lags: int = DEFAULT_LAGS
    embedded: bool = False  # csv columns are already lag features
    delimiter: str = ","
    time_column: str | None = None
    process: tuple[str, ...] = SRU_PROCESS
    quality: tuple[str, ...] = SRU_QUALITY
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def validate(self, prefix: str = "data") -> None:
        if self.source not in (SYNTH, CSV):
            raise ConfigError(f"{prefix}.source", f"must be {SYNTH!r} or {CSV!r}")
        if self.source == CSV and not self.path:
            raise ConfigError(f"{prefix}.path", "required when source is 'csv'")
        if self.rows < 20:
            raise ConfigError(f"{prefix}.rows", "must be >= 20")
        if self.noise < 0:
            raise ConfigError(f"{prefix}.noise", "must be >= 0")
        if self.lags < 1:
            raise ConfigError(f"{prefix}.lags", "must be >= 1")
        if not self.process or not self.quality:
            raise ConfigError(f"{prefix}.quality", "need at least one process and one quality column")
        try:
            SplitSpec(tuple(self.split))
        except DomainError as exc:
            raise ConfigError(f"{prefix}.split", str(exc)) from None


@dataclass
class OutputConfig:
    dir: str = "run"  # relative to the config file


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: OMoEConfig = field(default_factory=OMoEConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    solver: FWConfig = field(default_factory=FWConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: Path = field(default_factory=Path.cwd, repr=False, compare=False)

    def validate(self) -> None:
        self.data.validate()
        self.model.validate()
        self.solver.validate()
        self.train_config().validate()

    def train_config(self) -> TrainConfig:
        """Training settings with the model and solver sections folded in."""
        model = dataclasses.replace(self.model, K=len(self.data.quality))
        return dataclasses.replace(self.training, model=model, fw=self.solver)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.output.dir)

    def to_dict(self) -> dict:
        """Plain-data echo of the configuration (as written to run manifests)."""
        out = {}
        for name in ("data", "model", "training", "solver", "output"):
            section = getattr(self, name)
            out[name] = {f.name: _plain(getattr(section, f.name)) for f in dataclasses.fields(section)
                         if f.name in _SECTION_FIELDS[name]}
        return out


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


# training's nested model/solver objects come from their own sections
_SECTION_FIELDS = {
    "data": {f.name for f in dataclasses.fields(DataConfig)},
    "model": {f.name for f in dataclasses.fields(OMoEConfig)} - {"K", "D_in"},
    "training": {f.name for f in dataclasses.fields(TrainConfig)} - {"fw", "model"},
    "solver": {f.name for f in dataclasses.fields(FWConfig)},
    "output": {f.name for f in dataclasses.fields(OutputConfig)},
}
_SECTION_TYPES = {"data": DataConfig, "model": OMoEConfig, "training": TrainConfig,
                  "solver": FWConfig, "output": OutputConfig}


def _coerce(value: Any, default: Any, path: str) -> Any:
    """Check a YAML scalar/list against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    # optional fields: lists become tuples, field validation does the rest
    return tuple(value) if isinstance(value, list) else value


def _section(name: str, raw: Any):
    cls = _SECTION_TYPES[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a mapping")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        path = f"{name}.{key}"
        if key not in _SECTION_FIELDS[name]:
            raise ConfigError(path, "unknown key")
        kwargs[key] = _coerce(value, getattr(defaults, key), path)
    return cls(**kwargs)


def parse_config(doc: Any, base_dir: Path | None = None) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a mapping of sections")
    for key in doc:
        if key not in _SECTION_TYPES:
            raise ConfigError(str(key), "unknown section")
    cfg = RunConfig(**{name: _section(name, doc.get(name)) for name in _SECTION_TYPES},
                    base_dir=base_dir or Path.cwd())
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"{path} is not valid YAML: {exc}") from None
    return parse_config(doc, path.resolve().parent)


def load_grid(path) -> dict:
    """Ablation grid file: ``cells`` (list of overrides), optional ``seeds`` and ``modes``."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError("<grid>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<grid>", f"{path} is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("grid", "expected a mapping")
    for key in doc:
        if key not in ("cells", "seeds", "modes"):
            raise ConfigError(f"grid.{key}", "unknown key")
    cells = doc.get("cells") or []
    if not isinstance(cells, list) or not all(isinstance(c, dict) for c in cells):
        raise ConfigError("grid.cells", "expected a list of mappings")
    return doc
