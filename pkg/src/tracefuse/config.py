"""Pipeline settings shared by the command-line tools."""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from dataclasses import dataclass

from .fusion import DEFAULT_PREFIX, NEW_TYPE_BASE
from .model import DEFAULT_COLLECTIVES
from .paraver import DEFAULT_MPI_TYPES
from .stage2 import SimilarityWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    mpi_types: tuple[int, ...] = DEFAULT_MPI_TYPES
    collectives: tuple[str, ...] = DEFAULT_COLLECTIVES
    weights: tuple[float, float, float] = (0.6, 0.2, 0.2)
    threshold: float = 0.3
    fence: bool = True
    prefix: str = DEFAULT_PREFIX
    new_type_base: int = NEW_TYPE_BASE
    log_level: str = "WARNING"
    workers: int = 1

    def __post_init__(self):
        if len(self.weights) != 3:
            raise ConfigError("weights needs exactly three values (temporal, size, partner)")
        if "{exec_id}" not in self.prefix:
            raise ConfigError("prefix must contain '{exec_id}'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.similarity()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def similarity(self) -> SimilarityWeights:
        t, s, p = self.weights
        return SimilarityWeights(t, s, p, self.threshold)

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def merged(self, overrides: Mapping) -> PipelineConfig:
        """Copy with ``overrides`` applied; unknown keys and bad types raise ConfigError."""
        kinds = {f.name: f.type for f in dataclasses.fields(self)}
        unknown = set(overrides) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        for k, v in overrides.items():
            values[k] = _coerce(k, v)
        return dataclasses.replace(self, **values)

    @classmethod
    def from_json(cls, text: str) -> PipelineConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls().merged(doc)


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(key: str, v):
    def fail():
        raise ConfigError(f"bad value for {key}: {v!r}")

    if key == "mpi_types":
        if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
            fail()
        return tuple(v)
    if key == "collectives":
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            fail()
        return tuple(v)
    if key == "weights":
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            fail()
        return tuple(float(x) for x in v)
    if key == "threshold":
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            fail()
        return float(v)
    if key == "fence":
        if not isinstance(v, bool):
            fail()
        return v
    if key in ("prefix", "log_level"):
        if not isinstance(v, str):
            fail()
        return v
    if key in ("new_type_base", "workers"):
        if not isinstance(v, int) or isinstance(v, bool):
            fail()
        return v
    fail()
