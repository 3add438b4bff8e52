"""Experiment configs: JSON, schema-validated, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import AlloyModel, fingerprint
from .policy import DEFAULT, NumericPolicy


class ConfigError(ValueError):
    """Schema violation; ``keys`` lists offending unknown keys, if any."""

    def __init__(self, message: str, path: str = "", keys: tuple[str, ...] = ()):
        super().__init__(message)
        self.path = path
        self.keys = keys

    def to_dict(self) -> dict:
        return {"error": "schema", "message": str(self), "path": self.path, "keys": list(self.keys)}


@lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(resources.files("rsolab").joinpath("schema/config.schema.json").read_text())


def _unexpected(err: jsonschema.ValidationError) -> list[tuple[str, str]]:
    """``(path, key)`` for every additionalProperties failure in ``err`` and
    its sub-errors."""
    out = []
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        path = "/".join(str(p) for p in err.absolute_path)
        out.extend((path, k) for k in err.instance if k not in allowed)
    if err.context:
        # for oneOf/anyOf only the branch that fits best (no const/enum
        # mismatch, fewest errors) is meant; the others reject every key
        branches: dict = {}
        for sub in err.context:
            branches.setdefault(sub.relative_schema_path[0], []).append(sub)
        best = min(branches.values(),
                   key=lambda errs: (any(e.validator in ("const", "enum") for e in errs), len(errs)))
        for sub in best:
            out.extend(_unexpected(sub))
    return out


def validate(raw: dict) -> None:
    v = jsonschema.Draft202012Validator(schema())
    errors = list(v.iter_errors(raw))
    if not errors:
        return
    unknown = sorted({x for e in errors for x in _unexpected(e)})
    if unknown:
        keys = tuple(k for _, k in unknown)
        where = unknown[0][0] or "<root>"
        raise ConfigError(f"unknown key(s) {', '.join(repr(k) for k in keys)} at {where}", where, keys)
    e = jsonschema.exceptions.best_match(errors)
    raise ConfigError(e.message, "/".join(str(p) for p in e.absolute_path))


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validate(raw)
        return cls(json.loads(json.dumps(raw)))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    @property
    def experiment(self) -> str:
        return self.raw["experiment"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def trials(self) -> int:
        return int(self.raw.get("trials", 1))

    @property
    def scales(self) -> list[int]:
        return [int(s) for s in self.raw.get("scales", [])]

    @property
    def params(self) -> dict:
        return dict(self.raw.get("params", {}))

    @property
    def output(self) -> str | None:
        return self.raw.get("output")

    def grid(self) -> np.ndarray:
        g = self.raw["grid"]
        if "values" in g:
            return np.asarray(g["values"], dtype=float)
        return np.linspace(float(g["start"]), float(g["stop"]), int(g["num"]))

    def model(self) -> AlloyModel:
        return AlloyModel.from_dict(self.raw["model"])

    def policy(self) -> NumericPolicy:
        return DEFAULT.with_overrides(**self.raw.get("policy", {}))

    def fingerprint(self) -> str:
        """Hash of the canonical config with the output location removed."""
        return fingerprint({k: v for k, v in self.raw.items() if k != "output"})
