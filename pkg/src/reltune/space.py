"""Configuration vector layout: parameter descriptors, samples, normalization.

The ordered parameter list is the canonical layout of every configuration
vector in the package; all other modules consume vectors through the
min-max normalization defined here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

KINDS = ("continuous", "integer", "boolean")


@dataclass(frozen=True)
class Parameter:
    name: str
    lower: float
    upper: float
    kind: str = "continuous"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.kind == "boolean":
            if (self.lower, self.upper) != (0.0, 1.0):
                raise ValueError(f"boolean parameter {self.name} must have bounds (0, 1)")
        elif not self.lower < self.upper:
            raise ValueError(f"parameter {self.name}: lower must be < upper")


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered list of parameter descriptors defining the vector layout."""

    params: tuple[Parameter, ...]

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params], dtype=float)

    def to_dict(self) -> dict:
        return {
            "params": [
                {"name": p.name, "lower": p.lower, "upper": p.upper, "kind": p.kind}
                for p in self.params
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSpace":
        return cls(tuple(Parameter(p["name"], p["lower"], p["upper"], p["kind"])
                         for p in d["params"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, s: str) -> "ParameterSpace":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class ConfigSample:
    """One raw configuration vector with its measured (throughput, latency)."""

    x: np.ndarray
    y: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        tps, lat = self.y
        if tps < 0.0:
            raise ValueError("throughput must be >= 0")
        if lat <= 0.0:
            raise ValueError("latency must be > 0")


def _check_bounds(space: ParameterSpace, x: np.ndarray):
    if x.shape[-1] != space.n:
        raise ValueError(f"expected {space.n} components, got {x.shape[-1]}")
    lo, hi = space.lower, space.upper
    bad = (x < lo) | (x > hi)
    if bad.any():
        idx = int(np.argwhere(bad)[0][-1])
        raise ValueError(
            f"component {space.params[idx].name} out of bounds "
            f"[{lo[idx]}, {hi[idx]}]"
        )


def normalize_config(space: ParameterSpace, x: Sequence[float]) -> np.ndarray:
    """Min-max map of a raw configuration to the unit cube; booleans go to {0, 1}."""
    x = np.asarray(x, dtype=float)
    _check_bounds(space, x)
    return (x - space.lower) / (space.upper - space.lower)


def normalize_batch(space: ParameterSpace, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    _check_bounds(space, X)
    return (X - space.lower) / (space.upper - space.lower)


def denormalize_config(space: ParameterSpace, x_norm: Sequence[float]) -> np.ndarray:
    """Inverse min-max map; integers round to nearest value, booleans threshold at 0.5."""
    x_norm = np.asarray(x_norm, dtype=float)
    if x_norm.shape[-1] != space.n:
        raise ValueError(f"expected {space.n} components, got {x_norm.shape[-1]}")
    raw = space.lower + x_norm * (space.upper - space.lower)
    for i, p in enumerate(space.params):
        if p.kind == "integer":
            raw[..., i] = np.clip(np.rint(raw[..., i]), p.lower, p.upper)
        elif p.kind == "boolean":
            raw[..., i] = np.where(x_norm[..., i] >= 0.5, 1.0, 0.0)
    return raw


def config_as_mapping(space: ParameterSpace, x: np.ndarray) -> dict:
    """Raw vector -> JSON-friendly {name: value}, with native ints and bools."""
    out = {}
    for i, p in enumerate(space.params):
        v = float(x[i])
        if p.kind == "integer":
            out[p.name] = int(round(v))
        elif p.kind == "boolean":
            out[p.name] = bool(v >= 0.5)
        else:
            out[p.name] = v
    return out
