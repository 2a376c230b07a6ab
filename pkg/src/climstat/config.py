"""Run configuration: an INI file with fixed sections and keys.

Every key has a default, unknown sections or keys are errors, and the
fully resolved configuration hashes to a short identifier stamped on every
output file.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .covariance import Neighborhood
from .grid import GridError, GridSpec
from .interpolate import MODES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    min_years: int = 2
    sd_min_years: int = 3
    min_count: int = 3
    min_support: int = 35
    max_lag: int = 1
    min_group: int = 10
    drop_below: float = 0.01
    delta_floor: float = 0.01
    noise_floor: float = 0.1
    alpha: float = 0.01
    min_eta: int = 100
    min_delta: int = 40

    def validate(self) -> None:
        if self.min_years < 1:
            raise ConfigError("thresholds.min_years must be >= 1")
        if self.sd_min_years < 2:
            raise ConfigError("thresholds.sd_min_years must be >= 2")
        if self.min_count < 2:
            raise ConfigError("thresholds.min_count must be >= 2")
        if self.min_support < 2:
            raise ConfigError("thresholds.min_support must be >= 2")
        if self.max_lag < 0:
            raise ConfigError("thresholds.max_lag must be >= 0")
        if self.min_group < 1:
            raise ConfigError("thresholds.min_group must be >= 1")
        if not 0 <= self.drop_below < 1:
            raise ConfigError("thresholds.drop_below must lie in [0, 1)")
        if not 0 < self.delta_floor <= 1:
            raise ConfigError("thresholds.delta_floor must lie in (0, 1]")
        if self.noise_floor <= 0:
            raise ConfigError("thresholds.noise_floor must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("thresholds.alpha must lie in (0, 1)")
        if self.min_eta < 3 or self.min_delta < 3:
            raise ConfigError("thresholds.min_eta and min_delta must be >= 3")


@dataclass(frozen=True)
class Factorization:
    preserve_diagonal: bool = True
    ordering: str = "minimum_degree"
    growth_cap: float | None = 1.0

    def validate(self) -> None:
        if self.growth_cap is not None and not self.growth_cap > 0:
            raise ConfigError("factorization.growth_cap must be positive or none")
        if self.ordering not in ("minimum_degree", "natural"):
            raise ConfigError("factorization.ordering must be minimum_degree or natural")


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    thresholds: Thresholds = field(default_factory=Thresholds)
    neighborhood: Neighborhood = field(default_factory=Neighborhood)
    factorization: Factorization = field(default_factory=Factorization)
    interpolation: str = "none"

    def to_dict(self) -> dict[str, dict[str, str]]:
        grid = {k[5:]: v for k, v in self.grid.to_config().items()}
        return {
            "grid": grid,
            "thresholds": {f.name: repr(getattr(self.thresholds, f.name)) for f in fields(Thresholds)},
            "neighborhood": {f.name: str(getattr(self.neighborhood, f.name)) for f in fields(Neighborhood)},
            "factorization": {
                "preserve_diagonal": str(self.factorization.preserve_diagonal).lower(),
                "ordering": self.factorization.ordering,
                "growth_cap": "none" if self.factorization.growth_cap is None
                              else repr(self.factorization.growth_cap),
            },
            "interpolation": {"mode": self.interpolation},
        }

    def to_ini(self) -> str:
        lines = []
        for section, items in self.to_dict().items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in items.items()]
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _typed(cls, section: str, items: dict[str, str]):
    kinds = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in kinds:
            raise ConfigError(f"unknown key {section}.{key}")
        kind = kinds[key]
        try:
            if kind in (bool, "bool"):
                low = raw.strip().lower()
                if low not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(raw)
                kwargs[key] = low in ("true", "yes", "1")
            elif kind in (int, "int"):
                kwargs[key] = int(raw)
            elif kind in (float, "float"):
                kwargs[key] = float(raw)
            elif kind == "float | None":
                kwargs[key] = None if raw.strip().lower() == "none" else float(raw)
            else:
                kwargs[key] = raw.strip()
        except ValueError:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None
    return cls(**kwargs)


SECTIONS = ("grid", "thresholds", "neighborhood", "factorization", "interpolation")


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                       inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable configuration: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    sec = {s: dict(parser.items(s)) if parser.has_section(s) else {} for s in SECTIONS}
    try:
        grid = GridSpec.from_config(sec["grid"])
    except (GridError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from None
    thresholds = _typed(Thresholds, "thresholds", sec["thresholds"])
    thresholds.validate()
    neighborhood = _typed(Neighborhood, "neighborhood", sec["neighborhood"])
    if min(neighborhood.months, neighborhood.lon, neighborhood.lat, neighborhood.depth) < 0:
        raise ConfigError("neighborhood bounds must be >= 0")
    factorization = _typed(Factorization, "factorization", sec["factorization"])
    factorization.validate()
    interp = dict(sec["interpolation"])
    mode = interp.pop("mode", "none")
    if interp:
        raise ConfigError(f"unknown key interpolation.{next(iter(interp))}")
    if mode not in MODES:
        raise ConfigError(f"interpolation.mode must be one of {', '.join(MODES)}")
    return RunConfig(grid, thresholds, neighborhood, factorization, mode)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    return parse_config(text)
