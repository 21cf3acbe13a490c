"""Experiment configuration files (JSON) and scenario construction."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .cellgen import GenParams
from .errors import ConfigError
from .evalbench import DEFAULT_MAPE_FLOOR, DEFAULT_SEEDS, Scenario
from .forecast import DEFAULT_HIDDEN, DEFAULT_HISTORY, FeatureSet, TrainConfig
from .road_data import (
    DEFAULT_MAX_GAP,
    Corridor,
    SyntheticProfile,
    ValidationReport,
    load_corridor,
    load_road_dir,
    synth_corridor,
    validate_and_fill,
)

BUILTIN_PREFIX = "builtin:"


def data_path(name: str) -> Path:
    """Path of a file bundled in ``roadcell/data``."""
    return Path(str(resources.files("roadcell") / "data" / name))


def resolve_path(p: str | Path, base: Path | None = None) -> Path:
    """Expand ``builtin:<name>``; other relative paths resolve against ``base`` (default cwd)."""
    return _resolve(str(p), Path.cwd() if base is None else base)


def _resolve(p: str | None, base: Path) -> Path | None:
    if p is None:
        return None
    if p.startswith(BUILTIN_PREFIX):
        return data_path(p[len(BUILTIN_PREFIX):])
    q = Path(p).expanduser()
    return q if q.is_absolute() else (base / q)


@dataclass
class ExperimentConfig:
    corridor: Path
    road_dir: Path | None = None
    synthetic: dict | None = None
    generator: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    feature_sets: list[str] = field(default_factory=lambda: [f.name for f in FeatureSet])
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    ratios: list[int] = field(default_factory=lambda: [12, 6, 6])
    history: int = DEFAULT_HISTORY
    hidden_size: int = DEFAULT_HIDDEN
    noise: float = 0.0
    mape_floor: float = DEFAULT_MAPE_FLOOR
    max_gap: int = DEFAULT_MAX_GAP
    out: Path | None = None
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)

    def validate(self):
        if not self.corridor.exists():
            raise ConfigError(f"corridor config not found: {self.corridor}")
        if (self.road_dir is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of road_dir or synthetic")
        if self.road_dir is not None and not self.road_dir.is_dir():
            raise ConfigError(f"road data directory not found: {self.road_dir}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        FeatureSet.parse(self.feature_sets)
        GenParams.from_dict(self.generator)
        TrainConfig.from_dict(self.train)
        return self

    def gen_params(self) -> GenParams:
        return GenParams.from_dict(self.generator)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)

    def resolved(self) -> dict:
        """Every setting with defaults filled in, suitable for a manifest."""
        d = asdict(self)
        d["corridor"] = str(self.corridor)
        d["road_dir"] = None if self.road_dir is None else str(self.road_dir)
        d["out"] = None if self.out is None else str(self.out)
        d["generator"] = {k: v for k, v in self.gen_params().to_dict().items() if k != "seed"}
        d["train"] = {k: v for k, v in self.train_config().to_dict().items() if k != "seed"}
        if self.synthetic is not None:
            d["synthetic"] = _synthetic_defaults(self.synthetic)
        return d


_SYNTH_DEFAULTS = {"weeks": 4, "seed": 0, "profile": {"kind": "diurnal"},
                   "flow_scales": None, "through_fraction": 0.9}


def _synthetic_defaults(opts: Mapping) -> dict:
    extra = set(opts) - set(_SYNTH_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown synthetic settings {sorted(extra)}")
    return {**_SYNTH_DEFAULTS, **opts}


_FIELDS = set(ExperimentConfig.__dataclass_fields__)


def load_config(path, **overrides: Any) -> ExperimentConfig:
    """Read a JSON experiment config; relative paths resolve against its directory.

    ``builtin:<name>`` refers to a file shipped in ``roadcell/data``.
    Overrides with value ``None`` are ignored.
    """
    path = resolve_path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    if "corridor" not in raw:
        raise ConfigError(f"{path}: 'corridor' is required")
    base = path.parent
    raw["corridor"] = _resolve(str(raw["corridor"]), base)
    if raw.get("road_dir") is not None:
        raw["road_dir"] = _resolve(str(raw["road_dir"]), base)
    if raw.get("out") is not None:
        raw["out"] = Path(raw["out"]).expanduser()
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg.validate()


def load_inputs(cfg: ExperimentConfig):
    """Corridor, validated per-site road series and their validation reports."""
    corridor: Corridor = load_corridor(cfg.corridor)
    if cfg.road_dir is not None:
        road, reports = load_road_dir(cfg.road_dir, corridor, max_gap=cfg.max_gap)
    else:
        s = _synthetic_defaults(cfg.synthetic)
        profile = SyntheticProfile.from_dict(s["profile"])
        raw = synth_corridor(profile, corridor.detector_ids, s["weeks"], s["seed"],
                             flow_scales=s["flow_scales"],
                             through_fraction=s["through_fraction"])
        road, reports = [], []
        for r in raw:
            v, rep = validate_and_fill(r, max_gap=cfg.max_gap)
            road.append(v)
            reports.append(rep)
    return corridor, road, reports


def build_scenario(cfg: ExperimentConfig) -> tuple[Scenario, list[ValidationReport]]:
    corridor, road, reports = load_inputs(cfg)
    scenario = Scenario(corridor, road, gen=cfg.gen_params(), train=cfg.train_config(),
                        feature_sets=tuple(FeatureSet.parse(cfg.feature_sets)),
                        seeds=tuple(cfg.seeds), ratios=tuple(cfg.ratios), history=cfg.history,
                        hidden_size=cfg.hidden_size, mape_floor=cfg.mape_floor, jobs=cfg.jobs)
    return scenario, reports
