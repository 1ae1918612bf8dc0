"""Run configuration: one JSON document with a section per component."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .association import AssociationConfig
from .domain import FilterConfig, LayoutConfig
from .motion import MotionModelConfig
from .sim import Scenario, ScenarioError
from .stream import StreamConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "layout": LayoutConfig,
    "association": AssociationConfig,
    "motion": MotionModelConfig,
    "filter": FilterConfig,
    "stream": StreamConfig,
}


@dataclass(frozen=True)
class RunConfig:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    scenario: Scenario = field(default_factory=Scenario)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    motion: MotionModelConfig = field(default_factory=MotionModelConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}
        out["scenario"] = self.scenario.to_dict()
        return out


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def run_config_from_dict(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Merge ``doc`` and dotted ``overrides`` ({"stream.window_s": 5}) over defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = json.loads(json.dumps(doc))
    unknown = set(doc) - set(_SECTIONS) - {"scenario"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS and section != "scenario":
            raise ConfigError(f"bad override {key!r}")
        doc.setdefault(section, {})[name] = value
    # a top-level layout section also shapes the simulated road unless the scenario sets one
    if "layout" in doc and isinstance(doc.get("scenario", {}), dict) and "layout" not in doc.get("scenario", {}):
        doc.setdefault("scenario", {})["layout"] = doc["layout"]
    parts = {name: _build(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()}
    try:
        scenario = Scenario.from_dict(doc.get("scenario", {}))
    except (ScenarioError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    return RunConfig(scenario=scenario, **parts)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(doc, overrides)
