"""Core data types: sensor layout geometry, detections and preprocessing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping


class LayoutError(ValueError):
    """Invalid layout configuration or query."""


class DetectionError(ValueError):
    """A detection record violates the Detection invariants."""


@dataclass(frozen=True)
class SensorNode:
    sensor_id: str
    lane_id: int
    chainage_m: float

    def __post_init__(self):
        if not self.chainage_m >= 0:
            raise LayoutError(f"sensor {self.sensor_id}: chainage must be >= 0")


@dataclass(frozen=True)
class Lane:
    lane_id: int
    sensors: tuple[SensorNode, ...]


@dataclass(frozen=True)
class LayoutConfig:
    n_lanes: int = 2
    lane_length_m: float = 1500.0
    spacing_m: float = 15.0
    # allowed consecutive spacing range (deployment practice: 8-15 m)
    min_spacing_m: float = 8.0
    max_spacing_m: float = 15.0


class SensorLayout:
    """Ordered sensors per lane with chainage positions.

    Sensors inside a lane are kept sorted by chainage; ``index`` gives the
    position of a sensor within its lane.
    """

    def __init__(
        self,
        lanes: Iterable[Lane],
        min_spacing_m: float = 0.0,
        max_spacing_m: float = math.inf,
    ):
        self.lanes: tuple[Lane, ...] = tuple(sorted(lanes, key=lambda ln: ln.lane_id))
        self._nodes: dict[str, SensorNode] = {}
        self._index: dict[str, int] = {}
        lane_ids = set()
        for lane in self.lanes:
            if lane.lane_id in lane_ids:
                raise LayoutError(f"duplicate lane id {lane.lane_id}")
            lane_ids.add(lane.lane_id)
            prev = None
            for k, node in enumerate(lane.sensors):
                if node.lane_id != lane.lane_id:
                    raise LayoutError(f"sensor {node.sensor_id} lane mismatch")
                if node.sensor_id in self._nodes:
                    raise LayoutError(f"duplicate sensor id {node.sensor_id!r}")
                if prev is not None:
                    gap = node.chainage_m - prev.chainage_m
                    if gap <= 0:
                        raise LayoutError(
                            f"lane {lane.lane_id}: chainages must be strictly increasing"
                        )
                    if not (min_spacing_m - 1e-9 <= gap <= max_spacing_m + 1e-9):
                        raise LayoutError(
                            f"lane {lane.lane_id}: spacing {gap} m outside "
                            f"[{min_spacing_m}, {max_spacing_m}]"
                        )
                self._nodes[node.sensor_id] = node
                self._index[node.sensor_id] = k
                prev = node
        self._lane_by_id = {lane.lane_id: lane for lane in self.lanes}

    def __contains__(self, sensor_id) -> bool:
        return sensor_id in self._nodes

    def __eq__(self, other):
        return isinstance(other, SensorLayout) and self.lanes == other.lanes

    def __repr__(self):
        counts = ", ".join(f"{ln.lane_id}:{len(ln.sensors)}" for ln in self.lanes)
        return f"SensorLayout(lanes={{{counts}}})"

    @property
    def sensor_ids(self) -> list[str]:
        return [n.sensor_id for lane in self.lanes for n in lane.sensors]

    def node(self, sensor_id: str) -> SensorNode:
        try:
            return self._nodes[sensor_id]
        except KeyError:
            raise LayoutError(f"unknown sensor id {sensor_id!r}") from None

    def lane(self, lane_id: int) -> Lane:
        return self._lane_by_id[lane_id]

    def index(self, sensor_id: str) -> int:
        self.node(sensor_id)
        return self._index[sensor_id]

    def chainage(self, sensor_id: str) -> float:
        return self.node(sensor_id).chainage_m

    def upstream(self, sensor_id: str) -> str | None:
        node = self.node(sensor_id)
        k = self._index[sensor_id]
        if k == 0:
            return None
        return self._lane_by_id[node.lane_id].sensors[k - 1].sensor_id

    def is_last(self, sensor_id: str) -> bool:
        node = self.node(sensor_id)
        return self._index[sensor_id] == len(self._lane_by_id[node.lane_id].sensors) - 1

    def to_dict(self) -> dict:
        return {
            "lanes": [
                {
                    "lane_id": lane.lane_id,
                    "sensors": [
                        {"sensor_id": n.sensor_id, "chainage_m": n.chainage_m}
                        for n in lane.sensors
                    ],
                }
                for lane in self.lanes
            ]
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SensorLayout":
        try:
            lanes = []
            for lane_doc in doc["lanes"]:
                lane_id = int(lane_doc["lane_id"])
                nodes = tuple(
                    SensorNode(str(s["sensor_id"]), lane_id, float(s["chainage_m"]))
                    for s in lane_doc["sensors"]
                )
                lanes.append(Lane(lane_id, nodes))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, LayoutError):
                raise
            raise LayoutError(f"malformed layout document: {exc}") from exc
        return cls(lanes)


def build_layout(config: LayoutConfig) -> SensorLayout:
    """Place sensors at uniform spacing from chainage 0 to the lane length."""
    if not config.spacing_m > 0:
        raise LayoutError("spacing must be positive")
    if not config.lane_length_m > 0:
        raise LayoutError("lane length must be positive")
    if config.n_lanes < 1:
        raise LayoutError("need at least one lane")
    n = int(math.floor(config.lane_length_m / config.spacing_m + 1e-9)) + 1
    lanes = []
    for lane_id in range(config.n_lanes):
        nodes = tuple(
            SensorNode(f"L{lane_id}S{k:04d}", lane_id, k * config.spacing_m) for k in range(n)
        )
        lanes.append(Lane(lane_id, nodes))
    return SensorLayout(lanes, config.min_spacing_m, config.max_spacing_m)


def distance(layout: SensorLayout, i: str, j: str) -> float:
    a, b = layout.node(i), layout.node(j)
    if a.lane_id != b.lane_id:
        raise LayoutError(f"{i!r} and {j!r} are on different lanes")
    return abs(b.chainage_m - a.chainage_m)


def downstream_adjacent(layout: SensorLayout, i: str, hops: int = 1) -> list[str]:
    """The next ``hops`` sensors after ``i`` on its lane (fewer near the lane end)."""
    if hops < 1:
        raise ValueError("hops must be a positive integer")
    node = layout.node(i)
    k = layout.index(i)
    sensors = layout.lane(node.lane_id).sensors
    return [n.sensor_id for n in sensors[k + 1 : k + 1 + hops]]


def load_layout(path) -> SensorLayout:
    with open(path, encoding="utf-8") as fh:
        return SensorLayout.from_dict(json.load(fh))


def save_layout(layout: SensorLayout, path) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Detection:
    """One reported sensing event: a vehicle passed ``sensor_id`` at ``t_us``."""

    sensor_id: str
    t_us: int
    direction: tuple[float, float, float]
    strength_nT: float

    def __post_init__(self):
        if not isinstance(self.sensor_id, str) or not self.sensor_id:
            raise DetectionError("sensor_id must be a non-empty string")
        if isinstance(self.t_us, bool) or not isinstance(self.t_us, int):
            raise DetectionError("t_us must be an integer")
        if len(self.direction) != 3:
            raise DetectionError("direction must be a 3-vector")
        if not all(isinstance(c, (int, float)) and math.isfinite(c) for c in self.direction):
            raise DetectionError("direction components must be finite numbers")
        if abs(math.sqrt(sum(c * c for c in self.direction)) - 1.0) > 1e-6:
            raise DetectionError("direction must be a unit vector")
        if not (isinstance(self.strength_nT, (int, float)) and math.isfinite(self.strength_nT)):
            raise DetectionError("strength_nT must be a finite number")
        if self.strength_nT < 0:
            raise DetectionError("strength_nT must be nonnegative")

    @property
    def key(self) -> tuple[str, int]:
        return (self.sensor_id, self.t_us)

    def to_dict(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "t_us": self.t_us,
            "direction": list(self.direction),
            "strength_nT": self.strength_nT,
        }

    @classmethod
    def from_dict(cls, doc) -> "Detection":
        if not isinstance(doc, dict):
            raise DetectionError("detection record must be a JSON object")
        missing = {"sensor_id", "t_us", "direction", "strength_nT"} - doc.keys()
        if missing:
            raise DetectionError(f"missing fields: {sorted(missing)}")
        direction = doc["direction"]
        if not isinstance(direction, list):
            raise DetectionError("direction must be a list")
        if any(isinstance(c, bool) for c in direction) or isinstance(doc["strength_nT"], bool):
            raise DetectionError("booleans are not numbers here")
        return cls(doc["sensor_id"], doc["t_us"], tuple(direction), doc["strength_nT"])


def parse_detection(line: str | bytes) -> Detection:
    """Parse one JSONL record; raises DetectionError on anything malformed."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DetectionError(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(line)
    except (ValueError, RecursionError) as exc:
        raise DetectionError(f"invalid JSON: {exc}") from exc
    return Detection.from_dict(doc)


def format_detection(det: Detection) -> str:
    return json.dumps(det.to_dict())


@dataclass(frozen=True)
class DetectionBatch:
    """Per-sensor, strictly time-ordered detection lists."""

    by_sensor: Mapping[str, tuple[Detection, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for sid, dets in self.by_sensor.items():
            for a, b in zip(dets, dets[1:]):
                if not a.t_us < b.t_us:
                    raise DetectionError(f"sensor {sid}: detections not strictly increasing")
            if any(d.sensor_id != sid for d in dets):
                raise DetectionError(f"sensor {sid}: foreign detection in list")

    @classmethod
    def from_detections(cls, dets: Iterable[Detection], *, drop_duplicates=False) -> "DetectionBatch":
        """Group and sort detections; duplicate (sensor, t_us) pairs are rejected."""
        grouped: dict[str, list[Detection]] = {}
        for d in dets:
            grouped.setdefault(d.sensor_id, []).append(d)
        out = {}
        for sid in sorted(grouped):
            lst = sorted(grouped[sid], key=lambda d: d.t_us)
            uniq = [lst[0]]
            for d in lst[1:]:
                if d.t_us == uniq[-1].t_us:
                    if not drop_duplicates:
                        raise DetectionError(f"duplicate detection {d.key}")
                    continue
                uniq.append(d)
            out[sid] = tuple(uniq)
        return cls(out)

    def __len__(self):
        return sum(len(v) for v in self.by_sensor.values())

    def __iter__(self):
        for sid in sorted(self.by_sensor):
            yield from self.by_sensor[sid]

    def all(self) -> list[Detection]:
        """All detections ordered by (t_us, sensor_id)."""
        return sorted(self, key=lambda d: (d.t_us, d.sensor_id))


@dataclass(frozen=True)
class FilterConfig:
    min_strength: float = 50.0
    dedup_window_us: int = 200_000


def preprocess(
    batch: DetectionBatch,
    config: FilterConfig = FilterConfig(),
    last_kept: dict[str, int] | None = None,
) -> DetectionBatch:
    """Remove false-sensing data.

    Drops detections weaker than ``config.min_strength`` and, per sensor, any
    detection closer than ``config.dedup_window_us`` to the previously kept
    one. ``last_kept`` carries the last kept timestamp per sensor across
    successive calls (streaming); it is updated in place when given.
    """
    out = {}
    for sid, dets in batch.by_sensor.items():
        prev = None if last_kept is None else last_kept.get(sid)
        kept = []
        for d in dets:
            if d.strength_nT < config.min_strength:
                continue
            if prev is not None and d.t_us - prev < config.dedup_window_us:
                continue
            kept.append(d)
            prev = d.t_us
        if last_kept is not None and prev is not None:
            last_kept[sid] = prev
        if kept:
            out[sid] = tuple(kept)
    return DetectionBatch(out)


def read_detections(path) -> list[Detection]:
    """Strict JSONL reader: raises DetectionError naming the 1-based line."""
    dets = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                dets.append(parse_detection(raw))
            except DetectionError as exc:
                err = DetectionError(f"{path}:{lineno}: {exc}")
                err.lineno = lineno
                raise err from exc
    return dets


def write_detections(dets: Iterable[Detection], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            fh.write(format_detection(d) + "\n")
