"""Deterministic two-lane traffic and roadside magnetic sensor simulator.

Vehicles enter each lane at chainage 0 as a Poisson stream, hold a sampled
constant speed (or constant acceleration) and are never allowed to overtake.
Every sensor passage is reported unless dropped with probability ``p_l``;
reported timestamps carry Gaussian clock jitter.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .domain import (
    Detection,
    DetectionBatch,
    LayoutConfig,
    SensorLayout,
    build_layout,
    read_detections,
    write_detections,
)
from .motion import NoArrival, predict_arrival_ca, predict_arrival_cv

VEHICLE_CLASSES = ("car", "bus", "truck")
# median disturbance per class, nT
_CLASS_STRENGTH = {"car": 200.0, "bus": 500.0, "truck": 800.0}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    duration_s: float = 600.0
    arrival_rate_vps: float = 100 / 600  # per lane
    speed_range: tuple[float, float] = (8.0, 25.0)
    motion: str = "CV"
    accel_range: tuple[float, float] = (-0.2, 0.2)
    p_l: float = 0.05
    sigma_dt_s: float = 0.05
    p_false: float = 0.002  # per sensor per second
    false_above_fraction: float = 0.0
    min_headway_s: float = 1.0
    min_strength_nT: float = 50.0
    class_mix: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    start_us: int = 1_700_000_000_000_000

    def __post_init__(self):
        if not 0 <= self.p_l <= 1:
            raise ScenarioError("p_l must lie in [0, 1]")
        if self.sigma_dt_s < 0:
            raise ScenarioError("sigma_dt_s must be nonnegative")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ScenarioError("speed range must satisfy 0 < min <= max")
        if self.motion not in ("CV", "CA"):
            raise ScenarioError("motion must be 'CV' or 'CA'")
        if self.accel_range[0] > self.accel_range[1]:
            raise ScenarioError("accel range reversed")
        if self.duration_s < 0 or self.arrival_rate_vps < 0 or self.p_false < 0:
            raise ScenarioError("duration, arrival rate and p_false must be nonnegative")
        if not 0 <= self.false_above_fraction <= 1:
            raise ScenarioError("false_above_fraction must lie in [0, 1]")
        if self.min_headway_s < 0:
            raise ScenarioError("min_headway_s must be nonnegative")
        if len(self.class_mix) != 3 or min(self.class_mix) < 0 or not math.isclose(sum(self.class_mix), 1.0):
            raise ScenarioError("class_mix must be three probabilities summing to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        d["accel_range"] = list(self.accel_range)
        d["class_mix"] = list(self.class_mix)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise ScenarioError("scenario must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(doc)
        if "layout" in kw:
            lay = kw["layout"]
            lk = {f.name for f in fields(LayoutConfig)}
            if not isinstance(lay, dict) or set(lay) - lk:
                raise ScenarioError(f"bad layout section: {lay!r}")
            kw["layout"] = LayoutConfig(**lay)
        for key in ("speed_range", "accel_range", "class_mix"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from exc


@dataclass(frozen=True)
class TruthSample:
    t_us: int
    chainage_m: float
    speed_mps: float
    sensor_id: str


@dataclass(frozen=True)
class TruthVehicle:
    vehicle_id: str
    lane_id: int
    vehicle_class: str
    samples: tuple[TruthSample, ...]
    accel_mps2: float = 0.0


@dataclass
class GroundTruth:
    labels: dict[tuple[str, int], str | None] = field(default_factory=dict)
    vehicles: dict[str, TruthVehicle] = field(default_factory=dict)

    @property
    def n_true_detections(self) -> int:
        return sum(v is not None for v in self.labels.values())


def magnetic_signature(vehicle_class: str, rng: np.random.Generator, min_strength_nT: float = 50.0):
    """Random unit field direction and a class-dependent strength (car < bus < truck)."""
    vec = rng.normal(size=3)
    norm = float(np.linalg.norm(vec))
    while norm < 1e-9:
        vec = rng.normal(size=3)
        norm = float(np.linalg.norm(vec))
    direction = tuple(float(c) for c in vec / norm)
    strength = _CLASS_STRENGTH[vehicle_class] * float(np.exp(rng.normal(0.0, 0.3)))
    return direction, max(strength, 2 * min_strength_nT)


def _unit(rng):
    vec = rng.normal(size=3)
    return tuple(float(c) for c in vec / np.linalg.norm(vec))


def passage_offsets(chainages, speed: float, accel: float, motion: str):
    """Relative passage times (us) and speeds at each sensor, from chainage[0].

    Stops early when a decelerating vehicle cannot reach the next sensor.
    """
    taus = [0]
    speeds = [speed]
    s = speed
    for a_m, b_m in zip(chainages, chainages[1:]):
        d = b_m - a_m
        try:
            if motion == "CV":
                t = predict_arrival_cv(taus[-1], s, d)
            else:
                t = predict_arrival_ca(taus[-1], s, accel, d)
                s = math.sqrt(max(s * s + 2 * accel * d, 0.0))
        except NoArrival:
            break
        taus.append(t)
        speeds.append(s)
    return taus, speeds


def simulate(sc: Scenario, layout: SensorLayout | None = None):
    """Generate ``(DetectionBatch, GroundTruth)``; bit-identical for equal scenarios."""
    layout = layout or build_layout(sc.layout)
    seeds = np.random.SeedSequence(sc.seed).spawn(3)
    rng_traffic, rng_sense, rng_false = (np.random.default_rng(s) for s in seeds)
    truth = GroundTruth()
    dets: dict[tuple[str, int], Detection] = {}
    headway_us = round(sc.min_headway_s * 1e6)

    def emit(det: Detection, label):
        key = det.key
        t = det.t_us
        while key in dets:
            t += 1
            key = (det.sensor_id, t)
        if t != det.t_us:
            det = Detection(det.sensor_id, t, det.direction, det.strength_nT)
        dets[key] = det
        truth.labels[key] = label

    vehicles = []
    for lane in layout.lanes:
        chain = [n.chainage_m for n in lane.sensors]
        last = [None] * len(chain)
        t = 0.0
        n = 0
        while sc.arrival_rate_vps > 0:
            t += rng_traffic.exponential(1 / sc.arrival_rate_vps)
            if t >= sc.duration_s:
                break
            speed = float(rng_traffic.uniform(*sc.speed_range))
            accel = float(rng_traffic.uniform(*sc.accel_range)) if sc.motion == "CA" else 0.0
            vclass = VEHICLE_CLASSES[int(rng_traffic.choice(3, p=sc.class_mix))]
            taus, speeds = passage_offsets(chain, speed, accel, sc.motion)
            t0 = sc.start_us + round(t * 1e6)
            for k, tau in enumerate(taus):
                if last[k] is not None:
                    t0 = max(t0, last[k] + headway_us - tau)
            for k, tau in enumerate(taus):
                last[k] = t0 + tau
            vid = f"T{lane.lane_id}-{n:05d}"
            n += 1
            samples = tuple(
                TruthSample(t0 + tau, lane.sensors[k].chainage_m, speeds[k], lane.sensors[k].sensor_id)
                for k, tau in enumerate(taus)
            )
            vehicles.append(TruthVehicle(vid, lane.lane_id, vclass, samples, accel))
            truth.vehicles[vid] = vehicles[-1]

    for veh in vehicles:
        for smp in veh.samples:
            if rng_sense.random() < sc.p_l:
                continue
            jitter = round(rng_sense.normal(0.0, sc.sigma_dt_s) * 1e6) if sc.sigma_dt_s > 0 else 0
            direction, strength = magnetic_signature(veh.vehicle_class, rng_sense, sc.min_strength_nT)
            emit(Detection(smp.sensor_id, smp.t_us + jitter, direction, strength), veh.vehicle_id)

    if sc.p_false > 0:
        for sid in layout.sensor_ids:
            for _ in range(int(rng_false.poisson(sc.p_false * sc.duration_s))):
                t_us = sc.start_us + int(rng_false.integers(0, max(round(sc.duration_s * 1e6), 1)))
                if rng_false.random() < sc.false_above_fraction:
                    strength = float(rng_false.uniform(sc.min_strength_nT, 2 * sc.min_strength_nT))
                else:
                    strength = float(rng_false.uniform(0.0, sc.min_strength_nT))
                emit(Detection(sid, t_us, _unit(rng_false), strength), None)

    batch = DetectionBatch.from_detections(dets.values())
    return batch, truth


def export(batch: DetectionBatch, truth: GroundTruth, events_path, truth_path, vehicles_path=None) -> None:
    """Write events JSONL, truth-label JSONL and (optionally) true trajectories JSONL."""
    ordered = batch.all()
    write_detections(ordered, events_path)
    with open(truth_path, "w", encoding="utf-8") as fh:
        for key in sorted(truth.labels, key=lambda k: (k[1], k[0])):
            sid, t_us = key
            fh.write(json.dumps({"sensor_id": sid, "t_us": t_us, "vehicle_id": truth.labels[key]}) + "\n")
    if vehicles_path is not None:
        with open(vehicles_path, "w", encoding="utf-8") as fh:
            for vid in sorted(truth.vehicles):
                v = truth.vehicles[vid]
                fh.write(
                    json.dumps(
                        {
                            "vehicle_id": v.vehicle_id,
                            "lane_id": v.lane_id,
                            "vehicle_class": v.vehicle_class,
                            "accel_mps2": v.accel_mps2,
                            "samples": [asdict(s) for s in v.samples],
                        }
                    )
                    + "\n"
                )


def read_truth(truth_path, vehicles_path=None) -> GroundTruth:
    truth = GroundTruth()
    with open(truth_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                truth.labels[(doc["sensor_id"], doc["t_us"])] = doc["vehicle_id"]
    if vehicles_path is not None and Path(vehicles_path).exists():
        with open(vehicles_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                doc = json.loads(line)
                samples = tuple(TruthSample(**s) for s in doc["samples"])
                truth.vehicles[doc["vehicle_id"]] = TruthVehicle(
                    doc["vehicle_id"], doc["lane_id"], doc["vehicle_class"], samples, doc.get("accel_mps2", 0.0)
                )
    return truth


def import_events(events_path) -> DetectionBatch:
    return DetectionBatch.from_detections(read_detections(events_path))
