"""Scoring reconstructed tracks against simulator ground truth."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association import VehicleTrack
from .sim import GroundTruth

log = logging.getLogger(__name__)

METRIC_DEFINITION = (
    "detection-level track accuracy: predicted tracks are mapped one-to-one to true "
    "vehicles by maximum shared-detection overlap; accuracy = detections lying on the "
    "track mapped to their true vehicle / (true detections + absorbed false detections)"
)


class EvaluationError(ValueError):
    pass


@dataclass
class AccuracyReport:
    track_accuracy: float
    n_truth_vehicles: int
    n_pred_vehicles: int
    id_swaps: int
    n_true_detections: int
    n_correct: int
    n_false_absorbed: int
    mean_abs_speed_error_mps: float | None = None
    max_abs_speed_error_mps: float | None = None
    per_vehicle: list[dict] = field(default_factory=list)
    metric: str = METRIC_DEFINITION

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path) -> None:
        cols = ["vehicle_id", "n_detections", "n_correct", "n_tracks", "mapped_track"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.per_vehicle:
                w.writerow({c: row.get(c) for c in cols})


def _labels_of(pred, truth: GroundTruth):
    out = []
    for tr in pred:
        labs = []
        for p in tr.detections():
            key = (p.sensor_id, p.t_us)
            if key not in truth.labels:
                log.error("track %s point %s not in ground truth", tr.vehicle_id, key)
                raise EvaluationError(f"track {tr.vehicle_id}: detection {key} absent from truth")
            labs.append(truth.labels[key])
        out.append(labs)
    return out


def match_tracks(pred: list[VehicleTrack], truth: GroundTruth):
    """One-to-one track -> true vehicle mapping maximising shared detections."""
    labels = _labels_of(pred, truth)
    vids = sorted({v for v in truth.labels.values() if v is not None})
    col = {v: j for j, v in enumerate(vids)}
    overlap = np.zeros((len(pred), len(vids)))
    for i, labs in enumerate(labels):
        for v, c in Counter(l for l in labs if l is not None).items():
            overlap[i, col[v]] = c
    mapping: dict[int, str] = {}
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        for r, c in zip(rows, cols):
            if overlap[r, c] > 0:
                mapping[int(r)] = vids[c]
    return mapping, labels, vids


def track_accuracy(pred: list[VehicleTrack], truth: GroundTruth) -> AccuracyReport:
    mapping, labels, vids = match_tracks(pred, truth)
    n_true = truth.n_true_detections
    correct = 0
    absorbed_false = 0
    per_true = defaultdict(lambda: {"n_correct": 0, "tracks": set()})
    for i, labs in enumerate(labels):
        owner = mapping.get(i)
        for lab in labs:
            if lab is None:
                absorbed_false += 1
                continue
            per_true[lab]["tracks"].add(pred[i].vehicle_id)
            if lab == owner:
                correct += 1
                per_true[lab]["n_correct"] += 1
    n_by_vehicle = Counter(v for v in truth.labels.values() if v is not None)
    swaps = sum(1 for v in per_true.values() if len(v["tracks"]) >= 2)
    owner_track = {vid: pred[i].vehicle_id for i, vid in mapping.items()}
    per_vehicle = [
        {
            "vehicle_id": vid,
            "n_detections": n_by_vehicle[vid],
            "n_correct": per_true[vid]["n_correct"] if vid in per_true else 0,
            "n_tracks": len(per_true[vid]["tracks"]) if vid in per_true else 0,
            "mapped_track": owner_track.get(vid),
        }
        for vid in vids
    ]
    denom = n_true + absorbed_false
    acc = correct / denom if denom else 1.0
    return AccuracyReport(
        track_accuracy=acc,
        n_truth_vehicles=len(vids),
        n_pred_vehicles=len(pred),
        id_swaps=swaps,
        n_true_detections=n_true,
        n_correct=correct,
        n_false_absorbed=absorbed_false,
        per_vehicle=per_vehicle,
    )


def speed_error(pred: list[VehicleTrack], truth: GroundTruth, skip_points: int = 0):
    """Mean and max |estimated - true| speed over mapped tracks' detection points.

    The first ``skip_points`` detection points of each track are ignored
    (filter warm-up).
    """
    if not pred:
        raise EvaluationError("no predicted tracks to compare")
    mapping, _, _ = match_tracks(pred, truth)
    errs = []
    for i, vid in mapping.items():
        veh = truth.vehicles.get(vid)
        if veh is None:
            raise EvaluationError(f"no true trajectory for vehicle {vid}")
        ts = np.array([s.t_us for s in veh.samples], dtype=float)
        vs = np.array([s.speed_mps for s in veh.samples])
        for p in pred[i].detections()[skip_points:]:
            errs.append(abs(p.speed_mps - float(np.interp(p.t_us, ts, vs))))
    if not errs:
        raise EvaluationError("no matched track points to compare")
    return float(np.mean(errs)), float(np.max(errs))


def evaluate(pred: list[VehicleTrack], truth: GroundTruth, skip_points: int = 0) -> AccuracyReport:
    rep = track_accuracy(pred, truth)
    if truth.vehicles and pred:
        try:
            rep.mean_abs_speed_error_mps, rep.max_abs_speed_error_mps = speed_error(pred, truth, skip_points)
        except EvaluationError:
            pass
    return rep
